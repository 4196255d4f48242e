#include "dcroa/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dcroa::report {

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return content_hash(ss.str());
}

nlohmann::json manifest(const std::string& command,
                        const std::vector<std::string>& input_paths,
                        const nlohmann::json& options) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& p : input_paths)
    inputs.push_back({{"path", p}, {"hash", file_hash(p)}});
  return {{"command", command},
          {"inputs", inputs},
          {"options", options},
          {"version", tool_version}};
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (size_t k = 0; k < header.size(); ++k)
    out << (k ? "," : "") << header[k];
  out << "\n";
  char buf[32];
  for (const auto& row : rows) {
    for (size_t k = 0; k < row.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.12g", row[k]);
      out << (k ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace dcroa::report
