#pragma once

// Report plumbing shared by the command-line tools: content hashing for
// pairing outputs with their inputs, run manifests, and deterministic
// writers for structured reports and delimited data files.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include <json.hpp>

namespace dcroa::report {

// 64-bit FNV-1a, hex-encoded. Stable across platforms and good enough to
// pair a certificate with the network document it was produced from.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);  // throws on I/O failure

inline constexpr const char* tool_version = "1.0.0";

// Command, input paths with their content hashes, and the resolved options;
// embedded in every report so a run can be reproduced byte-for-byte.
nlohmann::json manifest(const std::string& command,
                        const std::vector<std::string>& input_paths,
                        const nlohmann::json& options);

void write_json(const std::string& path, const nlohmann::json& doc);

// Delimited text: one header line, then one line per row.
void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

nlohmann::json vector_json(const Eigen::VectorXd& v);

}  // namespace dcroa::report
