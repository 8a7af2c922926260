#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gazeswap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (args exclude the program name). Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// SHA-256 over every regular file under `root`, in sorted relative-path order,
/// with each path mixed into the digest.
std::string directory_hash(const std::string& root);

}  // namespace gazeswap
