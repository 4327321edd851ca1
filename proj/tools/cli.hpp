#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace halo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the `halo` binary and the in-process CLI tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// One verification check: measured value against its bound.
struct CheckResult {
  std::string suite;
  std::string name;
  double value = 0;
  double tolerance = 0;
  bool passed = false;
  std::string note;
};

struct VerifyOptions {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string inject_fault;  // "", "mask"
};

/// Throws ConfigError for an unknown suite.
std::vector<CheckResult> run_verify(const VerifyOptions& opts);
const std::vector<std::string>& suite_names();

}  // namespace halo::cli
