#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cgqr::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Flat `key = value` text; `#` starts a comment, blank lines are skipped.
/// Throws ConfigError on a line without '=' or a repeated key.
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Expands `--config <file>` into ordinary flags. Keys already given on the
/// command line are left alone, so a flag wins over the file and the file wins
/// over built-in defaults. Boolean values (true/false) toggle bare flags and
/// comma-separated `ablate` values repeat the flag.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

/// Number of worker threads: hardware concurrency, capped by CGQR_NUM_WORKERS.
int worker_count();

/// Entry point without the program name. Exit codes: 0 success, 1 validation
/// or usage error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cgqr::cli
