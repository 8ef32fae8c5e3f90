#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lbea::cli {

enum ExitCode : int { ok = 0, usage_error = 1, check_failed = 2 };

/// Parses argv, runs one subcommand and writes its artifacts under --out-dir.
/// Human-readable progress goes to `out`, diagnostics and usage to `err`.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

/// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::string& path, const std::string& content);

/// %.17g formatting, "nan"/"inf" spelled out.
std::string format_double(double x);

}  // namespace lbea::cli
