#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace railsynth {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitRuntimeError = 2;

/// Runs one `railsynth` subcommand. `args[0]` is the program name. Results go
/// to `out`, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(const std::vector<std::string>& args);

/// `RAILSYNTH_JOBS` if set, else `flag` if positive, else the core count.
unsigned resolve_jobs(int flag);

} // namespace railsynth
