#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bimix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one command line (without the program name). Normal output goes to
/// `out`; failures print a single `error: <kind>: <message>` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bimix::cli
