#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace visemalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;    // missing/malformed input, bad flag values
inline constexpr int kExitNumeric = 3;  // NaN/Inf in parameters or gradients

/// Runs one `visemalign` invocation. args excludes the program name.
/// Normal output goes to `out`, warnings and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace visemalign::cli
