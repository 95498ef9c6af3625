#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tango::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kData = 3;
inline constexpr int kNumeric = 4;

// Subcommands: train, eval, synth, sinkhorn, report. The first line written
// to `out` is the resolved configuration as JSON.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);
int run(int argc, char** argv);

}  // namespace tango::cli
