#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "asot/types.hpp"

namespace asot::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct BenchRow {
  Index n_frames = 0;
  Index n_actions = 0;
  double ms_per_iter = 0.0;
  double ms_total = 0.0;
};

/// Times full solves on random costs; reports the best of `repeats` runs.
std::vector<BenchRow> run_bench(const std::vector<Index>& sizes, Index n_actions, int n_iter, int repeats,
                                std::uint64_t seed);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Horizontal color barcode, one row per label sequence.
std::string barcode_svg(const std::vector<std::vector<int>>& rows, const std::vector<std::string>& names);

}  // namespace asot::cli
