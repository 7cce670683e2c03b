#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sammix/config.hpp"
#include "sammix/metrics.hpp"

namespace sammix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point without the program name; output goes to the given streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Table-style row label: "SAM-Mix-50", "SAM-PP-5", "CLS-0".
std::string cell_name(train::Mode mode, std::size_t n_labeled);

struct RunPaths {
    std::filesystem::path train, val, test;
    std::filesystem::path cross_test; // empty when absent
};

/// Supervision split, training and test evaluation for one seed, written under `dir`.
/// A directory holding a finished run is reused without training.
std::vector<metrics::EvalReport> run_single(const ExperimentConfig& config, const RunPaths& paths,
                                            const std::filesystem::path& dir, const std::string& model_name,
                                            std::ostream& log);

struct CellResult {
    std::string name;
    std::vector<metrics::EvalReport> reports;
    std::vector<std::string> errors;
};

/// Every mode x n_labeled x seed cell, sequentially; failures are recorded and the matrix continues.
std::vector<CellResult> experiment_matrix(const ExperimentConfig& config, const RunPaths& paths,
                                          const std::filesystem::path& out_dir, std::ostream& log);

} // namespace sammix::cli
