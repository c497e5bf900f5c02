#pragma once

// End-to-end commands behind the `fvb` executable. Every command reads and writes
// fixed file names inside a run directory:
//
//   traces/manifest.json, traces/episode_NNNN.csv   simulate
//   dataset.fvb, dataset.json                       build-dataset
//   model.fvbm, history.csv, checkpoints/           train
//   report.json, param_*.csv, reconstruction_*.csv,
//   state_activity.csv                              identify
//   summary.txt                                     report
//
// Outputs depend only on the configuration (never on worker count, wall time or
// the run directory path).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fvb/config.hpp"
#include "fvb/dataset.hpp"
#include "fvb/vb_ident.hpp"

namespace fvb {

struct EpisodeRun {
    EnsembleTrace trace;
    int signal = 0;
    int draw_sample = 0;
    double start_level = 0.0;
};

/// Baseline + dispatch for every (signal x draw sample) episode, in episode order.
std::vector<EpisodeRun> simulate_episodes(const RunConfig& cfg, const std::vector<EwhParams>& devices);

struct TraceSet {
    std::vector<EwhParams> devices;
    std::vector<EnsembleTrace> traces;
    Json manifest;
};

TraceSet load_traces(const std::filesystem::path& trace_dir);

struct DatasetBundle {
    TraceMatrix matrix;  // normalized
    NormStats stats;
    SplitPlan plan;
    Json sidecar;
};

DatasetBundle load_dataset(const std::filesystem::path& dir);

void cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir);
void cmd_build_dataset(const RunConfig& cfg, const std::filesystem::path& trace_dir,
                       const std::filesystem::path& out_dir);
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& out_dir, bool resume);
IdentReport cmd_identify(const RunConfig& cfg, const std::filesystem::path& model_path,
                         const std::filesystem::path& dataset_dir, const std::filesystem::path& trace_dir,
                         const std::filesystem::path& out_dir);
/// Human-readable summary of report.json; also written to summary.txt.
std::string cmd_report(const std::filesystem::path& run_dir);

}  // namespace fvb
