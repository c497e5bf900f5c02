#pragma once

// Stacking of episode traces into the training matrix, z-score normalization,
// episode-level train/validation/test splitting, and the binary dataset format.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fvb/ewh_sim.hpp"

namespace fvb {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EpisodeSpan {
    std::int64_t episode_id = 0;
    std::size_t start_row = 0;
    std::size_t end_row = 0;  // exclusive

    std::size_t rows() const { return end_row - start_row; }
    bool operator==(const EpisodeSpan&) const = default;
};

struct TraceMatrix {
    RowMatrix data;
    std::vector<EpisodeSpan> episodes;

    std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(data.cols()); }
    const EpisodeSpan& episode(std::int64_t id) const;
    /// Row indices of the given episodes, in matrix order.
    std::vector<std::size_t> rows_of(std::span<const std::int64_t> episode_ids) const;
    void validate() const;
};

struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;  // population standard deviation; 1 for constant columns

    std::size_t cols() const { return static_cast<std::size_t>(mean.size()); }
};

struct SplitPlan {
    std::vector<std::int64_t> test_episode_ids;
    std::vector<std::int64_t> train_episode_ids;  // fold_assignments is parallel to this
    std::vector<int> fold_assignments;
    int n_folds = 10;

    std::vector<std::int64_t> fold_episodes(int fold) const;
    /// All non-test episodes outside `fold`.
    std::vector<std::int64_t> training_episodes(int fold) const;
    bool operator==(const SplitPlan&) const = default;
};

/// One row per valid time step: [T_1..T_N, setpoint_1..setpoint_N]. Episodes keep
/// their index in `episodes` as id and contribute rows [0, truncation_index).
TraceMatrix stack_traces(std::span<const EnsembleTrace> episodes);

/// Column statistics over the given rows (all rows when `rows` is empty).
NormStats compute_norm_stats(const TraceMatrix& m, std::span<const std::size_t> rows = {});
TraceMatrix apply_normalization(const TraceMatrix& m, const NormStats& stats);
RowMatrix denormalize(const RowMatrix& normalized, const NormStats& stats);

/// Column-wise z-score with statistics computed over the whole matrix.
std::pair<TraceMatrix, NormStats> normalize(const TraceMatrix& m);

/// Episode-level split: round(test_fraction * n) episodes go to test, the rest are
/// dealt round-robin into n_folds folds after a seeded shuffle.
SplitPlan split(std::span<const std::int64_t> episode_ids, double test_fraction, int n_folds, std::uint64_t seed);

/// "FVB1" | u64 rows | u64 cols | rows*cols f64, all little-endian.
void save_matrix(const std::filesystem::path& path, const RowMatrix& m);
RowMatrix load_matrix(const std::filesystem::path& path);

}  // namespace fvb
