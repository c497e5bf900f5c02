#include "fvb/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fvb/error.hpp"
#include "fvb/rng.hpp"

namespace fvb {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
constexpr char kMatrixMagic[4] = {'F', 'V', 'B', '1'};
}

const EpisodeSpan& TraceMatrix::episode(std::int64_t id) const {
    for (const auto& e : episodes)
        if (e.episode_id == id) return e;
    throw DataError("TraceMatrix: unknown episode id " + std::to_string(id));
}

std::vector<std::size_t> TraceMatrix::rows_of(std::span<const std::int64_t> episode_ids) const {
    std::vector<std::size_t> out;
    for (const auto& e : episodes) {
        if (std::find(episode_ids.begin(), episode_ids.end(), e.episode_id) == episode_ids.end()) continue;
        for (std::size_t r = e.start_row; r < e.end_row; ++r) out.push_back(r);
    }
    return out;
}

void TraceMatrix::validate() const {
    std::size_t expect = 0;
    for (const auto& e : episodes) {
        if (e.start_row != expect || e.end_row < e.start_row)
            throw DataError("TraceMatrix: episode boundaries do not partition the rows");
        expect = e.end_row;
    }
    if (expect != rows()) throw DataError("TraceMatrix: episode boundaries do not cover every row");
}

std::vector<std::int64_t> SplitPlan::fold_episodes(int fold) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < train_episode_ids.size(); ++i)
        if (fold_assignments[i] == fold) out.push_back(train_episode_ids[i]);
    return out;
}

std::vector<std::int64_t> SplitPlan::training_episodes(int fold) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < train_episode_ids.size(); ++i)
        if (fold_assignments[i] != fold) out.push_back(train_episode_ids[i]);
    return out;
}

TraceMatrix stack_traces(std::span<const EnsembleTrace> episodes) {
    if (episodes.empty()) throw DataError("stack_traces: no episodes");
    const std::size_t n = episodes.front().n_devices;
    std::size_t rows = 0;
    for (const auto& e : episodes) {
        if (e.n_devices != n || e.setpoints.size() != n)
            throw DataError("stack_traces: episodes have different device counts");
        if (e.truncation_index > e.steps()) throw DataError("stack_traces: truncation index beyond trace length");
        rows += e.truncation_index;
    }
    TraceMatrix m;
    m.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(2 * n));
    std::size_t r = 0;
    for (std::size_t id = 0; id < episodes.size(); ++id) {
        const auto& e = episodes[id];
        m.episodes.push_back({static_cast<std::int64_t>(id), r, r + e.truncation_index});
        for (std::size_t k = 0; k < e.truncation_index; ++k, ++r) {
            for (std::size_t i = 0; i < n; ++i) {
                m.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = e.temperature(k, i);
                m.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n + i)) = e.setpoints[i];
            }
        }
    }
    return m;
}

NormStats compute_norm_stats(const TraceMatrix& m, std::span<const std::size_t> rows) {
    std::vector<std::size_t> all;
    if (rows.empty()) {
        all.resize(m.rows());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rows = all;
    }
    if (rows.size() < 2) throw DataError("normalize: need at least two rows");
    const auto cols = m.data.cols();
    NormStats s;
    s.mean = Eigen::VectorXd::Zero(cols);
    s.sd = Eigen::VectorXd::Zero(cols);
    const double count = static_cast<double>(rows.size());
    for (auto r : rows) s.mean += m.data.row(static_cast<Eigen::Index>(r)).transpose();
    s.mean /= count;
    for (auto r : rows) s.sd += (m.data.row(static_cast<Eigen::Index>(r)).transpose() - s.mean).array().square().matrix();
    s.sd = (s.sd / count).cwiseSqrt();
    for (Eigen::Index c = 0; c < cols; ++c) {
        // Constant columns (setpoints) are centred but not scaled.
        if (s.sd(c) <= 1e-12 * std::max(1.0, std::abs(s.mean(c)))) s.sd(c) = 1.0;
    }
    return s;
}

TraceMatrix apply_normalization(const TraceMatrix& m, const NormStats& stats) {
    if (stats.cols() != m.cols()) throw DataError("normalize: statistics width differs from matrix width");
    TraceMatrix out = m;
    out.data = ((m.data.rowwise() - stats.mean.transpose()).array().rowwise() / stats.sd.transpose().array()).matrix();
    return out;
}

RowMatrix denormalize(const RowMatrix& normalized, const NormStats& stats) {
    if (static_cast<std::size_t>(normalized.cols()) != stats.cols())
        throw DataError("denormalize: statistics width differs from matrix width");
    return ((normalized.array().rowwise() * stats.sd.transpose().array()).rowwise() + stats.mean.transpose().array())
        .matrix();
}

std::pair<TraceMatrix, NormStats> normalize(const TraceMatrix& m) {
    auto stats = compute_norm_stats(m);
    return {apply_normalization(m, stats), stats};
}

SplitPlan split(std::span<const std::int64_t> episode_ids, double test_fraction, int n_folds, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw UsageError("split: test fraction must lie in [0, 1)");
    if (n_folds < 1) throw UsageError("split: need at least one fold");
    const std::size_t n = episode_ids.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (static_cast<double>(n) < n_folds / (1.0 - test_fraction) || n - n_test < static_cast<std::size_t>(n_folds))
        throw UsageError("split: too few episodes for the requested folds (" + std::to_string(n) + ")");

    std::vector<std::int64_t> order(episode_ids.begin(), episode_ids.end());
    Rng rng(derive_seed(seed, {0x5b117ULL}));
    // Fisher-Yates with explicit index draws so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    SplitPlan plan;
    plan.n_folds = n_folds;
    plan.test_episode_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    plan.train_episode_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    plan.fold_assignments.resize(plan.train_episode_ids.size());
    for (std::size_t i = 0; i < plan.train_episode_ids.size(); ++i)
        plan.fold_assignments[i] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
    return plan;
}

void save_matrix(const std::filesystem::path& path, const RowMatrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
    out.write(kMatrixMagic, 4);
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!out) throw DataError("write failed: " + path.string());
}

RowMatrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset " + path.string());
    char magic[4];
    std::uint64_t rows = 0, cols = 0;
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMatrixMagic, 4) != 0) throw DataError(path.string() + ": not an FVB1 dataset");
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!in) throw DataError(path.string() + ": truncated header");
    const auto size = std::filesystem::file_size(path);
    if (size != 20 + rows * cols * sizeof(double)) throw DataError(path.string() + ": payload size mismatch");
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!in) throw DataError(path.string() + ": truncated payload");
    return m;
}

}  // namespace fvb
