#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <map>
#include <numeric>
#include <set>

#include "fvb/dataset.hpp"
#include "fvb/error.hpp"

using namespace fvb;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

EnsembleTrace make_trace(std::size_t n_dev, std::size_t steps, std::size_t valid, double base) {
    EnsembleTrace t;
    t.n_devices = n_dev;
    for (std::size_t i = 0; i < n_dev; ++i) t.setpoints.push_back(48.0 + static_cast<double>(i));
    for (std::size_t k = 0; k < steps; ++k) {
        for (std::size_t i = 0; i < n_dev; ++i) {
            t.temperatures.push_back(base + 0.1 * static_cast<double>(k) + static_cast<double>(i));
            t.on_off.push_back(0);
        }
        t.aggregate_power.push_back(0.0);
        t.regulation.push_back(0.0);
        t.baseline.push_back(0.0);
    }
    t.truncation_index = valid;
    return t;
}

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fvb_test_dataset_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("stacking keeps only valid rows and places setpoints after temperatures") {
    const std::vector<EnsembleTrace> eps{make_trace(3, 12, 10, 40.0), make_trace(3, 5, 5, 45.0)};
    const auto m = stack_traces(eps);
    CHECK(m.rows() == 15);
    CHECK(m.cols() == 6);
    REQUIRE(m.episodes.size() == 2);
    CHECK(m.episodes[0] == EpisodeSpan{0, 0, 10});
    CHECK(m.episodes[1] == EpisodeSpan{1, 10, 15});
    CHECK(m.data(11, 2) == Approx(45.0 + 0.1 + 2.0));
    CHECK(m.data(11, 5) == 50.0);
    m.validate();
}

TEST_CASE("an episode truncated at zero contributes no rows") {
    const std::vector<EnsembleTrace> eps{make_trace(2, 8, 0, 40.0), make_trace(2, 8, 8, 40.0)};
    const auto m = stack_traces(eps);
    CHECK(m.rows() == 8);
    CHECK(m.episodes[0].rows() == 0);
}

TEST_CASE("stacking rejects mixed device counts") {
    const std::vector<EnsembleTrace> eps{make_trace(2, 4, 4, 40.0), make_trace(3, 4, 4, 40.0)};
    CHECK_THROWS_AS(stack_traces(eps), DataError);
    CHECK_THROWS_AS(stack_traces(std::vector<EnsembleTrace>{}), DataError);
}

TEST_CASE("two-point z-score") {
    TraceMatrix m;
    m.data.resize(2, 1);
    m.data << 0.0, 2.0;
    m.episodes = {{0, 0, 2}};
    const auto [n, s] = normalize(m);
    CHECK(n.data(0, 0) == -1.0);
    CHECK(n.data(1, 0) == 1.0);
    CHECK(s.mean(0) == 1.0);
    CHECK(s.sd(0) == 1.0);
}

TEST_CASE("normalized columns have zero mean and unit population sd; round trip is exact") {
    const std::vector<EnsembleTrace> eps{make_trace(4, 30, 30, 40.0), make_trace(4, 20, 17, 44.0)};
    const auto m = stack_traces(eps);
    const auto [n, s] = normalize(m);
    for (Eigen::Index c = 0; c < n.data.cols(); ++c) {
        const double mean = n.data.col(c).mean();
        CHECK(std::abs(mean) < 1e-12);
        if (c < 4) {
            const double sd = std::sqrt((n.data.col(c).array() - mean).square().mean());
            CHECK(std::abs(sd - 1.0) < 1e-12);
        }
    }
    // Setpoint columns are constant across the whole matrix: centred, unit scale.
    CHECK(s.sd(4) == 1.0);
    CHECK(n.data.col(4).cwiseAbs().maxCoeff() == 0.0);
    const RowMatrix back = denormalize(n.data, s);
    CHECK(((back - m.data).cwiseAbs().array() / m.data.cwiseAbs().array()).maxCoeff() < 1e-12);
}

TEST_CASE("statistics can be restricted to a subset of rows") {
    const std::vector<EnsembleTrace> eps{make_trace(1, 4, 4, 0.0), make_trace(1, 4, 4, 100.0)};
    const auto m = stack_traces(eps);
    const std::vector<std::size_t> first{0, 1, 2, 3};
    const auto s = compute_norm_stats(m, first);
    CHECK(s.mean(0) == Approx(0.15));
    TraceMatrix one;
    one.data = RowMatrix::Zero(1, 2);
    CHECK_THROWS_AS(normalize(one), DataError);
}

TEST_CASE("split sizes for twenty episodes") {
    std::vector<std::int64_t> ids(20);
    std::iota(ids.begin(), ids.end(), 0);
    const auto plan = split(ids, 0.3, 10, 42);
    CHECK(plan.test_episode_ids.size() == 6);
    CHECK(plan.train_episode_ids.size() == 14);
    std::map<int, int> sizes;
    for (int f : plan.fold_assignments) ++sizes[f];
    std::vector<int> counts;
    for (auto& [f, c] : sizes) counts.push_back(c);
    std::sort(counts.rbegin(), counts.rend());
    CHECK(counts == std::vector<int>{2, 2, 2, 2, 1, 1, 1, 1, 1, 1});
}

TEST_CASE("split is deterministic, disjoint and exhaustive") {
    std::vector<std::int64_t> ids(37);
    std::iota(ids.begin(), ids.end(), 100);
    const auto a = split(ids, 0.3, 10, 7);
    CHECK(a == split(ids, 0.3, 10, 7));
    CHECK_FALSE(a == split(ids, 0.3, 10, 8));
    std::multiset<std::int64_t> seen(a.test_episode_ids.begin(), a.test_episode_ids.end());
    for (int f = 0; f < 10; ++f) {
        const auto fe = a.fold_episodes(f);
        seen.insert(fe.begin(), fe.end());
        const auto tr = a.training_episodes(f);
        for (auto e : fe) CHECK(std::find(tr.begin(), tr.end(), e) == tr.end());
        for (auto e : a.test_episode_ids) CHECK(std::find(tr.begin(), tr.end(), e) == tr.end());
    }
    CHECK(seen == std::multiset<std::int64_t>(ids.begin(), ids.end()));
}

TEST_CASE("split rejects too few episodes") {
    std::vector<std::int64_t> ids(12);
    std::iota(ids.begin(), ids.end(), 0);
    CHECK_THROWS_AS(split(ids, 0.3, 10, 1), UsageError);
}

TEST_CASE("matrix files round-trip bit-identically and reject corruption") {
    const auto dir = temp_dir("roundtrip");
    RowMatrix m(3, 4);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.1 * static_cast<double>(i) - 1.0 / 3.0;
    save_matrix(dir / "m.fvb", m);
    const auto back = load_matrix(dir / "m.fvb");
    REQUIRE(back.rows() == 3);
    REQUIRE(back.cols() == 4);
    CHECK(std::memcmp(back.data(), m.data(), sizeof(double) * 12) == 0);

    {
        std::ifstream in(dir / "m.fvb", std::ios::binary);
        char magic[4];
        in.read(magic, 4);
        CHECK(std::string(magic, 4) == "FVB1");
    }
    fs::resize_file(dir / "m.fvb", fs::file_size(dir / "m.fvb") - 8);
    CHECK_THROWS_AS(load_matrix(dir / "m.fvb"), DataError);
    {
        std::ofstream out(dir / "bad.fvb", std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_matrix(dir / "bad.fvb"), DataError);
    CHECK_THROWS_AS(load_matrix(dir / "missing.fvb"), DataError);
}
