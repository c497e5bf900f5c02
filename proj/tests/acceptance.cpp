// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero when any
// criterion fails. Pipeline runs go to <tmp>/fvb_acceptance.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fvb/config.hpp"
#include "fvb/ewh_sim.hpp"
#include "fvb/io.hpp"
#include "fvb/moments.hpp"
#include "fvb/vae.hpp"
#include "fvb/vb_core.hpp"
#include "fvb/vb_ident.hpp"
#include "support.hpp"

using namespace fvb;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

std::vector<int> g_selected;

bool selected(int id) { return g_selected.empty() || std::find(g_selected.begin(), g_selected.end(), id) != g_selected.end(); }

void report(int id, const std::string& name, const Outcome& o) {
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    g_failures += !o.pass;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

template <class F>
void run(int id, const std::string& name, F&& check) {
    if (!selected(id)) return;
    try {
        report(id, name, check());
    } catch (const std::exception& e) {
        report(id, name, {false, std::string("exception: ") + e.what()});
    }
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string("\"") + FVB_CLI_PATH + "\" " + args + " >/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------
// 1, 2: moment formulas against sampling.

struct RandomNet {
    EncoderWeights w;
    GaussianMoments x;
};

RandomNet random_net(Rng& rng, bool second_moment_form) {
    std::uniform_int_distribution<int> dim(1, 8);
    const int d = dim(rng), h1 = dim(rng), h2 = dim(rng), h3 = dim(rng);
    RandomNet n;
    n.w = testing::random_encoder(d, h1, h2, h3, rng, !second_moment_form);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd mu(d);
    for (int i = 0; i < d; ++i) mu(i) = g(rng);
    n.x = {mu, testing::random_spd(d, 0.05, 2.0, rng)};
    if (second_moment_form) {
        n.w = centered_at(n.w, mu);
    } else {
        for (int j = 0; j < h3; ++j) n.w.b3(j) = 0.5 * g(rng);
    }
    return n;
}

Outcome first_moment_fidelity() {
    Rng rng(101);
    int ok = 0;
    const auto t0 = Clock::now();
    for (int t = 0; t < 100; ++t) {
        const auto n = random_net(rng, false);
        const auto y = propagate_to_y(n.x, n.w, PropagationMode::Exact);
        const double e = encoder_first_moment(n.w, y);
        const auto mc = mc_oracle(n.w, n.x, 1'000'000, 1000 + static_cast<std::uint64_t>(t));
        ok += std::abs(e - mc.mean) <= 3.0 * mc.mean_se + 1e-12 * (1.0 + std::abs(e));
    }
    const double secs = seconds_since(t0);
    return {ok >= 97 && secs < 120.0, fmt("%d/100 within 3 SE (need >= 97), %.1f s (limit 120 s)", ok, secs)};
}

Outcome second_moment_fidelity() {
    Rng rng(202);
    int ok = 0;
    const auto t0 = Clock::now();
    for (int t = 0; t < 100; ++t) {
        const auto n = random_net(rng, true);
        const auto y = propagate_to_y(n.x, n.w, PropagationMode::Exact);
        const double e = encoder_second_moment(n.w, y);
        const auto mc = mc_oracle(n.w, n.x, 1'000'000, 2000 + static_cast<std::uint64_t>(t));
        ok += std::abs(e - mc.second_moment) <= 3.0 * mc.second_moment_se + 1e-12 * (1.0 + std::abs(e));
    }
    const double secs = seconds_since(t0);
    return {ok >= 97 && secs < 120.0, fmt("%d/100 within 3 SE (need >= 97), %.1f s (limit 120 s)", ok, secs)};
}

// ---------------------------------------------------------------------------
// 3: KL closed form against a sampling estimate of E_q[log q - log p].

Outcome kl_fidelity() {
    Rng rng(303);
    std::uniform_int_distribution<int> dim(1, 8);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const int k = dim(rng);
        std::vector<double> mu(k), var(k);
        for (int i = 0; i < k; ++i) {
            mu[i] = u(rng);
            var[i] = std::exp(u(rng));
        }
        const double kl = kl_diag_gaussian(mu, var, k);
        const int n = 1'000'000;
        double sum = 0.0;
        for (int s = 0; s < n; ++s) {
            double lr = 0.0;
            for (int i = 0; i < k; ++i) {
                const double e = g(rng);
                const double z = mu[i] + std::sqrt(var[i]) * e;
                lr += -0.5 * e * e - 0.5 * std::log(var[i]) + 0.5 * z * z;
            }
            sum += lr;
        }
        worst = std::max(worst, std::abs(sum / n - kl) / kl);
    }
    return {worst < 0.01, fmt("max relative deviation %.2e over 20 Gaussians (limit 1e-2)", worst)};
}

// ---------------------------------------------------------------------------
// 4: analytic ELBO gradient against central differences, every coordinate.

Outcome gradient_fidelity() {
    Rng rng(404);
    std::uniform_int_distribution<int> dim(2, 10);
    std::uniform_real_distribution<double> sd(0.3, 1.5), pert(-0.3, 0.3);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    Eigen::Index coords = 0;
    for (int t = 0; t < 20; ++t) {
        const VaeArch arch{dim(rng), dim(rng), dim(rng), dim(rng)};
        auto p = VaeParams::init(arch, sd(rng), 4000 + static_cast<std::uint64_t>(t));
        for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta(i) += pert(rng);
        RowMatrix batch(4, arch.input_dim);
        for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = g(rng);
        std::vector<double> eps(4);
        for (auto& e : eps) e = g(rng);

        const auto grad = elbo_grad(p, batch, eps).grad;
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < p.theta.size(); ++i) {
            const double keep = p.theta(i);
            p.theta(i) = keep + h;
            const double fp = elbo(p, batch, eps).total;
            p.theta(i) = keep - h;
            const double fm = elbo(p, batch, eps).total;
            p.theta(i) = keep;
            const double fd = (fp - fm) / (2.0 * h);
            // Relative to the larger magnitude, floored at 1e-3 so exactly-zero
            // gradients (inactive rectifiers) compare absolutely.
            const double denom = std::max({std::abs(fd), std::abs(grad(i)), 1e-3});
            worst = std::max(worst, std::abs(fd - grad(i)) / denom);
        }
        coords += p.theta.size();
    }
    return {worst < 1e-5, fmt("max relative error %.2e over 20 points, %lld coordinates (limit 1e-5)", worst,
                              static_cast<long long>(coords))};
}

// ---------------------------------------------------------------------------
// 5, 6, 8, 11, 12: desk-scale pipeline runs.

const fs::path kRuns = fs::temp_directory_path() / "fvb_acceptance";

struct DeskRun {
    fs::path dir;
    bool ok = false;
    double seconds = 0.0;
    std::string failed_step;
};

DeskRun desk_run(std::uint64_t seed, const std::string& tag, int workers) {
    DeskRun r;
    r.dir = kRuns / tag;
    fs::remove_all(r.dir);
    const std::string common =
        " --seed " + std::to_string(seed) + " --workers " + std::to_string(workers) + " --out \"" + r.dir.string() + "\"";
    const auto t0 = Clock::now();
    for (const char* step : {"simulate", "build-dataset", "train", "identify"}) {
        if (cli(std::string(step) + common) != 0) {
            r.failed_step = step;
            r.seconds = seconds_since(t0);
            return r;
        }
    }
    r.seconds = seconds_since(t0);
    r.ok = true;
    return r;
}

// Recomputes coverage from the sample list instead of trusting the stored field.
int ci_violations(const Json& parameters, int& checked) {
    int bad = 0;
    for (const auto& [name, p] : parameters.items()) {
        ++checked;
        const double lo = p.at("ci_lo").get<double>(), hi = p.at("ci_hi").get<double>();
        const double mode = p.at("mode").get<double>(), eps = p.at("epsilon").get<double>();
        const auto samples = p.at("samples").get<std::vector<double>>();
        std::size_t in = 0;
        for (double s : samples) in += s >= lo && s <= hi;
        const bool ok = !samples.empty() && lo <= mode && mode <= hi &&
                        static_cast<double>(in) >= (1.0 - eps) * static_cast<double>(samples.size());
        bad += !ok;
    }
    return bad;
}

int ci_violations(const IdentReport& r, int& checked) { return ci_violations(report_to_json(r).at("parameters"), checked); }

Outcome reconstruction_quality(const DeskRun& run) {
    if (!run.ok) return {false, "desk run failed at " + run.failed_step};
    std::stringstream in(slurp(run.dir / "reconstruction_error.csv"));
    std::string line;
    std::getline(in, line);
    double worst_max = 0.0, worst_mean = 0.0;
    int devices = 0;
    while (std::getline(in, line)) {
        double max_abs = 0.0, mean_abs = 0.0;
        int dev = 0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &dev, &max_abs, &mean_abs) != 3) continue;
        worst_max = std::max(worst_max, max_abs);
        worst_mean = std::max(worst_mean, mean_abs);
        ++devices;
    }
    return {devices == 20 && worst_max < 1.0 && worst_mean < 0.3,
            fmt("%d devices on held-out test episodes: max error %.4f degF (limit 1.0), worst per-device mean "
                "%.4f degF (limit 0.3)",
                devices, worst_max, worst_mean)};
}

// ---------------------------------------------------------------------------
// 7: recovery of a known battery from synthetic traces.

struct SyntheticTruth {
    VBParams vb{40.0, 1.5, 20.0, 60.0, -250.0, 150.0};
    double jitter = 0.01;
    int episodes = 200;
    double dt = 10.0;
    std::size_t steps = 1440;  // 4 h
    double latent_slope = -0.05, latent_offset = 1.3, latent_noise = 0.005;
    double power_tol = 0.5;
    double probe_duration = 60.0;
};

// Episodes follow a sinusoid of growing amplitude around the holding input until an
// energy limit is hit. The latent is an affine image of the state plus noise; power
// limits come from the one-sided search on each episode's own battery.
IdentReport synthetic_identify(const SyntheticTruth& truth, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x5e7}));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<EpisodeSeries> eps;
    std::vector<LatentTrajectory> trajs;
    std::vector<std::vector<double>> energies;
    std::vector<double> pm, pp;
    for (int e = 0; e < truth.episodes; ++e) {
        VBParams p = truth.vb;
        for (double* v : {&p.x0, &p.a, &p.c1, &p.c2, &p.p_minus, &p.p_plus}) *v *= 1.0 + truth.jitter * g(rng);
        SignalSeries u{truth.dt, std::vector<double>(truth.steps)};
        const double period = 3600.0 * (1.5 + u01(rng));
        const double phase = 2.0 * M_PI * u01(rng);
        const double hold = -p.a * p.x0;
        for (std::size_t k = 0; k < truth.steps; ++k) {
            const double t = static_cast<double>(k) * truth.dt;
            const double amp = 150.0 * static_cast<double>(k) / static_cast<double>(truth.steps);
            u.values[k] = hold + amp * std::sin(2.0 * M_PI * t / period + phase);
        }
        const auto sim = vb_simulate(p, u);
        const std::size_t n = sim.trajectory.size() == truth.steps + 1 ? truth.steps : sim.trajectory.size();
        std::vector<double> x(sim.trajectory.begin(), sim.trajectory.begin() + static_cast<std::ptrdiff_t>(n));
        u.values.resize(n);
        LatentTrajectory tr;
        tr.dt = truth.dt;
        tr.episode_id = e;
        for (double v : x) tr.mu_z.push_back(truth.latent_slope * v + truth.latent_offset + truth.latent_noise * g(rng));
        tr.sigma_z.assign(n, truth.latent_noise);
        trajs.push_back(tr);
        energies.push_back(x);
        eps.push_back({tr, u});

        auto probe = [&](double power) {
            const auto steps = static_cast<std::size_t>(truth.probe_duration / truth.dt);
            return vb_simulate(p, SignalSeries{truth.dt, std::vector<double>(steps, power)}).feasible;
        };
        pp.push_back(one_sided_search(probe, truth.power_tol, 1e5));
        pm.push_back(-one_sided_search([&](double m) { return probe(-m); }, truth.power_tol, 1e5));
    }
    const auto calib = calibrate_latent(trajs, energies);
    const auto samples = collect_param_samples(eps, calib, pm, pp);
    std::vector<ParamDistribution> dists;
    for (std::size_t i = 0; i < kParamNames.size(); ++i) dists.push_back(kde_mode_ci(samples[i], 0.05, kParamNames[i]));
    return build_report(std::move(dists), Json{{"seed", seed}});
}

// ---------------------------------------------------------------------------
// 9: static abstractions against time-varying limits.

Outcome sufficiency_necessity() {
    Rng rng(909);
    int counter = 0, suff = 0, nec = 0;
    std::uniform_real_distribution<double> amp(20.0, 200.0), rate(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const auto e = testing::random_envelope(rng);
        const auto u = testing::random_signal(900, 1.0, amp(rng), rng);
        const auto lim = testing::sample_limits(e, u.values.size(), rng);
        const double a = rate(rng);
        const bool tv = vb_time_varying_simulate(0.0, a, lim, u).feasible;
        if (vb_simulate(static_sufficient(e, 0.0, a), u).feasible) {
            ++suff;
            counter += !tv;
        }
        if (!vb_simulate(static_necessary(e, 0.0, a), u).feasible) {
            ++nec;
            counter += tv;
        }
    }
    return {counter == 0, fmt("%d counterexamples in 200 trials (%d sufficient-feasible, %d necessary-infeasible cases)",
                              counter, suff, nec)};
}

// ---------------------------------------------------------------------------
// 10: power-limit boundary.

Outcome power_limit_boundary() {
    Rng rng(1010);
    std::uniform_int_distribution<int> devices(3, 15);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    int violations = 0;
    std::string first;
    for (int t = 0; t < 50; ++t) {
        Ensemble ens;
        const auto n = static_cast<std::size_t>(devices(rng));
        ens.devices = make_devices(EwhParams{}, n, 0.1, 1.0, derive_seed(1010, {static_cast<std::uint64_t>(t), 1}));
        ens.initial = synchronized_start(ens.devices, 0.2 + 0.6 * u01(rng), 0.02,
                                         derive_seed(1010, {static_cast<std::uint64_t>(t), 2}));
        const auto draws = RunConfig::default_water_draw();
        const auto& profile = draws.base_profile;
        const double mean_draw = std::accumulate(profile.begin(), profile.end(), 0.0) / static_cast<double>(profile.size());
        ens.baseline_initial = diversified_start(ens.devices, mean_draw,
                                                 derive_seed(1010, {static_cast<std::uint64_t>(t), 3}));
        PowerLimitRequest req;
        req.direction = t % 2 ? LimitDirection::Lower : LimitDirection::Upper;
        req.duration = std::round(60.0 + 540.0 * u01(rng));
        req.tol = 0.5;
        req.n_draw_samples = 1;
        req.seed = derive_seed(1010, {static_cast<std::uint64_t>(t), 4});
        const double p = power_limit_search(ens, draws, req).front();
        const auto prob = make_power_limit_problem(ens, draws, req, 0);
        const double sign = req.direction == LimitDirection::Upper ? 1.0 : -1.0;
        const bool ok = prob.feasible(sign * p) && !prob.feasible(sign * (p + req.tol));
        if (!ok && first.empty()) first = fmt(" (first: trial %d, P = %.3f kW)", t, p);
        violations += !ok;
    }
    return {violations == 0, fmt("%d violations in 50 trials%s", violations, first.c_str())};
}

Outcome synthetic_recovery(std::vector<IdentReport>& synthetic) {
    const SyntheticTruth truth;
    int ok = 0;
    std::string worst = "none";
    double worst_rel = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        synthetic.push_back(synthetic_identify(truth, seed));
        const auto& r = synthetic.back();
        bool pass = true;
        auto rel = [&](const char* name, double want) {
            const double d = std::abs(r.at(name).mode - want) / std::abs(want);
            if (d > worst_rel) {
                worst_rel = d;
                worst = name;
            }
            pass &= d <= 0.10;
        };
        rel("a", truth.vb.a);
        rel("c1", truth.vb.c1);
        rel("c2", truth.vb.c2);
        const double rated = EwhParams{}.rated_power;
        pass &= std::abs(r.at("p_minus").mode - truth.vb.p_minus) <= rated;
        pass &= std::abs(r.at("p_plus").mode - truth.vb.p_plus) <= rated;
        ok += pass;
    }
    const auto& r = synthetic.front();
    return {ok == 5, fmt("%d/5 seeds within tolerance; worst relative mode error %.3f (%s); seed 1 modes a=%.3f "
                         "c1=%.2f c2=%.2f p-=%.2f p+=%.2f (truth 1.5, 20, 60, -250, 150)",
                         ok, worst_rel, worst.c_str(), r.at("a").mode, r.at("c1").mode, r.at("c2").mode,
                         r.at("p_minus").mode, r.at("p_plus").mode)};
}

Outcome ci_contract(const std::vector<const DeskRun*>& desk, const std::vector<IdentReport>& synthetic) {
    int checked = 0, bad = 0, runs = 0;
    for (const auto* r : desk) {
        if (!r->ok) {
            ++bad;
            continue;
        }
        bad += ci_violations(read_json_file(r->dir / "report.json").at("parameters"), checked);
        ++runs;
    }
    for (const auto& r : synthetic) {
        bad += ci_violations(r, checked);
        ++runs;
    }
    return {bad == 0 && checked > 0, fmt("%d violations over %d distributions from %d runs", bad, checked, runs)};
}

Outcome state_activity(const std::vector<DeskRun>& desk) {
    int ok = 0;
    std::string values;
    for (const auto& r : desk) {
        double c = 0.0;
        if (r.ok) c = read_json_file(r.dir / "report.json").at("metadata").at("state_activity_correlation");
        values += fmt("%s%.3f", values.empty() ? "" : ", ", c);
        ok += r.ok && std::abs(c) >= 0.5;
    }
    return {ok >= 4, fmt("|r| >= 0.5 in %d/5 seeds (need 4): %s", ok, values.c_str())};
}

Outcome byte_identical(const DeskRun& a, const DeskRun& b) {
    if (!a.ok || !b.ok) return {false, "a pipeline run failed"};
    std::vector<fs::path> rel{"dataset.fvb", "dataset.json", "model.fvbm", "report.json"};
    for (const auto& e : fs::directory_iterator(a.dir / "traces")) rel.push_back(fs::path("traces") / e.path().filename());
    std::sort(rel.begin(), rel.end());
    std::string diff;
    for (const auto& f : rel)
        if (diff.empty() && (!fs::exists(b.dir / f) || slurp(a.dir / f) != slurp(b.dir / f)))
            diff = " (first difference: " + f.string() + ")";
    return {diff.empty(), fmt("%zu files compared between two seed-1 runs (all workers vs 1 worker)%s", rel.size(),
                              diff.c_str())};
}

}  // namespace

// Optional arguments select criteria by number; default is all twelve.
int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) g_selected.push_back(std::atoi(argv[i]));
    auto any = [](std::initializer_list<int> ids) {
        return std::any_of(ids.begin(), ids.end(), [](int id) { return selected(id); });
    };
    std::printf("fvb acceptance run\n");
    std::fflush(stdout);
    run(1, "first-moment formula vs sampling", first_moment_fidelity);
    run(2, "second-moment formula vs sampling", second_moment_fidelity);
    run(3, "KL closed form vs sampling", kl_fidelity);
    run(4, "ELBO gradient vs central differences", gradient_fidelity);

    std::vector<DeskRun> desk;
    if (any({5, 6, 8, 11, 12})) {
        fs::create_directories(kRuns);
        const int seeds = any({8, 11}) ? 5 : 1;
        for (int seed = 1; seed <= seeds; ++seed)
            desk.push_back(desk_run(static_cast<std::uint64_t>(seed), "seed" + std::to_string(seed), 0));
    }
    run(5, "desk-scale pipeline runtime", [&]() -> Outcome {
        const auto& r = desk.front();
        if (!r.ok) return {false, "failed at " + r.failed_step};
        return {r.seconds < 900.0,
                fmt("simulate+build-dataset+train(50 epochs)+identify, 20 devices x 20 signals x 900 s: %.1f s "
                    "(limit 900 s)",
                    r.seconds)};
    });
    run(6, "reconstruction error on held-out episodes", [&] { return reconstruction_quality(desk.front()); });

    std::vector<IdentReport> synthetic;
    run(7, "synthetic recovery of a known battery", [&] { return synthetic_recovery(synthetic); });
    if (selected(8) && !selected(7)) synthetic_recovery(synthetic);

    DeskRun repeat;
    if (any({8, 12})) repeat = desk_run(1, "seed1_repeat", 1);
    run(8, "confidence-interval contract", [&] {
        std::vector<const DeskRun*> all;
        for (const auto& r : desk) all.push_back(&r);
        all.push_back(&repeat);
        return ci_contract(all, synthetic);
    });
    run(9, "sufficient/necessary static abstractions", sufficiency_necessity);
    run(10, "power-limit boundary", power_limit_boundary);
    run(11, "latent state vs device activity", [&] { return state_activity(desk); });
    run(12, "byte-identical repeated run", [&] { return byte_identical(desk.front(), repeat); });

    std::printf("%s: %d criterion(s) failed\n", g_failures ? "FAILED" : "ALL PASSED", g_failures);
    return g_failures ? 1 : 0;
}
