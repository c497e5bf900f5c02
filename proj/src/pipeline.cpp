#include "fvb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "fvb/error.hpp"
#include "fvb/parallel.hpp"
#include "fvb/rng.hpp"

namespace fvb {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDrawStream = 0xd4a;
constexpr std::uint64_t kLevelStream = 0x1e7;
constexpr std::uint64_t kStartStream = 0x57a;
constexpr std::uint64_t kBaselineStream = 0xba5;
constexpr std::uint64_t kLimitStream = 0x11a;

std::string episode_file(std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "episode_%04zu.csv", id);
    return buf;
}

Json device_json(const EwhParams& p) {
    return {{"tank_volume", p.tank_volume}, {"rated_power", p.rated_power},
            {"ua", p.ua},                   {"efficiency", p.efficiency},
            {"setpoint", p.setpoint},       {"deadband_halfwidth", p.deadband_halfwidth},
            {"t_max", p.t_max},             {"t_inlet", p.t_inlet},
            {"t_ambient", p.t_ambient}};
}

EwhParams device_from(const Json& j) {
    EwhParams p;
    p.tank_volume = j.at("tank_volume").get<double>();
    p.rated_power = j.at("rated_power").get<double>();
    p.ua = j.at("ua").get<double>();
    p.efficiency = j.at("efficiency").get<double>();
    p.setpoint = j.at("setpoint").get<double>();
    p.deadband_halfwidth = j.at("deadband_halfwidth").get<double>();
    p.t_max = j.at("t_max").get<double>();
    p.t_inlet = j.at("t_inlet").get<double>();
    p.t_ambient = j.at("t_ambient").get<double>();
    p.validate();
    return p;
}

// Configuration as recorded in artifacts: run-location and parallelism knobs do not
// affect results and are left out so that outputs are path independent.
Json recorded_config(const RunConfig& cfg) {
    Json j = cfg.to_json();
    j.erase("out");
    j.erase("workers");
    return j;
}

std::uint64_t file_fnv(const fs::path& p) {
    const std::string s = read_text_file(p);
    return fnv1a64(std::as_bytes(std::span(s.data(), s.size())));
}

double mean_base_draw(const WaterDrawModel& m) {
    double s = 0.0;
    for (double v : m.base_profile) s += v;
    return s / 24.0;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::string text;
    for (const auto& l : lines) {
        text += l;
        text += '\n';
    }
    write_text_file(path, text);
}

std::string join(std::initializer_list<std::string> parts) {
    std::string s;
    for (const auto& p : parts) {
        if (!s.empty()) s += ',';
        s += p;
    }
    return s;
}

}  // namespace

std::vector<EpisodeRun> simulate_episodes(const RunConfig& cfg, const std::vector<EwhParams>& devices) {
    cfg.validate();
    double rated = 0.0;
    for (const auto& d : devices) rated += d.rated_power;
    const auto signals = regulation_signals(cfg, rated);
    const int per_signal = cfg.draw_samples_per_signal;
    std::vector<EpisodeRun> runs(signals.size() * static_cast<std::size_t>(per_signal));
    parallel_for(runs.size(), cfg.resolved_workers(), [&](std::size_t e) {
        auto& run = runs[e];
        run.signal = static_cast<int>(e / static_cast<std::size_t>(per_signal));
        run.draw_sample = static_cast<int>(e % static_cast<std::size_t>(per_signal));
        std::vector<std::vector<double>> draws;
        draws.reserve(devices.size());
        for (std::size_t i = 0; i < devices.size(); ++i)
            draws.push_back(
                water_draw_sample(cfg.water_draw, cfg.horizon_s, cfg.dt_s, derive_seed(cfg.seed, {kDrawStream, e, i})));
        Rng rng(derive_seed(cfg.seed, {kLevelStream, e}));
        std::uniform_real_distribution<double> level(cfg.ensemble.start_level_lo, cfg.ensemble.start_level_hi);
        run.start_level = level(rng);
        const auto initial =
            synchronized_start(devices, run.start_level, cfg.ensemble.start_spread, derive_seed(cfg.seed, {kStartStream, e}));
        const auto base_initial =
            diversified_start(devices, mean_base_draw(cfg.water_draw), derive_seed(cfg.seed, {kBaselineStream, e}));
        const auto baseline = baseline_simulate(devices, base_initial, draws, cfg.horizon_s, cfg.dt_s);
        run.trace = dispatch_track(devices, initial, draws, signals[static_cast<std::size_t>(run.signal)], baseline,
                                   cfg.dispatch);
    });
    return runs;
}

void cmd_simulate(const RunConfig& cfg, const fs::path& out_dir) {
    const auto devices = config_devices(cfg);
    const auto runs = simulate_episodes(cfg, devices);
    const fs::path dir = out_dir / "traces";
    fs::create_directories(dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.starts_with("episode_") && name.ends_with(".csv")) fs::remove(entry.path());
    }
    Json episodes = Json::array();
    for (std::size_t e = 0; e < runs.size(); ++e) {
        write_trace_csv(dir / episode_file(e), runs[e].trace);
        episodes.push_back({{"id", e},
                            {"file", episode_file(e)},
                            {"signal", runs[e].signal},
                            {"draw_sample", runs[e].draw_sample},
                            {"start_level", runs[e].start_level},
                            {"steps", runs[e].trace.steps()},
                            {"truncation_index", runs[e].trace.truncation_index}});
    }
    Json devs = Json::array();
    for (const auto& d : devices) devs.push_back(device_json(d));
    Json m;
    m["format"] = "fvb-traces-1";
    m["seed"] = cfg.seed;
    m["n_devices"] = devices.size();
    m["dt"] = cfg.dt_s;
    m["horizon"] = cfg.horizon_s;
    m["devices"] = devs;
    m["episodes"] = episodes;
    m["config"] = recorded_config(cfg);
    write_json_file(dir / "manifest.json", m);
}

TraceSet load_traces(const fs::path& trace_dir) {
    const fs::path mpath = trace_dir / "manifest.json";
    if (!fs::exists(mpath)) throw DataError("no trace manifest at " + mpath.string());
    TraceSet ts;
    ts.manifest = read_json_file(mpath);
    try {
        for (const auto& d : ts.manifest.at("devices")) ts.devices.push_back(device_from(d));
        if (ts.devices.empty()) throw DataError(mpath.string() + ": no devices");
        std::vector<double> setpoints;
        for (const auto& d : ts.devices) setpoints.push_back(d.setpoint);
        const auto& eps = ts.manifest.at("episodes");
        if (eps.empty()) throw DataError(mpath.string() + ": no episodes");
        for (const auto& e : eps) {
            const fs::path f = trace_dir / e.at("file").get<std::string>();
            if (!fs::exists(f)) throw DataError("missing trace file " + f.string());
            ts.traces.push_back(read_trace_csv(f, setpoints, e.at("truncation_index").get<std::size_t>()));
        }
    } catch (const Json::exception& e) {
        throw DataError(mpath.string() + ": malformed manifest: " + e.what());
    }
    return ts;
}

void cmd_build_dataset(const RunConfig& cfg, const fs::path& trace_dir, const fs::path& out_dir) {
    const auto ts = load_traces(trace_dir);
    const TraceMatrix raw = stack_traces(ts.traces);
    std::vector<std::int64_t> ids;
    for (const auto& sp : raw.episodes)
        if (sp.rows() > 0) ids.push_back(sp.episode_id);
    const SplitPlan plan =
        split(ids, cfg.dataset.test_fraction, cfg.dataset.n_folds, derive_seed(cfg.seed, {0x5b117ULL}));
    // Statistics come from the non-test episodes only, so nothing about the test
    // set leaks into training.
    const auto train_rows = raw.rows_of(plan.train_episode_ids);
    const NormStats stats = compute_norm_stats(raw, train_rows);
    const TraceMatrix norm = apply_normalization(raw, stats);

    fs::create_directories(out_dir);
    save_matrix(out_dir / "dataset.fvb", norm.data);
    Json spans = Json::array();
    for (const auto& sp : norm.episodes) spans.push_back({sp.episode_id, sp.start_row, sp.end_row});
    Json folds = Json::array();
    for (std::size_t i = 0; i < plan.train_episode_ids.size(); ++i)
        folds.push_back({plan.train_episode_ids[i], plan.fold_assignments[i]});
    Json j;
    j["format"] = "fvb-dataset-1";
    j["rows"] = norm.rows();
    j["cols"] = norm.cols();
    j["n_devices"] = ts.devices.size();
    j["dataset_fnv1a64"] = hex64(file_fnv(out_dir / "dataset.fvb"));
    j["traces_manifest_fnv1a64"] = hex64(file_fnv(trace_dir / "manifest.json"));
    j["normalization"] = {{"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
                          {"sd", std::vector<double>(stats.sd.data(), stats.sd.data() + stats.sd.size())}};
    j["episodes"] = spans;
    j["split"] = {{"seed", cfg.seed},
                  {"test_fraction", cfg.dataset.test_fraction},
                  {"n_folds", plan.n_folds},
                  {"test_episode_ids", plan.test_episode_ids},
                  {"folds", folds}};
    write_json_file(out_dir / "dataset.json", j);
}

DatasetBundle load_dataset(const fs::path& dir) {
    const fs::path side = dir / "dataset.json";
    if (!fs::exists(side) || !fs::exists(dir / "dataset.fvb")) throw DataError("no dataset in " + dir.string());
    DatasetBundle b;
    b.sidecar = read_json_file(side);
    b.matrix.data = load_matrix(dir / "dataset.fvb");
    try {
        const auto& j = b.sidecar;
        if (j.at("rows").get<std::size_t>() != b.matrix.rows() || j.at("cols").get<std::size_t>() != b.matrix.cols())
            throw DataError(side.string() + ": shape differs from dataset.fvb");
        const auto mean = j.at("normalization").at("mean").get<std::vector<double>>();
        const auto sd = j.at("normalization").at("sd").get<std::vector<double>>();
        if (mean.size() != b.matrix.cols() || sd.size() != b.matrix.cols())
            throw DataError(side.string() + ": normalization width differs from dataset");
        b.stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        b.stats.sd = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
        for (const auto& s : j.at("episodes"))
            b.matrix.episodes.push_back({s[0].get<std::int64_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()});
        const auto& sp = j.at("split");
        b.plan.n_folds = sp.at("n_folds").get<int>();
        b.plan.test_episode_ids = sp.at("test_episode_ids").get<std::vector<std::int64_t>>();
        for (const auto& f : sp.at("folds")) {
            b.plan.train_episode_ids.push_back(f[0].get<std::int64_t>());
            b.plan.fold_assignments.push_back(f[1].get<int>());
        }
    } catch (const Json::exception& e) {
        throw DataError(side.string() + ": malformed sidecar: " + e.what());
    }
    b.matrix.validate();
    return b;
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir, bool resume) {
    const auto ds = load_dataset(dataset_dir);
    const VaeArch arch = cfg.resolved_arch();
    if (static_cast<std::size_t>(arch.input_dim) != ds.matrix.cols())
        throw UsageError("train: dataset has " + std::to_string(ds.matrix.cols()) +
                         " columns but the configured input width is " + std::to_string(arch.input_dim));
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.workers = cfg.resolved_workers();
    const fs::path ckpt = out_dir / "checkpoints";
    fs::create_directories(ckpt);
    const auto res = train(ds.matrix, ds.plan, tc, arch, ckpt, resume);

    Json meta;
    meta["seed"] = cfg.seed;
    meta["best_fold"] = res.best_fold;
    meta["dataset_fnv1a64"] = ds.sidecar.at("dataset_fnv1a64");
    meta["train"] = recorded_config(cfg).at("train");
    save_model(out_dir / "model.fvbm", res.model, meta.dump());

    std::vector<std::string> lines{"fold,epoch,train_elbo,val_elbo,val_reconstruction,val_kl"};
    for (const auto& h : res.history)
        lines.push_back(join({std::to_string(h.fold), std::to_string(h.epoch), format_double(h.train_elbo),
                              format_double(h.val_elbo), format_double(h.val_reconstruction), format_double(h.val_kl)}));
    write_lines(out_dir / "history.csv", lines);
    return res;
}

IdentReport cmd_identify(const RunConfig& cfg, const fs::path& model_path, const fs::path& dataset_dir,
                         const fs::path& trace_dir, const fs::path& out_dir) {
    if (!fs::exists(model_path)) throw DataError("no model at " + model_path.string());
    const VaeParams model = load_model(model_path);
    const auto ds = load_dataset(dataset_dir);
    const auto ts = load_traces(trace_dir);
    if (static_cast<std::size_t>(model.input_dim()) != ds.matrix.cols())
        throw DataError("identify: model input width " + std::to_string(model.input_dim()) +
                        " differs from dataset width " + std::to_string(ds.matrix.cols()));
    if (2 * ts.devices.size() != ds.matrix.cols() || ts.traces.size() != ds.matrix.episodes.size())
        throw DataError("identify: traces do not match the dataset (device or episode count)");
    const int workers = cfg.resolved_workers();
    const double eps = cfg.identify.epsilon;

    // Training residual variance feeds the latent spread.
    const auto train_idx = ds.matrix.rows_of(ds.plan.train_episode_ids);
    RowMatrix train_rows(static_cast<Eigen::Index>(train_idx.size()), ds.matrix.data.cols());
    for (std::size_t i = 0; i < train_idx.size(); ++i)
        train_rows.row(static_cast<Eigen::Index>(i)) = ds.matrix.data.row(static_cast<Eigen::Index>(train_idx[i]));
    const Eigen::VectorXd resid_var = residual_variance(model, train_rows);

    // Per-episode latent trajectories and physical energy.
    std::vector<std::size_t> used;
    for (std::size_t e = 0; e < ds.matrix.episodes.size(); ++e)
        if (ds.matrix.episodes[e].rows() > 0) used.push_back(e);
    if (used.size() < 2) throw DataError("identify: need at least two non-empty episodes");
    std::vector<LatentTrajectory> trajs(used.size());
    std::vector<std::vector<double>> energy(used.size());
    parallel_for(used.size(), workers, [&](std::size_t i) {
        const auto& sp = ds.matrix.episodes[used[i]];
        const RowMatrix rows = ds.matrix.data.middleRows(static_cast<Eigen::Index>(sp.start_row),
                                                         static_cast<Eigen::Index>(sp.rows()));
        const auto& tr = ts.traces[used[i]];
        trajs[i] = encode_trajectory(model, rows, resid_var, tr.dt, sp.episode_id);
        energy[i] = thermal_energy(tr, ts.devices, sp.rows());
    });
    const CalibrationMap calib = calibrate_latent(trajs, energy);

    std::vector<EpisodeSeries> series(used.size());
    for (std::size_t i = 0; i < used.size(); ++i) {
        const auto& tr = ts.traces[used[i]];
        series[i].trajectory = trajs[i];
        series[i].u.dt = tr.dt;
        // Consumption above baseline charges the stored thermal energy.
        for (std::size_t k = 0; k < trajs[i].size(); ++k)
            series[i].u.values.push_back(-(tr.aggregate_power[k] - tr.baseline[k]));
    }

    // Power limits by one-sided search on fresh draw samples.
    Ensemble ens;
    ens.devices = ts.devices;
    ens.initial = synchronized_start(ens.devices, cfg.identify.start_level, cfg.ensemble.start_spread,
                                     derive_seed(cfg.seed, {kLimitStream, 0}));
    ens.baseline_initial =
        diversified_start(ens.devices, mean_base_draw(cfg.water_draw), derive_seed(cfg.seed, {kLimitStream, 1}));
    PowerLimitRequest req;
    req.duration = cfg.identify.limit_duration_s;
    req.dt = cfg.dt_s;
    req.tol = cfg.identify.limit_tol;
    req.n_draw_samples = cfg.identify.n_draw_samples;
    req.seed = derive_seed(cfg.seed, {kLimitStream, 2});
    req.dispatch = cfg.dispatch;
    req.workers = workers;
    req.direction = LimitDirection::Upper;
    const auto p_plus = power_limit_search(ens, cfg.water_draw, req);
    req.direction = LimitDirection::Lower;
    auto p_minus = power_limit_search(ens, cfg.water_draw, req);
    for (double& p : p_minus) p = -p;

    const ParamSamples samples = collect_param_samples(series, calib, p_minus, p_plus);
    std::vector<ParamDistribution> dists;
    for (std::size_t i = 0; i < kParamNames.size(); ++i) {
        if (samples[i].empty()) throw DataError(std::string("identify: no samples for ") + kParamNames[i]);
        dists.push_back(kde_mode_ci(samples[i], eps, kParamNames[i]));
    }

    // Reconstruction error on the held-out episodes (all episodes if none are held out).
    auto test_idx = ds.matrix.rows_of(ds.plan.test_episode_ids);
    if (test_idx.empty()) test_idx = ds.matrix.rows_of(ds.plan.train_episode_ids);
    RowMatrix test_rows(static_cast<Eigen::Index>(test_idx.size()), ds.matrix.data.cols());
    for (std::size_t i = 0; i < test_idx.size(); ++i)
        test_rows.row(static_cast<Eigen::Index>(i)) = ds.matrix.data.row(static_cast<Eigen::Index>(test_idx[i]));
    const auto recon = reconstruction_report(model, test_rows, ds.stats);
    const std::size_t n_dev = ts.devices.size();
    double recon_max = 0.0, recon_mean = 0.0;
    for (std::size_t i = 0; i < n_dev; ++i) {
        recon_max = std::max(recon_max, recon.max_abs[i]);
        recon_mean += recon.mean_abs[i] / static_cast<double>(n_dev);
    }

    // Latent increments against device warming/cooling balance, pooled over episodes.
    std::vector<double> all_dz, all_act;
    std::vector<std::string> sa_lines{"episode,step,energy_kwh,energy_increment,n_rising_minus_falling"};
    Json per_episode = Json::array();
    for (std::size_t i = 0; i < used.size(); ++i) {
        if (trajs[i].size() < 2) continue;
        const auto [dz, act] = state_activity_series(trajs[i], ts.traces[used[i]], calib.orientation);
        all_dz.insert(all_dz.end(), dz.begin(), dz.end());
        all_act.insert(all_act.end(), act.begin(), act.end());
        const auto x = calib.apply(trajs[i].mu_z);
        for (std::size_t k = 0; k < dz.size(); ++k)
            sa_lines.push_back(join({std::to_string(trajs[i].episode_id), std::to_string(k), format_double(x[k]),
                                     format_double(x[k + 1] - x[k]), format_double(act[k])}));
        try {
            per_episode.push_back({trajs[i].episode_id, pearson(dz, act)});
        } catch (const NumericalError&) {
            per_episode.push_back({trajs[i].episode_id, nullptr});
        }
    }
    const double correlation = pearson(all_dz, all_act);

    Json meta;
    meta["seed"] = cfg.seed;
    meta["epsilon"] = eps;
    meta["n_episodes"] = used.size();
    meta["n_devices"] = n_dev;
    meta["model_fnv1a64"] = hex64(file_fnv(model_path));
    meta["dataset_fnv1a64"] = ds.sidecar.at("dataset_fnv1a64");
    meta["calibration"] = {{"scale_kwh_per_unit", calib.scale},
                           {"offset_kwh", calib.offset},
                           {"orientation", calib.orientation}};
    meta["latent_sigma_z"] = trajs.front().sigma_z.empty() ? 0.0 : trajs.front().sigma_z.front();
    meta["state_activity_correlation"] = correlation;
    meta["state_activity_per_episode"] = per_episode;
    meta["reconstruction_f"] = {{"max_abs", recon_max}, {"mean_abs", recon_mean}, {"rows", test_idx.size()}};
    IdentReport report = build_report(std::move(dists), meta);

    fs::create_directories(out_dir);
    write_json_file(out_dir / "report.json", report_to_json(report));
    for (const auto& d : report.params) {
        std::vector<std::string> s{"sample"};
        for (double v : d.samples) s.push_back(format_double(v));
        write_lines(out_dir / ("param_" + d.name + "_samples.csv"), s);
        std::vector<std::string> g{"x,density"};
        for (std::size_t k = 0; k < d.grid_x.size(); ++k)
            g.push_back(format_double(d.grid_x[k]) + "," + format_double(d.grid_density[k]));
        write_lines(out_dir / ("param_" + d.name + "_density.csv"), g);
    }
    std::vector<std::string> re{"device,max_abs_f,mean_abs_f"};
    for (std::size_t i = 0; i < n_dev; ++i)
        re.push_back(join({std::to_string(i + 1), format_double(recon.max_abs[i]), format_double(recon.mean_abs[i])}));
    write_lines(out_dir / "reconstruction_error.csv", re);
    std::vector<std::string> hist{"device,bin_lo_f,bin_hi_f,count"};
    for (std::size_t i = 0; i < n_dev; ++i)
        for (std::size_t b = 0; b < recon.counts[i].size(); ++b)
            hist.push_back(join({std::to_string(i + 1), format_double(recon.bin_edges[b]),
                                 format_double(recon.bin_edges[b + 1]), std::to_string(recon.counts[i][b])}));
    write_lines(out_dir / "reconstruction_histogram.csv", hist);
    write_lines(out_dir / "state_activity.csv", sa_lines);
    return report;
}

std::string cmd_report(const fs::path& run_dir) {
    const fs::path rpath = run_dir / "report.json";
    if (!fs::exists(rpath)) throw DataError("no report at " + rpath.string());
    const Json r = read_json_file(rpath);
    std::ostringstream out;
    try {
        const auto& m = r.at("metadata");
        out << "episodes " << m.at("n_episodes").get<std::size_t>() << ", devices "
            << m.at("n_devices").get<std::size_t>() << ", epsilon " << format_double(m.at("epsilon").get<double>())
            << "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-8s %12s %12s %12s %10s %8s\n", "param", "mode", "ci_lo", "ci_hi",
                      "coverage", "n");
        out << line;
        for (const auto& [name, p] : r.at("parameters").items()) {
            std::snprintf(line, sizeof line, "%-8s %12.4f %12.4f %12.4f %10.4f %8zu\n", name.c_str(),
                          p.at("mode").get<double>(), p.at("ci_lo").get<double>(), p.at("ci_hi").get<double>(),
                          p.at("coverage").get<double>(), p.at("n_samples").get<std::size_t>());
            out << line;
        }
        const auto& rec = m.at("reconstruction_f");
        out << "reconstruction error (degF): max " << format_double(rec.at("max_abs").get<double>()) << ", mean "
            << format_double(rec.at("mean_abs").get<double>()) << "\n";
        out << "state-activity correlation: " << format_double(m.at("state_activity_correlation").get<double>())
            << "\n";
        for (const auto& w : m.at("warnings")) out << "warning: " << w.get<std::string>() << "\n";
    } catch (const Json::exception& e) {
        throw DataError(rpath.string() + ": malformed report: " + e.what());
    }
    write_text_file(run_dir / "summary.txt", out.str());
    return out.str();
}

}  // namespace fvb
