#include "fvb/config.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "fvb/error.hpp"
#include "fvb/parallel.hpp"
#include "fvb/rng.hpp"

namespace fvb {

namespace {

Json ewh_json(const EwhParams& p) {
    return {{"tank_volume", p.tank_volume}, {"rated_power", p.rated_power},
            {"ua", p.ua},                   {"efficiency", p.efficiency},
            {"setpoint", p.setpoint},       {"deadband_halfwidth", p.deadband_halfwidth},
            {"t_max", p.t_max},             {"t_inlet", p.t_inlet},
            {"t_ambient", p.t_ambient}};
}

EwhParams ewh_from(const Json& j) {
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
    return p;
}

const char* optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer optimizer_from(const std::string& s) {
    if (s == "adam") return Optimizer::Adam;
    if (s == "sgd") return Optimizer::Sgd;
    throw UsageError("config: train.optimizer must be \"adam\" or \"sgd\", got \"" + s + "\"");
}

// Every key of `j` must exist in `ref`, recursively through objects.
void check_keys(const Json& j, const Json& ref, const std::string& where) {
    if (!j.is_object()) return;
    for (const auto& [k, v] : j.items()) {
        if (!ref.contains(k)) throw UsageError("config: unknown key \"" + where + k + "\"");
        if (v.is_object() && ref.at(k).is_object()) check_keys(v, ref.at(k), where + k + ".");
    }
}

}  // namespace

WaterDrawModel RunConfig::default_water_draw() {
    WaterDrawModel m;
    // L/min by hour of day: low overnight, morning and evening peaks.
    m.base_profile = {0.10, 0.08, 0.08, 0.08, 0.10, 0.20, 0.40, 0.50, 0.45, 0.35, 0.30, 0.30,
                      0.30, 0.28, 0.25, 0.25, 0.30, 0.40, 0.45, 0.45, 0.40, 0.30, 0.20, 0.15};
    m.start_hour = 7.0;
    m.event_rate = 1.0;
    m.event_magnitude_log_mean = 0.0;
    m.event_magnitude_log_sd = 0.3;
    m.event_duration_mean = 20.0;
    m.seed = 0;
    return m;
}

void RunConfig::validate() const {
    if (ensemble.n_devices < 1) throw UsageError("config: ensemble.n_devices must be >= 1");
    if (!(ensemble.jitter >= 0.0 && ensemble.jitter < 1.0) || !(ensemble.setpoint_jitter >= 0.0))
        throw UsageError("config: ensemble jitter must lie in [0, 1)");
    if (!(0.0 <= ensemble.start_level_lo && ensemble.start_level_lo <= ensemble.start_level_hi &&
          ensemble.start_level_hi <= 1.0) ||
        !(ensemble.start_spread >= 0.0))
        throw UsageError("config: start levels must satisfy 0 <= lo <= hi <= 1");
    ensemble.nominal.validate();
    water_draw.validate();
    if (regulation.source == "files") {
        if (regulation.files.empty()) throw UsageError("config: regulation.files is empty");
    } else if (regulation.source == "synthetic") {
        if (regulation.n_signals < 1 || regulation.n_components < 1)
            throw UsageError("config: regulation.n_signals and n_components must be >= 1");
        if (!(regulation.min_period_s > 0.0 && regulation.min_period_s <= regulation.max_period_s))
            throw UsageError("config: regulation periods must satisfy 0 < min <= max");
        if (!(regulation.amplitude_fraction >= 0.0)) throw UsageError("config: amplitude_fraction must be >= 0");
    } else {
        throw UsageError("config: regulation.source must be \"synthetic\" or \"files\"");
    }
    if (!std::isfinite(regulation.scale)) throw UsageError("config: regulation.scale must be finite");
    if (!(dt_s > 0.0) || !(horizon_s >= dt_s)) throw UsageError("config: need dt_s > 0 and horizon_s >= dt_s");
    if (std::abs(horizon_s / dt_s - std::round(horizon_s / dt_s)) > 1e-9)
        throw UsageError("config: horizon_s must be a multiple of dt_s");
    if (draw_samples_per_signal < 1) throw UsageError("config: draw_samples_per_signal must be >= 1");
    if (workers < 0) throw UsageError("config: workers must be >= 0");
    dispatch.validate();
    if (!(dataset.test_fraction >= 0.0 && dataset.test_fraction < 1.0) || dataset.n_folds < 2)
        throw UsageError("config: dataset.test_fraction in [0, 1) and n_folds >= 2 required");
    resolved_arch().validate();
    TrainConfig t = train;
    t.workers = 1;
    t.validate();
    if (!(identify.epsilon > 0.0 && identify.epsilon < 1.0)) throw UsageError("config: identify.epsilon in (0, 1)");
    if (!(identify.limit_duration_s >= dt_s) || !(identify.limit_tol > 0.0) || identify.n_draw_samples < 1)
        throw UsageError("config: identify limit settings must be positive");
    if (!(identify.start_level >= 0.0 && identify.start_level <= 1.0))
        throw UsageError("config: identify.start_level must lie in [0, 1]");
}

int RunConfig::resolved_workers() const { return workers > 0 ? workers : default_workers(); }

VaeArch RunConfig::resolved_arch() const {
    VaeArch a = vae;
    if (a.input_dim == 0) a.input_dim = static_cast<int>(2 * ensemble.n_devices);
    return a;
}

std::size_t RunConfig::n_episodes() const {
    const std::size_t signals =
        regulation.source == "files" ? regulation.files.size() : static_cast<std::size_t>(regulation.n_signals);
    return signals * static_cast<std::size_t>(draw_samples_per_signal);
}

Json RunConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["workers"] = workers;
    j["out"] = out;
    j["ensemble"] = {{"n_devices", ensemble.n_devices},
                     {"jitter", ensemble.jitter},
                     {"setpoint_jitter", ensemble.setpoint_jitter},
                     {"nominal", ewh_json(ensemble.nominal)},
                     {"start_level_lo", ensemble.start_level_lo},
                     {"start_level_hi", ensemble.start_level_hi},
                     {"start_spread", ensemble.start_spread}};
    j["water_draw"] = {{"base_profile", water_draw.base_profile},
                       {"start_hour", water_draw.start_hour},
                       {"event_rate", water_draw.event_rate},
                       {"event_magnitude_log_mean", water_draw.event_magnitude_log_mean},
                       {"event_magnitude_log_sd", water_draw.event_magnitude_log_sd},
                       {"event_duration_mean", water_draw.event_duration_mean},
                       {"seed", water_draw.seed}};
    j["regulation"] = {{"source", regulation.source},
                       {"files", regulation.files},
                       {"scale", regulation.scale},
                       {"n_signals", regulation.n_signals},
                       {"amplitude_fraction", regulation.amplitude_fraction},
                       {"min_period_s", regulation.min_period_s},
                       {"max_period_s", regulation.max_period_s},
                       {"n_components", regulation.n_components}};
    j["horizon_s"] = horizon_s;
    j["dt_s"] = dt_s;
    j["draw_samples_per_signal"] = draw_samples_per_signal;
    j["dispatch"] = {{"tracking_tolerance", dispatch.tracking_tolerance},
                     {"min_on_time", dispatch.min_on_time},
                     {"min_off_time", dispatch.min_off_time},
                     {"failure_window", dispatch.failure_window}};
    j["dataset"] = {{"test_fraction", dataset.test_fraction}, {"n_folds", dataset.n_folds}};
    j["vae"] = {{"input_dim", vae.input_dim}, {"h1", vae.h1}, {"h2", vae.h2}, {"h3", vae.h3}};
    j["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"sigma_dec", train.sigma_dec},
                  {"patience", train.patience},
                  {"optimizer", optimizer_name(train.optimizer)},
                  {"max_folds", train.max_folds}};
    j["identify"] = {{"epsilon", identify.epsilon},
                     {"limit_duration_s", identify.limit_duration_s},
                     {"limit_tol", identify.limit_tol},
                     {"n_draw_samples", identify.n_draw_samples},
                     {"start_level", identify.start_level}};
    return j;
}

RunConfig RunConfig::from_json(const Json& user) {
    if (!user.is_object()) throw UsageError("config: top level must be a JSON object");
    const Json defaults = RunConfig{}.to_json();
    check_keys(user, defaults, "");
    Json j = defaults;
    j.merge_patch(user);
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.workers = j.at("workers").get<int>();
        c.out = j.at("out").get<std::string>();
        const auto& e = j.at("ensemble");
        c.ensemble.n_devices = e.at("n_devices").get<std::size_t>();
        c.ensemble.jitter = e.at("jitter").get<double>();
        c.ensemble.setpoint_jitter = e.at("setpoint_jitter").get<double>();
        c.ensemble.nominal = ewh_from(e.at("nominal"));
        c.ensemble.start_level_lo = e.at("start_level_lo").get<double>();
        c.ensemble.start_level_hi = e.at("start_level_hi").get<double>();
        c.ensemble.start_spread = e.at("start_spread").get<double>();
        const auto& w = j.at("water_draw");
        if (w.at("base_profile").size() != 24) throw UsageError("config: water_draw.base_profile needs 24 entries");
        for (std::size_t h = 0; h < 24; ++h) c.water_draw.base_profile[h] = w.at("base_profile")[h].get<double>();
        c.water_draw.start_hour = w.at("start_hour").get<double>();
        c.water_draw.event_rate = w.at("event_rate").get<double>();
        c.water_draw.event_magnitude_log_mean = w.at("event_magnitude_log_mean").get<double>();
        c.water_draw.event_magnitude_log_sd = w.at("event_magnitude_log_sd").get<double>();
        c.water_draw.event_duration_mean = w.at("event_duration_mean").get<double>();
        c.water_draw.seed = w.at("seed").get<std::uint64_t>();
        const auto& r = j.at("regulation");
        c.regulation.source = r.at("source").get<std::string>();
        c.regulation.files = r.at("files").get<std::vector<std::string>>();
        c.regulation.scale = r.at("scale").get<double>();
        c.regulation.n_signals = r.at("n_signals").get<int>();
        c.regulation.amplitude_fraction = r.at("amplitude_fraction").get<double>();
        c.regulation.min_period_s = r.at("min_period_s").get<double>();
        c.regulation.max_period_s = r.at("max_period_s").get<double>();
        c.regulation.n_components = r.at("n_components").get<int>();
        c.horizon_s = j.at("horizon_s").get<double>();
        c.dt_s = j.at("dt_s").get<double>();
        c.draw_samples_per_signal = j.at("draw_samples_per_signal").get<int>();
        const auto& d = j.at("dispatch");
        c.dispatch.tracking_tolerance = d.at("tracking_tolerance").get<double>();
        c.dispatch.min_on_time = d.at("min_on_time").get<double>();
        c.dispatch.min_off_time = d.at("min_off_time").get<double>();
        c.dispatch.failure_window = d.at("failure_window").get<int>();
        c.dataset.test_fraction = j.at("dataset").at("test_fraction").get<double>();
        c.dataset.n_folds = j.at("dataset").at("n_folds").get<int>();
        const auto& v = j.at("vae");
        c.vae.input_dim = v.at("input_dim").get<int>();
        c.vae.h1 = v.at("h1").get<int>();
        c.vae.h2 = v.at("h2").get<int>();
        c.vae.h3 = v.at("h3").get<int>();
        const auto& t = j.at("train");
        c.train.epochs = t.at("epochs").get<int>();
        c.train.batch_size = t.at("batch_size").get<int>();
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.sigma_dec = t.at("sigma_dec").get<double>();
        c.train.patience = t.at("patience").get<int>();
        c.train.optimizer = optimizer_from(t.at("optimizer").get<std::string>());
        c.train.max_folds = t.at("max_folds").get<int>();
        const auto& id = j.at("identify");
        c.identify.epsilon = id.at("epsilon").get<double>();
        c.identify.limit_duration_s = id.at("limit_duration_s").get<double>();
        c.identify.limit_tol = id.at("limit_tol").get<double>();
        c.identify.n_draw_samples = id.at("n_draw_samples").get<int>();
        c.identify.start_level = id.at("start_level").get<double>();
    } catch (const Json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    c.train.seed = c.seed;
    c.validate();
    return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
    if (!path) return RunConfig{};
    Json j;
    try {
        j = read_json_file(*path);
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    return RunConfig::from_json(j);
}

SignalSeries synthetic_regulation(const RegulationConfig& cfg, double amplitude, double horizon, double dt,
                                  std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(std::llround(horizon / dt));
    SignalSeries s;
    s.dt = dt;
    s.values.assign(n, 0.0);
    Rng rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double lmin = std::log(cfg.min_period_s), lmax = std::log(cfg.max_period_s);
    for (int c = 0; c < cfg.n_components; ++c) {
        const double period = std::exp(lmin + (lmax - lmin) * u01(rng));
        const double phase = 2.0 * std::numbers::pi * u01(rng);
        const double weight = 0.5 + u01(rng);
        for (std::size_t k = 0; k < n; ++k)
            s.values[k] += weight * std::sin(2.0 * std::numbers::pi * dt * static_cast<double>(k) / period + phase);
    }
    double peak = 0.0;
    for (double v : s.values) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : s.values) v *= amplitude / peak;
    return s;
}

std::vector<SignalSeries> regulation_signals(const RunConfig& cfg, double total_rated_power) {
    const auto n = static_cast<std::size_t>(std::llround(cfg.horizon_s / cfg.dt_s));
    std::vector<SignalSeries> out;
    if (cfg.regulation.source == "files") {
        for (const auto& f : cfg.regulation.files) {
            auto s = read_regulation_csv(f, cfg.regulation.scale);
            if (std::abs(s.dt - cfg.dt_s) > 1e-9 * cfg.dt_s)
                throw DataError(f + ": time step " + format_double(s.dt) + " s differs from dt_s " +
                                format_double(cfg.dt_s));
            if (s.values.size() < n)
                throw DataError(f + ": " + std::to_string(s.values.size()) + " samples, horizon needs " +
                                std::to_string(n));
            s.values.resize(n);
            out.push_back(std::move(s));
        }
    } else {
        const double amplitude = cfg.regulation.amplitude_fraction * total_rated_power;
        for (int i = 0; i < cfg.regulation.n_signals; ++i)
            out.push_back(synthetic_regulation(cfg.regulation, amplitude, cfg.horizon_s, cfg.dt_s,
                                               derive_seed(cfg.seed, {0x4e6ULL, static_cast<std::uint64_t>(i)})));
    }
    return out;
}

std::vector<EwhParams> config_devices(const RunConfig& cfg) {
    return make_devices(cfg.ensemble.nominal, cfg.ensemble.n_devices, cfg.ensemble.jitter,
                        cfg.ensemble.setpoint_jitter, derive_seed(cfg.seed, {0xde7ULL}));
}

}  // namespace fvb
