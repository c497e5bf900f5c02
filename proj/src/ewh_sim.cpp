#include "fvb/ewh_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fvb/error.hpp"
#include "fvb/parallel.hpp"
#include "fvb/rng.hpp"

namespace fvb {

namespace {

constexpr double kSecondsPerHour = 3600.0;

std::size_t step_count(double horizon, double dt) {
    if (!(dt > 0.0) || !(horizon >= 0.0)) throw UsageError("ewh: horizon must be >= 0 and dt > 0");
    const double n = horizon / dt;
    const double r = std::round(n);
    if (std::abs(n - r) > 1e-9 * std::max(1.0, n)) throw UsageError("ewh: horizon is not a multiple of dt");
    return static_cast<std::size_t>(r);
}

// Draw flow (L/min) to m_dot c_p (kW/degC).
double draw_conductance(double draw_rate) { return draw_rate * kWaterDensity / 60.0 * kWaterHeatCapacity; }

void check_ensemble_inputs(std::span<const EwhParams> devices, std::span<const EwhState> initial,
                           std::span<const std::vector<double>> draws, std::size_t steps) {
    if (devices.empty()) throw UsageError("ewh: empty ensemble");
    if (initial.size() != devices.size()) throw UsageError("ewh: initial state count differs from device count");
    if (draws.size() != devices.size()) throw UsageError("ewh: draw series count differs from device count");
    for (const auto& d : draws)
        if (d.size() < steps) throw UsageError("ewh: draw series shorter than the horizon");
    for (const auto& p : devices) p.validate();
}

}  // namespace

void EwhParams::validate() const {
    for (double v : {tank_volume, rated_power, efficiency, setpoint, deadband_halfwidth, t_max, t_inlet, t_ambient})
        if (!std::isfinite(v) || v <= 0.0) throw UsageError("EwhParams: every parameter must be finite and positive");
    // A perfectly insulated tank (ua = 0) is allowed.
    if (!std::isfinite(ua) || ua < 0.0) throw UsageError("EwhParams: ua must be finite and nonnegative");
    if (efficiency > 1.0) throw UsageError("EwhParams: efficiency must lie in (0, 1]");
    if (setpoint + deadband_halfwidth > t_max) throw UsageError("EwhParams: setpoint + deadband exceeds t_max");
    if (!(t_inlet < setpoint)) throw UsageError("EwhParams: inlet temperature must be below setpoint");
}

void WaterDrawModel::validate() const {
    for (double v : base_profile)
        if (!(v >= 0.0)) throw UsageError("WaterDrawModel: base profile must be nonnegative");
    if (!(event_rate >= 0.0) || !(event_magnitude_log_sd >= 0.0) || !(event_duration_mean >= 0.0))
        throw UsageError("WaterDrawModel: rates and magnitudes must be nonnegative");
    if (!std::isfinite(event_magnitude_log_mean) || !std::isfinite(start_hour))
        throw UsageError("WaterDrawModel: non-finite parameter");
}

WaterDrawModel WaterDrawModel::constant(double rate) {
    WaterDrawModel m;
    m.base_profile.fill(rate);
    return m;
}

void DispatchConfig::validate() const {
    if (!(tracking_tolerance > 0.0)) throw UsageError("DispatchConfig: tracking tolerance must be positive");
    if (failure_window < 1) throw UsageError("DispatchConfig: failure window must be >= 1");
    if (min_on_time < 0.0 || min_off_time < 0.0) throw UsageError("DispatchConfig: negative minimum on/off time");
}

EwhState ewh_step(const EwhState& state, const EwhParams& params, double draw_rate, bool on, double dt) {
    if (!std::isfinite(state.temperature) || !std::isfinite(draw_rate) || !std::isfinite(dt))
        throw UsageError("ewh_step: non-finite input");
    if (!(dt > 0.0)) throw UsageError("ewh_step: dt must be positive");
    const StepEnergy e = ewh_step_energy(state, params, draw_rate, on, dt);
    EwhState next = state;
    next.temperature += (e.electrical - e.loss - e.draw) / params.thermal_capacity();
    return next;
}

StepEnergy ewh_step_energy(const EwhState& state, const EwhParams& params, double draw_rate, bool on, double dt) {
    const double t = state.temperature;
    return {on ? params.efficiency * params.rated_power * dt : 0.0, params.ua * (t - params.t_ambient) * dt,
            draw_conductance(draw_rate) * (t - params.t_inlet) * dt};
}

bool thermostat_decide(const EwhState& state, const EwhParams& params) {
    const double t = state.temperature;
    if (t >= params.t_max || t >= params.upper_switch()) return false;
    if (t <= params.lower_switch()) return true;
    return state.on;
}

std::vector<DrawEvent> draw_events(const WaterDrawModel& model, double horizon, std::uint64_t episode_seed) {
    model.validate();
    std::vector<DrawEvent> events;
    if (model.event_rate <= 0.0 || horizon <= 0.0) return events;
    Rng rng(derive_seed(model.seed, {episode_seed}));
    std::exponential_distribution<double> gap(model.event_rate / kSecondsPerHour);
    std::lognormal_distribution<double> magnitude(model.event_magnitude_log_mean, model.event_magnitude_log_sd);
    std::exponential_distribution<double> duration(model.event_duration_mean > 0.0 ? 1.0 / model.event_duration_mean
                                                                                    : 1.0);
    for (double t = gap(rng); t < horizon; t += gap(rng)) {
        DrawEvent e;
        e.start = t;
        e.rate = magnitude(rng);
        e.duration = model.event_duration_mean > 0.0 ? duration(rng) : 0.0;
        events.push_back(e);
    }
    return events;
}

std::vector<double> water_draw_sample(const WaterDrawModel& model, double horizon, double dt,
                                      std::uint64_t episode_seed) {
    const std::size_t n = step_count(horizon, dt);
    std::vector<double> rate(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double clock = model.start_hour * kSecondsPerHour + static_cast<double>(k) * dt;
        auto hour = static_cast<long long>(std::floor(clock / kSecondsPerHour)) % 24;
        if (hour < 0) hour += 24;
        rate[k] = model.base_profile[static_cast<std::size_t>(hour)];
    }
    for (const auto& e : draw_events(model, horizon, episode_seed)) {
        const auto first = static_cast<std::size_t>(std::ceil(e.start / dt));
        for (std::size_t k = first; k < n; ++k) {
            const double t = static_cast<double>(k) * dt;
            if (t >= e.start + e.duration) break;
            rate[k] += e.rate;
        }
    }
    return rate;
}

std::vector<double> baseline_simulate(std::span<const EwhParams> devices, std::span<const EwhState> initial,
                                      std::span<const std::vector<double>> draws, double horizon, double dt) {
    const std::size_t steps = step_count(horizon, dt);
    check_ensemble_inputs(devices, initial, draws, steps);
    std::vector<EwhState> state(initial.begin(), initial.end());
    std::vector<double> power(steps, 0.0);
    for (std::size_t k = 0; k < steps; ++k) {
        double p = 0.0;
        for (std::size_t i = 0; i < devices.size(); ++i) {
            state[i].on = thermostat_decide(state[i], devices[i]);
            if (state[i].on) p += devices[i].rated_power;
            state[i] = ewh_step(state[i], devices[i], draws[i][k], state[i].on, dt);
        }
        power[k] = p;
    }
    return power;
}

EnsembleTrace dispatch_track(std::span<const EwhParams> devices, std::span<const EwhState> initial,
                             std::span<const std::vector<double>> draws, const SignalSeries& regulation,
                             std::span<const double> baseline, const DispatchConfig& config) {
    regulation.validate();
    config.validate();
    const std::size_t steps = regulation.values.size();
    const std::size_t n = devices.size();
    check_ensemble_inputs(devices, initial, draws, steps);
    if (baseline.size() < steps) throw UsageError("dispatch_track: baseline shorter than regulation signal");
    const double dt = regulation.dt;

    EnsembleTrace tr;
    tr.dt = dt;
    tr.n_devices = n;
    tr.setpoints.resize(n);
    for (std::size_t i = 0; i < n; ++i) tr.setpoints[i] = devices[i].setpoint;
    tr.temperatures.reserve(steps * n);
    tr.on_off.reserve(steps * n);
    tr.aggregate_power.reserve(steps);
    tr.regulation.reserve(steps);
    tr.baseline.reserve(steps);
    tr.truncation_index = steps;

    std::vector<EwhState> state(initial.begin(), initial.end());
    // Time since the last switching action; starts "long ago" so no lock applies.
    std::vector<double> since_switch(n, std::max(config.min_on_time, config.min_off_time) + dt);
    std::vector<std::size_t> flexible;
    flexible.reserve(n);
    std::vector<double> position(n);
    std::vector<std::uint8_t> command(n);
    int failing = 0;

    for (std::size_t k = 0; k < steps; ++k) {
        const double target = baseline[k] + regulation.values[k];
        double power = 0.0;
        flexible.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = devices[i];
            const double t = state[i].temperature;
            if (t >= p.t_max || t >= p.upper_switch()) {
                command[i] = 0;
            } else if (t <= p.lower_switch()) {
                command[i] = 1;
            } else if (state[i].on && since_switch[i] < config.min_on_time) {
                command[i] = 1;
            } else if (!state[i].on && since_switch[i] < config.min_off_time) {
                command[i] = 0;
            } else {
                command[i] = 0;
                position[i] = (t - p.lower_switch()) / (p.upper_switch() - p.lower_switch());
                flexible.push_back(i);
                continue;
            }
            if (command[i]) power += p.rated_power;
        }
        std::stable_sort(flexible.begin(), flexible.end(),
                         [&](std::size_t a, std::size_t b) { return position[a] < position[b]; });
        for (std::size_t i : flexible) {
            const double with = power + devices[i].rated_power;
            if (std::abs(with - target) < std::abs(power - target)) {
                command[i] = 1;
                power = with;
            } else {
                break;
            }
        }

        // Re-sum in device order so the recorded aggregate is exactly the sum over
        // on_off, independent of the priority order used above.
        power = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (command[i]) power += devices[i].rated_power;
            tr.temperatures.push_back(state[i].temperature);
            tr.on_off.push_back(command[i]);
        }
        tr.aggregate_power.push_back(power);
        tr.regulation.push_back(regulation.values[k]);
        tr.baseline.push_back(baseline[k]);

        if (std::abs(power - target) > config.tracking_tolerance) {
            if (++failing >= config.failure_window) {
                tr.truncation_index = k + 1 - static_cast<std::size_t>(config.failure_window);
                break;
            }
        } else {
            failing = 0;
        }

        for (std::size_t i = 0; i < n; ++i) {
            const bool on = command[i] != 0;
            since_switch[i] = (on == state[i].on) ? since_switch[i] + dt : dt;
            state[i] = ewh_step(state[i], devices[i], draws[i][k], on, dt);
            state[i].on = on;
        }
    }
    return tr;
}

double Ensemble::total_rated_power() const {
    double s = 0.0;
    for (const auto& d : devices) s += d.rated_power;
    return s;
}

double Ensemble::max_rated_power() const {
    double m = 0.0;
    for (const auto& d : devices) m = std::max(m, d.rated_power);
    return m;
}

void Ensemble::validate() const {
    if (devices.empty()) throw UsageError("Ensemble: no devices");
    if (initial.size() != devices.size() || baseline_initial.size() != devices.size())
        throw UsageError("Ensemble: start-state count differs from device count");
    for (const auto& d : devices) d.validate();
}

std::vector<EwhParams> make_devices(const EwhParams& nominal, std::size_t n, double jitter, double setpoint_jitter,
                                    std::uint64_t seed) {
    nominal.validate();
    if (jitter < 0.0 || jitter >= 1.0 || setpoint_jitter < 0.0) throw UsageError("make_devices: invalid jitter");
    std::vector<EwhParams> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {0xde71ceULL, i}));
        std::uniform_real_distribution<double> rel(1.0 - jitter, 1.0 + jitter);
        std::uniform_real_distribution<double> sp(-setpoint_jitter, setpoint_jitter);
        EwhParams p = nominal;
        p.tank_volume *= rel(rng);
        p.rated_power *= rel(rng);
        p.ua *= rel(rng);
        p.setpoint += sp(rng);
        p.t_max = std::max(p.t_max, p.upper_switch() + (nominal.t_max - nominal.upper_switch()));
        p.validate();
        out.push_back(p);
    }
    return out;
}

std::vector<EwhState> synchronized_start(std::span<const EwhParams> devices, double level, double spread,
                                         std::uint64_t seed) {
    std::vector<EwhState> out;
    out.reserve(devices.size());
    for (std::size_t i = 0; i < devices.size(); ++i) {
        Rng rng(derive_seed(seed, {0x5c1ULL, i}));
        std::uniform_real_distribution<double> jitter(-spread, spread);
        const auto& p = devices[i];
        const double pos = std::clamp(level + jitter(rng), 0.0, 1.0);
        out.push_back({p.lower_switch() + pos * (p.upper_switch() - p.lower_switch()), false});
    }
    return out;
}

std::vector<EwhState> diversified_start(std::span<const EwhParams> devices, double draw_rate, std::uint64_t seed) {
    std::vector<EwhState> out;
    out.reserve(devices.size());
    for (std::size_t i = 0; i < devices.size(); ++i) {
        Rng rng(derive_seed(seed, {0xd17ULL, i}));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const auto& p = devices[i];
        const double demand = p.ua * (p.setpoint - p.t_ambient) + draw_conductance(draw_rate) * (p.setpoint - p.t_inlet);
        const double duty = std::clamp(demand / (p.efficiency * p.rated_power), 0.0, 1.0);
        const double pos = u01(rng);
        out.push_back({p.lower_switch() + pos * (p.upper_switch() - p.lower_switch()), u01(rng) < duty});
    }
    return out;
}

double one_sided_search(const std::function<bool(double)>& feasible, double tol, double ceiling) {
    if (!(tol > 0.0)) throw UsageError("one_sided_search: tolerance must be positive");
    if (!feasible(0.0)) return 0.0;
    double lo = 0.0;
    for (;;) {
        // Grow the bracket until an infeasible magnitude is found.
        double hi = std::max(lo + tol, tol);
        while (feasible(hi)) {
            lo = hi;
            if (hi >= ceiling) throw NumericalError("one_sided_search: ceiling is feasible");
            hi = std::min(2.0 * hi, ceiling);
        }
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            (feasible(mid) ? lo : hi) = mid;
        }
        // Feasibility need not be monotone in P; only stop once lo + tol itself fails.
        if (hi == lo + tol || !feasible(lo + tol)) return lo;
        lo += tol;
    }
}

bool PowerLimitProblem::feasible(double signed_power) const {
    SignalSeries r{dt, std::vector<double>(steps(), signed_power)};
    const auto tr = dispatch_track(devices, initial, draws, r, baseline, config);
    return tr.truncation_index == steps();
}

PowerLimitProblem make_power_limit_problem(const Ensemble& ensemble, const WaterDrawModel& draw_model,
                                           const PowerLimitRequest& req, int sample) {
    ensemble.validate();
    PowerLimitProblem prob;
    prob.devices = ensemble.devices;
    prob.initial = ensemble.initial;
    prob.config = req.dispatch;
    prob.dt = req.dt;
    prob.draws.reserve(ensemble.size());
    for (std::size_t i = 0; i < ensemble.size(); ++i)
        prob.draws.push_back(water_draw_sample(draw_model, req.duration, req.dt,
                                               derive_seed(req.seed, {static_cast<std::uint64_t>(sample), i})));
    prob.baseline = baseline_simulate(ensemble.devices, ensemble.baseline_initial, prob.draws, req.duration, req.dt);
    return prob;
}

std::vector<double> power_limit_search(const Ensemble& ensemble, const WaterDrawModel& draw_model,
                                       const PowerLimitRequest& req) {
    ensemble.validate();
    if (!(req.tol > 0.0)) throw UsageError("power_limit_search: tolerance must be positive");
    if (req.n_draw_samples < 1) throw UsageError("power_limit_search: need at least one draw sample");
    const double sign = req.direction == LimitDirection::Upper ? 1.0 : -1.0;
    // No constant offset beyond this can be tracked for failure_window steps.
    const double ceiling = 2.0 * ensemble.total_rated_power() + 4.0 * req.dispatch.tracking_tolerance + req.tol;
    std::vector<double> limits(static_cast<std::size_t>(req.n_draw_samples));
    parallel_for(limits.size(), req.workers, [&](std::size_t s) {
        const auto prob = make_power_limit_problem(ensemble, draw_model, req, static_cast<int>(s));
        limits[s] = one_sided_search([&](double p) { return prob.feasible(sign * p); }, req.tol, ceiling);
    });
    return limits;
}

}  // namespace fvb
