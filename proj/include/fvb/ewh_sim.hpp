#pragma once

// Electric water heater (EWH) ensemble simulation.
//
// Each device is a single-node (fully mixed) tank:
//
//   C_th dT/dt = -UA (T - T_amb) - m_dot c_p (T - T_inlet) + eta P_rated on
//
// with C_th = rho c_p V. Temperatures in degC, powers in kW, draws in L/min.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fvb/vb_core.hpp"

namespace fvb {

inline constexpr double kWaterDensity = 1.0;        // kg/L
inline constexpr double kWaterHeatCapacity = 4.186;  // kJ/(kg degC)

struct EwhParams {
    double tank_volume = 189.0;       // L
    double rated_power = 4.5;         // kW
    double ua = 0.002;                // kW/degC
    double efficiency = 1.0;
    double setpoint = 48.9;           // degC (120 degF)
    double deadband_halfwidth = 1.4;  // degC
    double t_max = 51.0;              // degC
    double t_inlet = 15.6;            // degC
    double t_ambient = 21.1;          // degC

    void validate() const;
    /// Thermal capacity rho c_p V in kJ/degC.
    double thermal_capacity() const { return kWaterDensity * kWaterHeatCapacity * tank_volume; }
    double lower_switch() const { return setpoint - deadband_halfwidth; }
    double upper_switch() const { return setpoint + deadband_halfwidth; }
};

struct EwhState {
    double temperature = 48.9;
    bool on = false;
};

/// Hot-water draw generator: a 24 h piecewise-constant base profile plus
/// Poisson-arriving events with lognormal flow rate and exponential duration.
struct WaterDrawModel {
    std::array<double, 24> base_profile{};  // L/min for each hour of the day
    double start_hour = 7.0;                // clock time of t = 0
    double event_rate = 0.0;                // events/h
    double event_magnitude_log_mean = 0.0;  // ln(L/min)
    double event_magnitude_log_sd = 0.0;
    double event_duration_mean = 30.0;      // s
    std::uint64_t seed = 0;

    void validate() const;
    /// Base profile with all entries set to `rate`.
    static WaterDrawModel constant(double rate);
};

struct DrawEvent {
    double start = 0.0;     // s
    double duration = 0.0;  // s
    double rate = 0.0;      // L/min
};

struct DispatchConfig {
    double tracking_tolerance = 4.5;  // kW
    double min_on_time = 0.0;         // s
    double min_off_time = 0.0;        // s
    int failure_window = 5;           // consecutive out-of-tolerance steps

    void validate() const;
};

/// Result of one tracking run. Matrices are row-major, one row per simulated step.
/// Rows [0, truncation_index) are the valid (tracked) portion.
struct EnsembleTrace {
    double dt = 1.0;
    std::size_t n_devices = 0;
    std::vector<double> temperatures;  // steps x n_devices, degC
    std::vector<double> setpoints;     // n_devices
    std::vector<std::uint8_t> on_off;  // steps x n_devices
    std::vector<double> aggregate_power;
    std::vector<double> regulation;
    std::vector<double> baseline;
    std::size_t truncation_index = 0;

    std::size_t steps() const { return aggregate_power.size(); }
    double temperature(std::size_t step, std::size_t device) const {
        return temperatures[step * n_devices + device];
    }
    bool is_on(std::size_t step, std::size_t device) const { return on_off[step * n_devices + device] != 0; }
};

/// One explicit-Euler step of the tank energy balance. The thermostat state is
/// carried over unchanged; `on` is the heating element command for this step.
EwhState ewh_step(const EwhState& state, const EwhParams& params, double draw_rate, bool on, double dt);

/// Per-step energy flows (kJ) of ewh_step, for accounting checks.
struct StepEnergy {
    double electrical = 0.0;  // eta P on dt
    double loss = 0.0;        // UA (T - T_amb) dt
    double draw = 0.0;        // m_dot c_p (T - T_inlet) dt
};
StepEnergy ewh_step_energy(const EwhState& state, const EwhParams& params, double draw_rate, bool on, double dt);

/// Hysteresis thermostat with a hard ceiling at t_max.
bool thermostat_decide(const EwhState& state, const EwhParams& params);

std::vector<DrawEvent> draw_events(const WaterDrawModel& model, double horizon, std::uint64_t episode_seed);

/// Draw-rate series (L/min) of length horizon/dt. Deterministic in (model.seed, episode_seed).
std::vector<double> water_draw_sample(const WaterDrawModel& model, double horizon, double dt,
                                      std::uint64_t episode_seed);

/// Thermostat-only aggregate power (kW), the u = 0 reference.
std::vector<double> baseline_simulate(std::span<const EwhParams> devices, std::span<const EwhState> initial,
                                      std::span<const std::vector<double>> draws, double horizon, double dt);

/// Priority-stack regulation tracking. At each step the target is baseline + r.
/// Devices below their lower switch are forced on, devices at or above their upper
/// switch (or t_max) are forced off, and the remaining flexible devices are switched
/// on coldest-first (normalized position in the deadband) while doing so moves the
/// aggregate closer to the target. The run stops once the tracking error exceeds the
/// tolerance for failure_window consecutive steps; truncation_index is the first
/// step of that run.
EnsembleTrace dispatch_track(std::span<const EwhParams> devices, std::span<const EwhState> initial,
                             std::span<const std::vector<double>> draws, const SignalSeries& regulation,
                             std::span<const double> baseline, const DispatchConfig& config);

enum class LimitDirection { Upper, Lower };

/// One-sided search for the largest magnitude P >= 0 with feasible(P) true.
/// Grows the bracket geometrically from `tol`, then bisects. On return P is
/// feasible (or 0 when nothing is) and P + tol is infeasible. `ceiling` must be
/// infeasible.
double one_sided_search(const std::function<bool(double)>& feasible, double tol, double ceiling);

/// Device set with the two start conditions used in every episode: `initial` is
/// the state the dispatched ensemble starts from, `baseline_initial` the state of
/// the thermostat-only reference population.
struct Ensemble {
    std::vector<EwhParams> devices;
    std::vector<EwhState> initial;
    std::vector<EwhState> baseline_initial;

    std::size_t size() const { return devices.size(); }
    double total_rated_power() const;
    double max_rated_power() const;
    void validate() const;
};

/// Heterogeneous devices: volume, rated power and UA jittered uniformly by
/// +-jitter (relative) and setpoint by +-setpoint_jitter (degC) around `nominal`.
/// t_max is raised where needed so that setpoint + deadband stays below it.
std::vector<EwhParams> make_devices(const EwhParams& nominal, std::size_t n, double jitter, double setpoint_jitter,
                                    std::uint64_t seed);

/// All devices at the same normalized deadband position `level` (0 = lower switch,
/// 1 = upper switch), perturbed by +-spread, heating elements off.
std::vector<EwhState> synchronized_start(std::span<const EwhParams> devices, double level, double spread,
                                         std::uint64_t seed);

/// Positions uniform over the deadband; each element is on with probability equal to
/// the device's steady-state duty cycle at setpoint under `draw_rate` (L/min).
std::vector<EwhState> diversified_start(std::span<const EwhParams> devices, double draw_rate, std::uint64_t seed);

/// Everything needed to test one constant-regulation run for a fixed draw sample.
struct PowerLimitProblem {
    std::vector<EwhParams> devices;
    std::vector<EwhState> initial;
    std::vector<std::vector<double>> draws;
    std::vector<double> baseline;
    DispatchConfig config;
    double dt = 1.0;

    std::size_t steps() const { return baseline.size(); }
    /// True when r == signed_power is tracked for the whole horizon.
    bool feasible(double signed_power) const;
};

struct PowerLimitRequest {
    LimitDirection direction = LimitDirection::Upper;
    double duration = 900.0;  // s
    double dt = 1.0;          // s
    double tol = 0.5;         // kW
    int n_draw_samples = 10;
    std::uint64_t seed = 0;
    DispatchConfig dispatch;
    int workers = 1;
};

/// Builds the problem for draw sample `sample`: fresh draws per device, baseline
/// recomputed with the same draws, devices starting from `initial`.
PowerLimitProblem make_power_limit_problem(const Ensemble& ensemble, const WaterDrawModel& draw_model,
                                           const PowerLimitRequest& req, int sample);

/// One power limit (magnitude, kW) per draw sample.
std::vector<double> power_limit_search(const Ensemble& ensemble, const WaterDrawModel& draw_model,
                                       const PowerLimitRequest& req);

}  // namespace fvb
