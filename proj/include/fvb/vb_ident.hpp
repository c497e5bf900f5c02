#pragma once

// Identification of stochastic virtual-battery parameters from a trained encoder and
// simulated ensemble traces.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fvb/dataset.hpp"
#include "fvb/ewh_sim.hpp"
#include "fvb/io.hpp"
#include "fvb/vae.hpp"
#include "fvb/vb_core.hpp"

namespace fvb {

struct LatentTrajectory {
    double dt = 1.0;  // s
    std::vector<double> mu_z;
    std::vector<double> sigma_z;
    std::int64_t episode_id = 0;

    std::size_t size() const { return mu_z.size(); }
    void validate() const;
};

/// Per-row encoder mean, plus the analytic latent spread for an input distribution
/// N(row, diag(input_variance)) in normalized space. The spread is evaluated on an
/// encoder re-centred at the row, which makes it independent of the row, so it is
/// computed once per trajectory.
LatentTrajectory encode_trajectory(const VaeParams& vae, const RowMatrix& normalized_rows,
                                   const Eigen::VectorXd& input_variance, double dt, std::int64_t episode_id);

/// Latent -> kWh: E = orientation * scale * z + offset.
struct CalibrationMap {
    double scale = 1.0;  // kWh per latent unit
    double offset = 0.0;
    int orientation = 1;

    double apply(double z) const { return orientation * scale * z + offset; }
    std::vector<double> apply(std::span<const double> z) const;
    void validate() const;
};

/// Stored thermal energy relative to each device's inlet temperature, kWh, for
/// steps [0, steps).
std::vector<double> thermal_energy(const EnsembleTrace& trace, std::span<const EwhParams> devices,
                                   std::size_t steps);

/// Pooled least-squares fit of mu_z against the matching energy series.
/// energies[i] must have the length of trajectories[i].
CalibrationMap calibrate_latent(std::span<const LatentTrajectory> trajectories,
                                std::span<const std::vector<double>> energies);

/// Self-dissipation rate (1/h) of x' = -a x - u from a state series x (kWh) and the
/// input applied at each step (kW); x.size() == u.values.size() >= 10. Fitted in
/// integrated form, x_k + sum_{j<k} u_j dt = x_0 - a sum_{j<k} x_j dt, which is exact
/// for Euler-generated data and does not difference the noise. Clamped at 0.
double fit_dissipation(std::span<const double> x, const SignalSeries& u);

struct EpisodeSeries {
    LatentTrajectory trajectory;  // valid (non-truncated) window only
    SignalSeries u;               // same length as the trajectory
};

inline constexpr std::array<const char*, 6> kParamNames{"x0", "a", "c1", "c2", "p_minus", "p_plus"};

struct ParamSamples {
    std::array<std::vector<double>, 6> values;  // indexed like kParamNames

    std::vector<double>& operator[](std::size_t i) { return values[i]; }
    const std::vector<double>& operator[](std::size_t i) const { return values[i]; }
};

/// x0 = calibrated state at t = 0, a from fit_dissipation (episodes shorter than 10
/// steps contribute no a sample), C1/C2 = extrema of the calibrated state; P-/P+
/// are copied from the power-limit search.
ParamSamples collect_param_samples(std::span<const EpisodeSeries> episodes, const CalibrationMap& calib,
                                   std::span<const double> p_minus, std::span<const double> p_plus);

struct ParamDistribution {
    std::string name;
    std::vector<double> samples;
    std::vector<double> grid_x, grid_density;
    double mode = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    double epsilon = 0.05;
    double bandwidth = 0.0;

    /// Fraction of samples inside [ci_lo, ci_hi].
    double coverage() const;
    void validate() const;
};

/// Gaussian KDE (Silverman bandwidth) mode on a 512-point grid spanning the samples
/// +-3 bandwidths; central percentile interval widened to contain the mode. A point
/// mass yields mode = CI = that value and a one-point grid.
ParamDistribution kde_mode_ci(std::span<const double> samples, double epsilon = 0.05, std::string name = {});

double silverman_bandwidth(std::span<const double> samples);

/// Pearson correlation of orientation-applied latent increments with the per-step
/// count of devices warming minus devices cooling.
double state_activity_correlation(const LatentTrajectory& traj, const EnsembleTrace& trace, int orientation = 1);

/// (latent increment, n_rising - n_falling) per step.
std::pair<std::vector<double>, std::vector<double>> state_activity_series(const LatentTrajectory& traj,
                                                                          const EnsembleTrace& trace,
                                                                          int orientation);

double pearson(std::span<const double> x, std::span<const double> y);

struct IdentReport {
    std::vector<ParamDistribution> params;  // ordered like kParamNames
    Json metadata = Json::object();
    std::vector<std::string> warnings;

    const ParamDistribution& at(const std::string& name) const;
};

IdentReport build_report(std::vector<ParamDistribution> distributions, Json metadata = Json::object());

Json report_to_json(const IdentReport& r);

}  // namespace fvb
