#include "fvb/vb_ident.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fvb/error.hpp"
#include "fvb/moments.hpp"

namespace fvb {

namespace {

constexpr int kGridPoints = 512;

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sd_of(std::span<const double> v) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Linear-interpolated quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + (pos - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
}

}  // namespace

void LatentTrajectory::validate() const {
    if (mu_z.size() != sigma_z.size()) throw DataError("LatentTrajectory: mu_z and sigma_z lengths differ");
    if (!(dt > 0.0)) throw DataError("LatentTrajectory: dt must be positive");
    for (double s : sigma_z)
        if (!(s >= 0.0)) throw DataError("LatentTrajectory: sigma_z must be non-negative");
}

LatentTrajectory encode_trajectory(const VaeParams& vae, const RowMatrix& rows, const Eigen::VectorXd& input_variance,
                                   double dt, std::int64_t episode_id) {
    if (rows.cols() != vae.input_dim())
        throw UsageError("encode_trajectory: rows have width " + std::to_string(rows.cols()) + ", model expects " +
                         std::to_string(vae.input_dim()));
    if (input_variance.size() != rows.cols()) throw UsageError("encode_trajectory: variance width mismatch");
    LatentTrajectory t;
    t.dt = dt;
    t.episode_id = episode_id;
    if (rows.rows() == 0) return t;
    const auto [mu, lv] = encode_rows(vae, rows);
    t.mu_z.assign(mu.data(), mu.data() + mu.size());
    const Eigen::VectorXd x0 = rows.row(0).transpose();
    const auto lm = latent_moments(centered_at(vae.encoder(), x0), GaussianMoments::diagonal(x0, input_variance));
    t.sigma_z.assign(t.mu_z.size(), lm.sigma_z);
    return t;
}

std::vector<double> CalibrationMap::apply(std::span<const double> z) const {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = apply(z[i]);
    return out;
}

void CalibrationMap::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(offset) || (orientation != 1 && orientation != -1))
        throw NumericalError("CalibrationMap: scale must be positive and orientation +-1");
}

std::vector<double> thermal_energy(const EnsembleTrace& trace, std::span<const EwhParams> devices, std::size_t steps) {
    if (devices.size() != trace.n_devices) throw DataError("thermal_energy: device count differs from trace");
    if (steps > trace.steps()) throw DataError("thermal_energy: trace shorter than requested");
    std::vector<double> e(steps, 0.0);
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t i = 0; i < devices.size(); ++i)
            e[k] += devices[i].thermal_capacity() * (trace.temperature(k, i) - devices[i].t_inlet) / 3600.0;
    return e;
}

CalibrationMap calibrate_latent(std::span<const LatentTrajectory> trajectories,
                                std::span<const std::vector<double>> energies) {
    if (trajectories.size() != energies.size()) throw UsageError("calibrate_latent: one energy series per trajectory");
    if (trajectories.empty()) throw UsageError("calibrate_latent: no trajectories");
    double n = 0.0, se = 0.0, sz = 0.0;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        if (energies[i].size() != trajectories[i].size())
            throw DataError("calibrate_latent: energy series length differs from trajectory");
        for (std::size_t k = 0; k < energies[i].size(); ++k) {
            se += energies[i][k];
            sz += trajectories[i].mu_z[k];
            n += 1.0;
        }
    }
    if (n < 2.0) throw DataError("calibrate_latent: need at least two points");
    const double me = se / n, mz = sz / n;
    double cov = 0.0, vz = 0.0, ve = 0.0;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        for (std::size_t k = 0; k < energies[i].size(); ++k) {
            const double de = energies[i][k] - me, dz = trajectories[i].mu_z[k] - mz;
            cov += de * dz;
            vz += dz * dz;
            ve += de * de;
        }
    if (!(vz > 1e-300 * n)) throw NumericalError("calibrate_latent: latent series has zero variance");
    if (!(ve > 1e-300 * n) || cov == 0.0) throw NumericalError("calibrate_latent: latent does not vary with energy");
    // z = alpha E + beta  =>  E = (z - beta) / alpha
    const double alpha = cov / ve;
    const double beta = mz - alpha * me;
    CalibrationMap c;
    c.orientation = alpha > 0.0 ? 1 : -1;
    c.scale = 1.0 / std::abs(alpha);
    c.offset = -beta / alpha;
    c.validate();
    return c;
}

double fit_dissipation(std::span<const double> x, const SignalSeries& u) {
    u.validate();
    if (x.size() != u.values.size()) throw UsageError("fit_dissipation: state and input lengths differ");
    if (x.size() < 10) throw UsageError("fit_dissipation: need at least 10 steps");
    if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; }))
        throw NumericalError("fit_dissipation: all-zero state series, a is unidentifiable");
    const double h = u.dt / 3600.0;
    const std::size_t n = x.size();
    std::vector<double> s(n), y(n);
    double sx = 0.0, su = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        s[k] = sx;
        y[k] = x[k] + su;
        sx += h * x[k];
        su += h * u.values[k];
    }
    const double ms = mean_of(s), my = mean_of(y);
    double cov = 0.0, var = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        cov += (s[k] - ms) * (y[k] - my);
        var += (s[k] - ms) * (s[k] - ms);
    }
    if (!(var > 0.0)) throw NumericalError("fit_dissipation: integrated state has zero variance");
    return std::max(0.0, -cov / var);
}

ParamSamples collect_param_samples(std::span<const EpisodeSeries> episodes, const CalibrationMap& calib,
                                   std::span<const double> p_minus, std::span<const double> p_plus) {
    if (episodes.empty()) throw UsageError("collect_param_samples: no episodes");
    calib.validate();
    ParamSamples out;
    for (const auto& ep : episodes) {
        ep.trajectory.validate();
        if (ep.trajectory.size() == 0) continue;
        if (ep.u.values.size() != ep.trajectory.size())
            throw DataError("collect_param_samples: input length differs from trajectory");
        const auto x = calib.apply(ep.trajectory.mu_z);
        out[0].push_back(x.front());
        if (x.size() >= 10) out[1].push_back(fit_dissipation(x, ep.u));
        const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
        out[2].push_back(*lo);
        out[3].push_back(*hi);
    }
    out[4].assign(p_minus.begin(), p_minus.end());
    out[5].assign(p_plus.begin(), p_plus.end());
    return out;
}

double silverman_bandwidth(std::span<const double> samples) {
    if (samples.empty()) throw UsageError("silverman_bandwidth: no samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double sd = sd_of(sorted);
    const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) spread = sd;
    return 0.9 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

double ParamDistribution::coverage() const {
    if (samples.empty()) return 0.0;
    const auto inside = std::count_if(samples.begin(), samples.end(), [&](double s) { return s >= ci_lo && s <= ci_hi; });
    return static_cast<double>(inside) / static_cast<double>(samples.size());
}

void ParamDistribution::validate() const {
    if (samples.empty()) throw DataError("ParamDistribution " + name + ": no samples");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw DataError("ParamDistribution " + name + ": epsilon outside (0, 1)");
    if (!(ci_lo <= mode && mode <= ci_hi)) throw DataError("ParamDistribution " + name + ": mode outside CI");
    if (coverage() < 1.0 - epsilon) throw DataError("ParamDistribution " + name + ": CI holds less than 1 - epsilon");
}

ParamDistribution kde_mode_ci(std::span<const double> samples, double epsilon, std::string name) {
    if (samples.empty()) throw UsageError("kde_mode_ci: no samples");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw UsageError("kde_mode_ci: epsilon must lie in (0, 1)");
    for (double s : samples)
        if (!std::isfinite(s)) throw DataError("kde_mode_ci: non-finite sample");
    ParamDistribution d;
    d.name = std::move(name);
    d.epsilon = epsilon;
    d.samples.assign(samples.begin(), samples.end());
    std::vector<double> sorted = d.samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();

    if (sorted.front() == sorted.back()) {
        d.mode = d.ci_lo = d.ci_hi = sorted.front();
        d.grid_x = {d.mode};
        d.grid_density = {1.0};
        return d;
    }

    const double h = silverman_bandwidth(sorted);
    d.bandwidth = h;
    const double lo = sorted.front() - 3.0 * h, hi = sorted.back() + 3.0 * h;
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
    d.grid_x.resize(kGridPoints);
    d.grid_density.resize(kGridPoints);
    std::size_t best = 0;
    for (int g = 0; g < kGridPoints; ++g) {
        const double x = lo + (hi - lo) * g / (kGridPoints - 1);
        // Only samples within 8 bandwidths contribute measurably.
        const auto first = std::lower_bound(sorted.begin(), sorted.end(), x - 8.0 * h);
        const auto last = std::upper_bound(first, sorted.end(), x + 8.0 * h);
        double acc = 0.0;
        for (auto it = first; it != last; ++it) {
            const double u = (x - *it) / h;
            acc += std::exp(-0.5 * u * u);
        }
        d.grid_x[static_cast<std::size_t>(g)] = x;
        d.grid_density[static_cast<std::size_t>(g)] = acc * norm;
        if (d.grid_density[static_cast<std::size_t>(g)] > d.grid_density[best]) best = static_cast<std::size_t>(g);
    }
    d.mode = d.grid_x[best];

    const double nd = static_cast<double>(n);
    const auto k_lo = static_cast<std::size_t>(std::floor(nd * epsilon / 2.0));
    auto k_hi = static_cast<std::size_t>(std::max(0.0, std::ceil(nd * (1.0 - epsilon / 2.0)) - 1.0));
    k_hi = std::clamp(k_hi, k_lo, n - 1);
    d.ci_lo = std::min(sorted[k_lo], d.mode);
    d.ci_hi = std::max(sorted[k_hi], d.mode);
    d.validate();
    return d;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw UsageError("pearson: length mismatch");
    if (x.size() < 2) throw NumericalError("pearson: need at least two points");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericalError("pearson: zero-variance series");
    return sxy / std::sqrt(sxx * syy);
}

std::pair<std::vector<double>, std::vector<double>> state_activity_series(const LatentTrajectory& traj,
                                                                          const EnsembleTrace& trace,
                                                                          int orientation) {
    if (orientation != 1 && orientation != -1) throw UsageError("state_activity: orientation must be +-1");
    if (traj.size() > trace.steps()) throw UsageError("state_activity: trajectory longer than trace");
    if (traj.size() < 2) throw UsageError("state_activity: need at least two steps");
    std::vector<double> dz(traj.size() - 1), act(traj.size() - 1);
    for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
        dz[k] = orientation * (traj.mu_z[k + 1] - traj.mu_z[k]);
        int balance = 0;
        for (std::size_t i = 0; i < trace.n_devices; ++i) {
            const double d = trace.temperature(k + 1, i) - trace.temperature(k, i);
            balance += (d > 0.0) - (d < 0.0);
        }
        act[k] = balance;
    }
    return {dz, act};
}

double state_activity_correlation(const LatentTrajectory& traj, const EnsembleTrace& trace, int orientation) {
    const auto [dz, act] = state_activity_series(traj, trace, orientation);
    return pearson(dz, act);
}

const ParamDistribution& IdentReport::at(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw UsageError("IdentReport: no parameter " + name);
}

IdentReport build_report(std::vector<ParamDistribution> distributions, Json metadata) {
    IdentReport r;
    r.metadata = std::move(metadata);
    for (const char* name : kParamNames) {
        const auto it = std::find_if(distributions.begin(), distributions.end(),
                                     [&](const ParamDistribution& d) { return d.name == name; });
        if (it == distributions.end()) throw DataError(std::string("build_report: missing parameter ") + name);
        it->validate();
        r.params.push_back(std::move(*it));
    }
    if (distributions.size() != kParamNames.size())
        throw DataError("build_report: expected exactly " + std::to_string(kParamNames.size()) + " parameters");
    if (r.at("c1").mode > r.at("c2").mode) r.warnings.emplace_back("c1 mode exceeds c2 mode");
    if (r.at("p_minus").mode > r.at("p_plus").mode) r.warnings.emplace_back("p_minus mode exceeds p_plus mode");
    r.metadata["warnings"] = r.warnings;
    return r;
}

Json report_to_json(const IdentReport& r) {
    Json params = Json::object();
    for (const auto& d : r.params) {
        params[d.name] = {{"mode", d.mode},
                          {"ci_lo", d.ci_lo},
                          {"ci_hi", d.ci_hi},
                          {"epsilon", d.epsilon},
                          {"coverage", d.coverage()},
                          {"bandwidth", d.bandwidth},
                          {"n_samples", d.samples.size()},
                          {"samples", d.samples},
                          {"density", {{"x", d.grid_x}, {"y", d.grid_density}}}};
    }
    return {{"parameters", params}, {"metadata", r.metadata}};
}

}  // namespace fvb
