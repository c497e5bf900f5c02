#include "fvb/vb_core.hpp"

#include <cmath>
#include <sstream>

#include "fvb/error.hpp"

namespace fvb {

namespace {

constexpr double kSecondsPerHour = 3600.0;

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

template <class LimitsAt>
FeasibilityResult integrate(double x0, double a, const SignalSeries& u, LimitsAt limits_at) {
    u.validate();
    if (!std::isfinite(x0) || !std::isfinite(a)) throw UsageError("vb: non-finite x0 or dissipation rate");

    const double h = u.dt / kSecondsPerHour;
    const std::size_t n = u.values.size();

    FeasibilityResult out;
    out.trajectory.reserve(n + 1);
    double x = x0;
    for (std::size_t k = 0; k <= n; ++k) {
        const StepLimits lim = limits_at(k < n ? k : n - 1);
        if (!within(x, lim.c1, lim.c2)) {
            out.feasible = false;
            out.failure_time = static_cast<double>(k) * u.dt;
            return out;
        }
        out.trajectory.push_back(x);
        if (k == n) break;
        const double uk = u.values[k];
        if (!within(uk, lim.p_minus, lim.p_plus)) {
            out.feasible = false;
            out.failure_time = static_cast<double>(k) * u.dt;
            return out;
        }
        x += h * (-a * x - uk);
    }
    return out;
}

}  // namespace

void VBParams::validate() const {
    for (double v : {x0, a, c1, c2, p_minus, p_plus})
        if (!std::isfinite(v)) throw UsageError("VBParams: non-finite value");
    if (c1 > c2) throw UsageError("VBParams: c1 > c2");
    if (p_minus > p_plus) throw UsageError("VBParams: p_minus > p_plus");
    if (a < 0.0) throw UsageError("VBParams: negative dissipation rate");
    if (x0 < c1 || x0 > c2) throw UsageError("VBParams: x0 outside [c1, c2]");
}

void SignalSeries::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw UsageError("SignalSeries: dt must be positive");
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (!std::isfinite(values[k])) {
            std::ostringstream os;
            os << "SignalSeries: non-finite value at index " << k;
            throw UsageError(os.str());
        }
    }
}

void LimitEnvelope::validate() const {
    if (c1_lo > c1_hi || c2_lo > c2_hi || pm_lo > pm_hi || pp_lo > pp_hi)
        throw UsageError("LimitEnvelope: lower bound above upper bound");
    if (!(c1_hi < c2_lo)) throw UsageError("LimitEnvelope: energy bands overlap (need c1_hi < c2_lo)");
    if (!(pm_hi < pp_lo)) throw UsageError("LimitEnvelope: power bands overlap (need pm_hi < pp_lo)");
}

FeasibilityResult vb_simulate(const VBParams& params, const SignalSeries& u) {
    params.validate();
    if (u.values.empty()) throw UsageError("vb_simulate: empty signal");
    const StepLimits lim{params.c1, params.c2, params.p_minus, params.p_plus};
    return integrate(params.x0, params.a, u, [&](std::size_t) { return lim; });
}

FeasibilityResult vb_time_varying_simulate(double x0, double a, std::span<const StepLimits> limits,
                                           const SignalSeries& u) {
    if (u.values.empty()) throw UsageError("vb_time_varying_simulate: empty signal");
    if (limits.size() != u.values.size())
        throw UsageError("vb_time_varying_simulate: limit series length differs from signal length");
    if (a < 0.0) throw UsageError("vb_time_varying_simulate: negative dissipation rate");
    for (const auto& l : limits)
        if (l.c1 > l.c2 || l.p_minus > l.p_plus)
            throw UsageError("vb_time_varying_simulate: step limit with lo > hi");
    return integrate(x0, a, u, [&](std::size_t k) { return limits[k]; });
}

VBParams static_sufficient(const LimitEnvelope& env, double x0, double a) {
    env.validate();
    return {x0, a, env.c1_hi, env.c2_lo, env.pm_hi, env.pp_lo};
}

VBParams static_necessary(const LimitEnvelope& env, double x0, double a) {
    env.validate();
    return {x0, a, env.c1_lo, env.c2_hi, env.pm_lo, env.pp_hi};
}

}  // namespace fvb
