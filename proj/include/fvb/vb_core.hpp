#pragma once

// Virtual-battery (VB) model: first-order energy state with self-dissipation,
// energy limits [c1, c2] and power limits [p_minus, p_plus].
//
//   dx/dt = -a x(t) - u(t),   c1 <= x <= c2,   p_minus <= u <= p_plus
//
// Units: x, c1, c2 in kWh; u, p_minus, p_plus in kW; a in 1/h; time steps in s.

#include <optional>
#include <span>
#include <vector>

namespace fvb {

struct VBParams {
    double x0 = 0.0;
    double a = 0.0;  // 1/h
    double c1 = 0.0;
    double c2 = 0.0;
    double p_minus = 0.0;
    double p_plus = 0.0;

    void validate() const;
};

struct SignalSeries {
    double dt = 1.0;  // s
    std::vector<double> values;

    void validate() const;
    double duration() const { return dt * static_cast<double>(values.size()); }
};

/// Bounds on time-varying limits over a horizon.
struct LimitEnvelope {
    double c1_lo = 0.0, c1_hi = 0.0;
    double c2_lo = 0.0, c2_hi = 0.0;
    double pm_lo = 0.0, pm_hi = 0.0;
    double pp_lo = 0.0, pp_hi = 0.0;

    void validate() const;
};

/// Limits in force during one step of a time-varying VB.
struct StepLimits {
    double c1 = 0.0, c2 = 0.0;
    double p_minus = 0.0, p_plus = 0.0;
};

struct FeasibilityResult {
    bool feasible = true;
    std::optional<double> failure_time;  // s, time of the first violating step
    std::vector<double> trajectory;      // kWh, states that satisfied the limits
};

/// Forward-Euler integration of the VB at the signal resolution. States are checked
/// against [c1, c2] and inputs against [p_minus, p_plus] at every step boundary
/// (closed intervals); the run stops at the first violation.
FeasibilityResult vb_simulate(const VBParams& params, const SignalSeries& u);

/// Same dynamics with per-step limits; limits.size() must equal u.values.size().
FeasibilityResult vb_time_varying_simulate(double x0, double a, std::span<const StepLimits> limits,
                                           const SignalSeries& u);

/// Smallest static abstraction: any signal it tracks is tracked by every
/// time-varying VB inside the envelope.
VBParams static_sufficient(const LimitEnvelope& env, double x0, double a);

/// Largest static abstraction: a signal it fails to track cannot be tracked by
/// any time-varying VB inside the envelope.
VBParams static_necessary(const LimitEnvelope& env, double x0, double a);

}  // namespace fvb
