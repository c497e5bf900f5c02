#pragma once

// Shared generators and reference computations for the unit and acceptance tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fvb/moments.hpp"
#include "fvb/rng.hpp"
#include "fvb/vb_core.hpp"

namespace fvb::testing {

/// Random envelope with c1_hi < c2_lo and pm_hi < pp_lo.
inline LimitEnvelope random_envelope(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LimitEnvelope e;
    e.c1_lo = -10.0 - 10.0 * u(rng);
    e.c1_hi = e.c1_lo + 5.0 * u(rng);
    e.c2_lo = 10.0 + 10.0 * u(rng);
    e.c2_hi = e.c2_lo + 5.0 * u(rng);
    e.pm_lo = -60.0 - 40.0 * u(rng);
    e.pm_hi = e.pm_lo + 20.0 * u(rng);
    e.pp_lo = 60.0 + 40.0 * u(rng);
    e.pp_hi = e.pp_lo + 20.0 * u(rng);
    return e;
}

/// Per-step limits drawn uniformly inside the envelope.
inline std::vector<StepLimits> sample_limits(const LimitEnvelope& e, std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<StepLimits> out(n);
    for (auto& l : out) {
        l.c1 = e.c1_lo + (e.c1_hi - e.c1_lo) * u(rng);
        l.c2 = e.c2_lo + (e.c2_hi - e.c2_lo) * u(rng);
        l.p_minus = e.pm_lo + (e.pm_hi - e.pm_lo) * u(rng);
        l.p_plus = e.pp_lo + (e.pp_hi - e.pp_lo) * u(rng);
    }
    return out;
}

/// Smooth random signal (sum of sinusoids plus noise) whose amplitude is drawn so that
/// both feasible and infeasible cases occur.
inline SignalSeries random_signal(std::size_t n, double dt, double amplitude, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    SignalSeries s;
    s.dt = dt;
    s.values.assign(n, 0.0);
    const double bias = amplitude * (u(rng) - 0.5) * 0.4;
    for (int c = 0; c < 3; ++c) {
        const double period = 200.0 + 3000.0 * u(rng);
        const double phase = 6.283185307179586 * u(rng);
        const double w = amplitude * u(rng) / 3.0;
        for (std::size_t k = 0; k < n; ++k) s.values[k] += w * std::sin(6.283185307179586 * k * dt / period + phase);
    }
    for (auto& v : s.values) v += bias + 0.05 * amplitude * g(rng);
    return s;
}

/// Random encoder with the given widths; B3 = 0 and B4 = 0 unless requested.
inline EncoderWeights random_encoder(int d, int h1, int h2, int h3, Rng& rng, bool with_b4 = false) {
    std::normal_distribution<double> g(0.0, 1.0);
    auto mat = [&](int r, int c) {
        Eigen::MatrixXd m(r, c);
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < r; ++i) m(i, j) = g(rng) / std::sqrt(static_cast<double>(c));
        return m;
    };
    EncoderWeights w;
    w.w1 = mat(h1, d);
    w.b1 = mat(h1, 1).col(0);
    w.w2 = mat(h2, h1);
    w.b2 = mat(h2, 1).col(0);
    w.w3 = mat(h3, h2);
    w.b3 = Eigen::VectorXd::Zero(h3);
    w.w4 = mat(1, h3).row(0);
    w.b4 = with_b4 ? g(rng) : 0.0;
    return w;
}

/// Random SPD covariance with eigenvalues in [lo, hi].
inline Eigen::MatrixXd random_spd(int d, double lo, double hi, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd a(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) a(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd ev(d);
    for (int i = 0; i < d; ++i) ev(i) = u(rng);
    return q * ev.asDiagonal() * q.transpose();
}

}  // namespace fvb::testing
