#include "fvb/moments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "fvb/error.hpp"
#include "fvb/rng.hpp"

namespace fvb {

namespace {

bool is_zero(const Eigen::VectorXd& v, double tol) { return v.size() == 0 || v.cwiseAbs().maxCoeff() <= tol; }

double moment_scale(const GaussianMoments& g) {
    double s = 1.0;
    if (g.dim() > 0) s = std::max({s, g.mean.cwiseAbs().maxCoeff(), std::sqrt(g.cov.diagonal().cwiseAbs().maxCoeff())});
    return s;
}

// Matrix A with A A^T = cov, via the symmetric eigen-decomposition (tolerates
// singular covariances).
Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& cov) {
    if (cov.size() == 0) return cov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("mc_oracle: eigen-decomposition failed");
    const auto& lambda = eig.eigenvalues();
    const double tol = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -tol) throw NumericalError("mc_oracle: covariance is not positive semidefinite");
    return eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// q(Y) = W4 relu(W3 Y + B3) + B4 with explicit loops.
double head_loops(const EncoderWeights& w, const std::vector<double>& y) {
    double z = w.b4;
    const auto h3 = w.w3.rows(), h2 = w.w3.cols();
    for (Eigen::Index j = 0; j < h3; ++j) {
        double a = w.b3(j);
        for (Eigen::Index i = 0; i < h2; ++i) a += w.w3(j, i) * y[static_cast<std::size_t>(i)];
        if (a > 0.0) z += w.w4(j) * a;
    }
    return z;
}

std::vector<double> affine_loops(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const std::vector<double>& x) {
    std::vector<double> out(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double a = b(r);
        for (Eigen::Index c = 0; c < w.cols(); ++c) a += w(r, c) * x[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(r)] = a;
    }
    return out;
}

template <class Eval>
McEstimate monte_carlo(const GaussianMoments& g, std::size_t n, std::uint64_t seed, Eval eval) {
    if (n < 10000) throw UsageError("mc_oracle: need at least 1e4 samples");
    g.validate();
    const Eigen::MatrixXd a = sampling_factor(g.cov);
    const auto d = static_cast<std::size_t>(g.dim());
    Rng rng(derive_seed(seed, {0x3c0ULL}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(d), x(d), q(n);
    for (std::size_t s = 0; s < n; ++s) {
        for (auto& e : eps) e = normal(rng);
        for (std::size_t r = 0; r < d; ++r) {
            double v = g.mean(static_cast<Eigen::Index>(r));
            for (std::size_t c = 0; c < d; ++c) v += a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * eps[c];
            x[r] = v;
        }
        q[s] = eval(x);
    }
    const double dn = static_cast<double>(n);
    double m1 = 0.0, m2 = 0.0;
    for (double v : q) {
        m1 += v;
        m2 += v * v;
    }
    m1 /= dn;
    m2 /= dn;
    double c2 = 0.0, c4 = 0.0, v2 = 0.0;
    for (double v : q) {
        const double dv = (v - m1) * (v - m1);
        c2 += dv;
        c4 += dv * dv;
        const double sq = v * v - m2;
        v2 += sq * sq;
    }
    c2 /= dn;
    c4 /= dn;
    v2 /= dn;
    McEstimate est;
    est.mean = m1;
    est.mean_se = std::sqrt(c2 / dn);
    est.second_moment = m2;
    est.second_moment_se = std::sqrt(v2 / dn);
    est.sd = std::sqrt(c2);
    // Delta method on the sample variance.
    est.sd_se = est.sd > 0.0 ? std::sqrt(std::max(0.0, c4 - c2 * c2) / dn) / (2.0 * est.sd) : 0.0;
    return est;
}

}  // namespace

GaussianMoments GaussianMoments::diagonal(Eigen::VectorXd mean, const Eigen::VectorXd& variance) {
    if (mean.size() != variance.size()) throw UsageError("GaussianMoments: mean/variance size mismatch");
    GaussianMoments g;
    g.mean = std::move(mean);
    g.cov = variance.asDiagonal();
    return g;
}

void GaussianMoments::validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw UsageError("GaussianMoments: covariance shape does not match mean");
    const double tol = 1e-9 * std::max(1.0, cov.cwiseAbs().maxCoeff());
    if (!cov.isApprox(cov.transpose(), 1e-12) && (cov - cov.transpose()).cwiseAbs().maxCoeff() > tol)
        throw UsageError("GaussianMoments: covariance is not symmetric");
    if (dim() > 0 && cov.diagonal().minCoeff() < -tol)
        throw UsageError("GaussianMoments: negative variance");
}

void EncoderWeights::validate() const {
    if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows() || w3.cols() != w2.rows() ||
        b3.size() != w3.rows() || w4.size() != w3.rows())
        throw UsageError("EncoderWeights: layer dimensions do not chain");
}

double EncoderWeights::forward(const Eigen::VectorXd& x) const {
    validate();
    if (x.size() != input_dim()) throw UsageError("EncoderWeights::forward: input width mismatch");
    const Eigen::VectorXd y = w2 * (w1 * x + b1) + b2;
    return w4.dot((w3 * y + b3).cwiseMax(0.0)) + b4;
}

GaussianMoments affine_propagate(const GaussianMoments& g, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    if (w.cols() != g.dim() || b.size() != w.rows()) throw UsageError("affine_propagate: dimension mismatch");
    GaussianMoments out;
    out.mean = w * g.mean + b;
    out.cov = w * g.cov * w.transpose();
    return out;
}

GaussianMoments propagate_to_y(const GaussianMoments& x, const EncoderWeights& w, PropagationMode mode) {
    w.validate();
    if (x.dim() != w.input_dim()) throw UsageError("propagate_to_y: input dimension mismatch");
    if (mode == PropagationMode::Exact) return affine_propagate(affine_propagate(x, w.w1, w.b1), w.w2, w.b2);

    const Eigen::VectorXd sx = x.cov.diagonal();
    Eigen::MatrixXd off = x.cov;
    off.diagonal().setZero();
    if (!off.isZero(0.0)) throw UsageError("propagate_to_y: simplified mode needs a diagonal input covariance");
    const auto h2 = w.w2.rows();
    Eigen::VectorXd s;
    if (sx.size() > 0 && (sx.array() == sx(0)).all())
        s = Eigen::VectorXd::Constant(h2, sx(0));
    else if (sx.size() == h2)
        s = sx;
    else
        throw UsageError("propagate_to_y: simplified mode needs an isotropic input covariance or dim(X) == dim(Y)");
    GaussianMoments y;
    y.mean = w.w2 * w.w1 * x.mean + ((1.0 - s.array()) * (w.w2 * w.b1 + w.b2).array()).matrix();
    y.cov = s.asDiagonal();
    return y;
}

Eigen::VectorXd design_b2(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2, const Eigen::VectorXd& b1,
                          const Eigen::VectorXd& mu_x, const Eigen::VectorXd& sigma_x) {
    if (w2.cols() != w1.rows() || b1.size() != w1.rows() || mu_x.size() != w1.cols())
        throw UsageError("design_b2: dimension mismatch");
    const auto h2 = w2.rows();
    if (sigma_x.size() != 1 && sigma_x.size() != h2)
        throw UsageError("design_b2: sigma_x must hold one value or one per component of Y");
    const Eigen::VectorXd drive = w2 * (w1 * mu_x);
    const bool zero_mean = mu_x.isZero(0.0);
    Eigen::VectorXd b2 = -w2 * b1;
    for (Eigen::Index i = 0; i < h2; ++i) {
        const double denom = 1.0 - (sigma_x.size() == 1 ? sigma_x(0) : sigma_x(i));
        if (zero_mean) continue;
        if (denom == 0.0) throw NumericalError("design_b2: Sigma_X = 1 with nonzero mu_X makes B2 undefined");
        b2(i) -= drive(i) / denom;
    }
    return b2;
}

EncoderWeights centered_at(const EncoderWeights& w, const Eigen::VectorXd& mu_x) {
    w.validate();
    if (mu_x.size() != w.input_dim()) throw UsageError("centered_at: input dimension mismatch");
    EncoderWeights out = w;
    out.b2 = -w.w2 * (w.w1 * mu_x + w.b1);
    return out;
}

double relu_gaussian_mean(double mu, double sigma) {
    if (sigma < 0.0) throw UsageError("relu_gaussian_mean: negative sigma");
    if (sigma == 0.0) return std::max(mu, 0.0);
    // mu Phi(mu/sigma) + sigma phi(mu/sigma); erfc keeps the left tail accurate.
    const double v = 0.5 * mu * std::erfc(-mu / (std::numbers::sqrt2 * sigma)) +
                     sigma / std::sqrt(2.0 * std::numbers::pi) * std::exp(-mu * mu / (2.0 * sigma * sigma));
    return std::max(v, 0.0);
}

double encoder_first_moment(const EncoderWeights& w, const GaussianMoments& y) {
    w.validate();
    if (y.dim() != w.w3.cols()) throw UsageError("encoder_first_moment: dimension mismatch");
    const Eigen::VectorXd mu = w.w3 * y.mean + w.b3;
    const Eigen::VectorXd var = (w.w3 * y.cov * w.w3.transpose()).diagonal();
    double e = w.b4;
    for (Eigen::Index j = 0; j < mu.size(); ++j) e += w.w4(j) * relu_gaussian_mean(mu(j), std::sqrt(std::max(0.0, var(j))));
    return e;
}

double encoder_second_moment(const EncoderWeights& w, const GaussianMoments& y) {
    w.validate();
    if (y.dim() != w.w3.cols()) throw UsageError("encoder_second_moment: dimension mismatch");
    if (!is_zero(y.mean, 1e-9 * moment_scale(y))) throw UsageError("encoder_second_moment: requires zero-mean Y");
    if (!is_zero(w.b3, 1e-12)) throw UsageError("encoder_second_moment: requires B3 = 0");

    const Eigen::MatrixXd cov = w.w3 * y.cov * w.w3.transpose();
    const auto h = cov.rows();
    Eigen::VectorXd sd(h);
    for (Eigen::Index j = 0; j < h; ++j) sd(j) = std::sqrt(std::max(0.0, cov(j, j)));

    constexpr double two_pi = 2.0 * std::numbers::pi;
    double cross = 0.0;
    for (Eigen::Index j1 = 0; j1 < h; ++j1) {
        for (Eigen::Index j2 = 0; j2 < j1; ++j2) {
            const double s12 = sd(j1) * sd(j2);
            if (s12 == 0.0) continue;
            const double c = cov(j1, j2);
            const double rho = std::clamp(c / s12, -1.0, 1.0);
            const double kernel = c / two_pi * std::asin(rho) + s12 / two_pi * std::sqrt(1.0 - rho * rho) + c / 4.0;
            cross += w.w4(j1) * w.w4(j2) * kernel;
        }
    }
    double diag = 0.0;
    for (Eigen::Index r = 0; r < h; ++r) diag += w.w4(r) * w.w4(r) * sd(r) * sd(r);
    return 2.0 * cross + 0.5 * diag + w.b4;
}

LatentMoments latent_moments(const EncoderWeights& w, const GaussianMoments& x) {
    x.validate();
    const GaussianMoments y = propagate_to_y(x, w, PropagationMode::Exact);
    if (!is_zero(y.mean, 1e-8 * moment_scale(y)))
        throw UsageError("latent_moments: Y must have zero mean (centre the encoder with centered_at)");
    EncoderWeights shifted = w;
    shifted.b4 = 0.0;
    const double m1 = encoder_first_moment(shifted, y);
    const double m2 = encoder_second_moment(shifted, y);
    return {m1 + w.b4, std::sqrt(std::max(0.0, m2 - m1 * m1))};
}

McEstimate mc_oracle(const EncoderWeights& w, const GaussianMoments& x, std::size_t n, std::uint64_t seed) {
    w.validate();
    if (x.dim() != w.input_dim()) throw UsageError("mc_oracle: input dimension mismatch");
    return monte_carlo(x, n, seed, [&](const std::vector<double>& xs) {
        return head_loops(w, affine_loops(w.w2, w.b2, affine_loops(w.w1, w.b1, xs)));
    });
}

McEstimate mc_oracle_y(const EncoderWeights& w, const GaussianMoments& y, std::size_t n, std::uint64_t seed) {
    w.validate();
    if (y.dim() != w.w3.cols()) throw UsageError("mc_oracle_y: dimension mismatch");
    return monte_carlo(y, n, seed, [&](const std::vector<double>& ys) { return head_loops(w, ys); });
}

}  // namespace fvb
