#pragma once

// Analytic Gaussian moment propagation through the encoder
//
//   X --(affine W1,B1)--> --(affine W2,B2)--> Y --(affine W3,B3)--> relu --(affine W4,B4)--> z
//
// The first moment of z follows the rectified-Gaussian mean of each hidden unit.
// The second moment uses the bivariate arcsine kernel and requires a zero-mean Y
// and B3 = 0.

#include <Eigen/Dense>
#include <cstdint>

namespace fvb {

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // symmetric PSD

    Eigen::Index dim() const { return mean.size(); }
    static GaussianMoments diagonal(Eigen::VectorXd mean, const Eigen::VectorXd& variance);
    void validate() const;
};

struct EncoderWeights {
    Eigen::MatrixXd w1;  // h1 x d
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // h2 x h1
    Eigen::VectorXd b2;
    Eigen::MatrixXd w3;  // h3 x h2
    Eigen::VectorXd b3;
    Eigen::RowVectorXd w4;  // 1 x h3
    double b4 = 0.0;

    Eigen::Index input_dim() const { return w1.cols(); }
    void validate() const;
    /// Deterministic forward pass z = q(W2 (W1 x + B1) + B2).
    double forward(const Eigen::VectorXd& x) const;
};

struct LatentMoments {
    double mu_z = 0.0;
    double sigma_z = 0.0;
};

enum class PropagationMode {
    Exact,       // mean' = W mean + b, cov' = W cov W^T
    Simplified,  // two stacked affines: Sigma_Y = Sigma_X, mu_Y = W2 W1 mu_X + (1 - Sigma_X)(W2 B1 + B2)
};

GaussianMoments affine_propagate(const GaussianMoments& g, const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

/// X -> Y through (W1, B1) then (W2, B2). In Simplified mode the input covariance must be
/// diagonal and is applied elementwise; it is broadcast when isotropic, otherwise its
/// dimension has to equal dim(Y).
GaussianMoments propagate_to_y(const GaussianMoments& x, const EncoderWeights& w, PropagationMode mode);

/// B2 = -W2 W1 mu_X / (1 - Sigma_X) - W2 B1, elementwise. sigma_x holds either one
/// value (broadcast) or one per component of Y.
Eigen::VectorXd design_b2(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2, const Eigen::VectorXd& b1,
                          const Eigen::VectorXd& mu_x, const Eigen::VectorXd& sigma_x);

/// Copy of `w` whose B2 makes the exact Y mean vanish for input mean mu_x.
EncoderWeights centered_at(const EncoderWeights& w, const Eigen::VectorXd& mu_x);

/// E[max(g, 0)] for g ~ N(mu, sigma^2).
double relu_gaussian_mean(double mu, double sigma);

/// E[q(Y)] for Y ~ N(mean, cov).
double encoder_first_moment(const EncoderWeights& w, const GaussianMoments& y);

/// E[q(Y)^2] for Y ~ N(0, cov) and B3 = 0, as the double sum over hidden-unit pairs
/// plus the diagonal term plus B4 (B4 enters linearly, exactly as printed).
double encoder_second_moment(const EncoderWeights& w, const GaussianMoments& y);

/// (mu_z, sigma_z) for X ~ N(mean, cov). Y is obtained by exact propagation and must
/// have zero mean (use centered_at). sigma_z is evaluated with B4 removed, since a
/// constant shift does not change the spread of z.
LatentMoments latent_moments(const EncoderWeights& w, const GaussianMoments& x);

struct McEstimate {
    double mean = 0.0;
    double mean_se = 0.0;
    double second_moment = 0.0;
    double second_moment_se = 0.0;
    double sd = 0.0;
    double sd_se = 0.0;

    LatentMoments latent() const { return {mean, sd}; }
};

/// Monte-Carlo reference: samples X ~ N(mean, cov) and pushes each sample through
/// the network with plain loops. n >= 1e4.
McEstimate mc_oracle(const EncoderWeights& w, const GaussianMoments& x, std::size_t n, std::uint64_t seed);

/// Same, sampling Y directly and evaluating q(Y).
McEstimate mc_oracle_y(const EncoderWeights& w, const GaussianMoments& y, std::size_t n, std::uint64_t seed);

}  // namespace fvb
