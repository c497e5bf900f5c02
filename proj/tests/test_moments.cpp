#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "fvb/error.hpp"
#include "fvb/moments.hpp"
#include "support.hpp"

using namespace fvb;
using Catch::Approx;

namespace {

// erf at x = -6, -5.75, ..., 6 to 22 significant digits (40-digit arithmetic).
const double kErfTable[][2] = {
    {-6.0, -0.9999999999999999784803},
    {-5.75, -0.9999999999999995767863},
    {-5.5, -0.9999999999999926421521},
    {-5.25, -0.9999999999998868968673},
    {-5.0, -0.9999999999984625402056},
    {-4.75, -0.9999999999815149522785},
    {-4.5, -0.9999999998033839558457},
    {-4.25, -0.9999999981494258626133},
    {-4.0, -0.99999998458274209972},
    {-3.75, -0.9999998862727434302033},
    {-3.5, -0.9999992569016276585873},
    {-3.25, -0.9999956972205363248782},
    {-3.0, -0.9999779095030014145586},
    {-2.75, -0.9998993780778803631631},
    {-2.5, -0.9995930479825550410604},
    {-2.25, -0.9985372834133188483021},
    {-2.0, -0.9953222650189527341621},
    {-1.75, -0.9866716712191824437722},
    {-1.5, -0.966105146475310727067},
    {-1.25, -0.9229001282564582301365},
    {-1.0, -0.8427007929497148693412},
    {-0.75, -0.7111556336535151315989},
    {-0.5, -0.5204998778130465376827},
    {-0.25, -0.2763263901682369329851},
    {0.0, 0.0},
    {0.25, 0.2763263901682369329851},
    {0.5, 0.5204998778130465376827},
    {0.75, 0.7111556336535151315989},
    {1.0, 0.8427007929497148693412},
    {1.25, 0.9229001282564582301365},
    {1.5, 0.966105146475310727067},
    {1.75, 0.9866716712191824437722},
    {2.0, 0.9953222650189527341621},
    {2.25, 0.9985372834133188483021},
    {2.5, 0.9995930479825550410604},
    {2.75, 0.9998993780778803631631},
    {3.0, 0.9999779095030014145586},
    {3.25, 0.9999956972205363248782},
    {3.5, 0.9999992569016276585873},
    {3.75, 0.9999998862727434302033},
    {4.0, 0.99999998458274209972},
    {4.25, 0.9999999981494258626133},
    {4.5, 0.9999999998033839558457},
    {4.75, 0.9999999999815149522785},
    {5.0, 0.9999999999984625402056},
    {5.25, 0.9999999999998868968673},
    {5.5, 0.9999999999999926421521},
    {5.75, 0.9999999999999995767863},
    {6.0, 0.9999999999999999784803}
};

// Scalar chain d = h1 = h2 = 1 with identity affines, so Y = X.
EncoderWeights chain(const Eigen::MatrixXd& w3, const Eigen::RowVectorXd& w4, double b4 = 0.0) {
    EncoderWeights w;
    w.w1 = Eigen::MatrixXd::Identity(w3.cols(), w3.cols());
    w.b1 = Eigen::VectorXd::Zero(w3.cols());
    w.w2 = Eigen::MatrixXd::Identity(w3.cols(), w3.cols());
    w.b2 = Eigen::VectorXd::Zero(w3.cols());
    w.w3 = w3;
    w.b3 = Eigen::VectorXd::Zero(w3.rows());
    w.w4 = w4;
    w.b4 = b4;
    return w;
}

GaussianMoments gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) { return {std::move(mean), std::move(cov)}; }

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }
Eigen::RowVectorXd r1(double v) { return Eigen::RowVectorXd::Constant(1, v); }

}  // namespace

TEST_CASE("std::erf agrees with the high-precision table on [-6, 6]") {
    for (const auto& row : kErfTable) CHECK(std::abs(std::erf(row[0]) - row[1]) <= 1e-12);
}

TEST_CASE("rectified Gaussian mean: closed-form cases") {
    CHECK(relu_gaussian_mean(0.0, 1.0) == Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-14));
    CHECK(std::abs(relu_gaussian_mean(10.0, 1.0) - 10.0) < 1e-6);
    CHECK(relu_gaussian_mean(2.5, 0.0) == 2.5);
    CHECK(relu_gaussian_mean(-2.5, 0.0) == 0.0);
    CHECK_THROWS_AS(relu_gaussian_mean(0.0, -1.0), UsageError);
}

TEST_CASE("rectified Gaussian mean at mu = -1 agrees with sampling") {
    Rng rng(99);
    std::normal_distribution<double> g(-1.0, 1.0);
    const int n = 10'000'000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = std::max(g(rng), 0.0);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    const double exact = relu_gaussian_mean(-1.0, 1.0);
    CHECK(exact == Approx(0.08331547058768629).epsilon(1e-12));
    CHECK(std::abs(exact - mean) <= 3.0 * se);
    CHECK(std::abs(0.083331 - mean) <= 3.0 * se);
}

TEST_CASE("rectified Gaussian mean is monotone up to rounding") {
    for (double sigma : {0.1, 0.5, 1.0, 3.0}) {
        double prev = -1.0;
        for (double mu = -5.0; mu <= 5.0; mu += 0.05) {
            const double v = relu_gaussian_mean(mu, sigma);
            CHECK(v >= prev - 1e-15);
            prev = v;
        }
    }
    for (double mu : {-3.0, -1.0, -0.1, 0.0}) {
        double prev = -1.0;
        for (double sigma = 0.0; sigma <= 5.0; sigma += 0.05) {
            const double v = relu_gaussian_mean(mu, sigma);
            CHECK(v >= prev - 1e-15);
            prev = v;
        }
    }
}

TEST_CASE("exact affine propagation") {
    const auto g = gaussian(Eigen::Vector2d(1.0, 1.0), Eigen::Matrix2d::Identity());
    Eigen::MatrixXd w(1, 2);
    w << 1.0, 1.0;
    const auto out = affine_propagate(g, w, Eigen::VectorXd::Zero(1));
    CHECK(out.mean(0) == 2.0);
    CHECK(out.cov(0, 0) == 2.0);

    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        const auto cov = testing::random_spd(4, 0.1, 2.0, rng);
        const auto in = gaussian(Eigen::VectorXd::Random(4), cov);
        const Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 4);
        const Eigen::VectorXd b = Eigen::VectorXd::Random(3);
        const auto o = affine_propagate(in, a, b);
        CHECK((o.mean - (a * in.mean + b)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((o.cov - a * cov * a.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS_AS(affine_propagate(g, Eigen::MatrixXd::Ones(1, 3), Eigen::VectorXd::Zero(1)), UsageError);
}

TEST_CASE("exact affine propagation agrees with sampling") {
    Rng rng(17);
    const auto cov = testing::random_spd(5, 0.2, 1.5, rng);
    const Eigen::VectorXd mean = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    Eigen::MatrixXd a(5, 5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 25; ++i) a.data()[i] = g(rng);
    const Eigen::VectorXd b = Eigen::VectorXd::Constant(5, 0.3);
    const auto o = affine_propagate(gaussian(mean, cov), a, b);

    const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
    const int n = 1'000'000;
    Eigen::VectorXd s = Eigen::VectorXd::Zero(5), s2 = Eigen::VectorXd::Zero(5);
    Eigen::VectorXd e(5);
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < 5; ++i) e(i) = g(rng);
        const Eigen::VectorXd y = a * (mean + l * e) + b;
        s += y;
        s2 += y.cwiseProduct(y);
    }
    const Eigen::VectorXd mc_mean = s / n;
    const Eigen::VectorXd mc_var = s2 / n - mc_mean.cwiseProduct(mc_mean);
    for (int i = 0; i < 5; ++i) {
        const double var = o.cov(i, i);
        CHECK(std::abs(mc_mean(i) - o.mean(i)) <= 3.0 * std::sqrt(var / n));
        // Var of the sample variance of a Gaussian: 2 sigma^4 / n.
        CHECK(std::abs(mc_var(i) - var) <= 3.0 * std::sqrt(2.0 * var * var / n));
    }
}

TEST_CASE("B2 design zeroes the mean in the closed-form propagation") {
    Rng rng(3);
    const auto w = testing::random_encoder(4, 6, 5, 3, rng);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd b2z = design_b2(w.w1, w.w2, w.b1, zero, Eigen::VectorXd::Constant(1, 0.5));
    CHECK((b2z + w.w2 * w.b1).cwiseAbs().maxCoeff() < 1e-15);

    const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(4, -2.0, 3.0);
    for (bool zero_mean : {true, false}) {
        const Eigen::VectorXd m = zero_mean ? zero : mu;
        auto wd = w;
        wd.b2 = design_b2(w.w1, w.w2, w.b1, m, Eigen::VectorXd::Constant(1, 0.5));
        const auto y = propagate_to_y(GaussianMoments::diagonal(m, Eigen::VectorXd::Constant(4, 0.5)), wd,
                                      PropagationMode::Simplified);
        CHECK(y.mean.norm() < 1e-10);
        CHECK(y.cov.isApprox(Eigen::MatrixXd::Identity(5, 5) * 0.5));
    }
    CHECK_THROWS_AS(design_b2(w.w1, w.w2, w.b1, mu, Eigen::VectorXd::Constant(1, 1.0)), NumericalError);
    CHECK_NOTHROW(design_b2(w.w1, w.w2, w.b1, zero, Eigen::VectorXd::Constant(1, 1.0)));
    CHECK_THROWS_AS(design_b2(w.w1, w.w2, w.b1, mu, Eigen::VectorXd::Constant(3, 0.5)), UsageError);
}

TEST_CASE("centring gives a zero-mean Y under exact propagation") {
    Rng rng(8);
    const auto w = testing::random_encoder(3, 5, 4, 3, rng);
    const Eigen::VectorXd mu(Eigen::Vector3d(0.4, -1.2, 2.0));
    const auto y = propagate_to_y(GaussianMoments::diagonal(mu, Eigen::VectorXd::Constant(3, 0.3)),
                                  centered_at(w, mu), PropagationMode::Exact);
    CHECK(y.mean.norm() < 1e-12);
}

TEST_CASE("first moment: closed-form cases") {
    const auto y = gaussian(Eigen::VectorXd::Zero(1), m1(1.0));
    CHECK(encoder_first_moment(chain(m1(1.0), r1(1.0)), y) == Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)));
    CHECK(encoder_first_moment(chain(m1(1.0), r1(0.0), 7.0), y) == 7.0);
    CHECK_THROWS_AS(encoder_first_moment(chain(m1(1.0), r1(1.0)), gaussian(Eigen::VectorXd::Zero(2), Eigen::Matrix2d::Identity())),
                    UsageError);
}

TEST_CASE("first moment agrees with sampling on random nets") {
    Rng rng(12);
    for (int t = 0; t < 5; ++t) {
        const auto w = testing::random_encoder(4, 6, 6, 6, rng, true);
        const auto y = gaussian(Eigen::VectorXd::Random(6), testing::random_spd(6, 0.1, 2.0, rng));
        const auto mc = mc_oracle_y(w, y, 1'000'000, 100 + t);
        CHECK(std::abs(encoder_first_moment(w, y) - mc.mean) <= 3.0 * mc.mean_se);
    }
}

TEST_CASE("second moment: closed-form cases") {
    const auto y1 = gaussian(Eigen::VectorXd::Zero(1), m1(4.0));
    CHECK(encoder_second_moment(chain(m1(1.0), r1(1.0)), y1) == Approx(2.0));

    const auto y2 = gaussian(Eigen::VectorXd::Zero(2), Eigen::Matrix2d::Identity());
    const Eigen::RowVectorXd ones = Eigen::RowVectorXd::Ones(2);
    CHECK(encoder_second_moment(chain(Eigen::MatrixXd::Identity(2, 2), ones), y2) ==
          Approx(1.0 + 1.0 / std::numbers::pi).epsilon(1e-14));
    const auto mc = mc_oracle_y(chain(Eigen::MatrixXd::Identity(2, 2), ones), y2, 1'000'000, 4);
    CHECK(std::abs(mc.second_moment - (1.0 + 1.0 / std::numbers::pi)) <= 3.0 * mc.second_moment_se);

    // Perfectly anticorrelated rectifiers: relu(g) relu(-g) = 0, so only the
    // diagonal terms remain and E[q^2] = E[g^2] = 1.
    Eigen::MatrixXd anti(2, 1);
    anti << 1.0, -1.0;
    CHECK(encoder_second_moment(chain(anti, ones), y1) == Approx(4.0));
    CHECK(encoder_second_moment(chain(anti, ones), gaussian(Eigen::VectorXd::Zero(1), m1(1.0))) == Approx(1.0));
}

TEST_CASE("second moment enforces its hypotheses") {
    auto w = chain(m1(1.0), r1(1.0));
    CHECK_THROWS_AS(encoder_second_moment(w, gaussian(Eigen::VectorXd::Constant(1, 0.5), m1(1.0))), UsageError);
    w.b3(0) = 0.1;
    CHECK_THROWS_AS(encoder_second_moment(w, gaussian(Eigen::VectorXd::Zero(1), m1(1.0))), UsageError);
}

TEST_CASE("second moment agrees with sampling and bounds the squared mean") {
    Rng rng(21);
    for (int t = 0; t < 5; ++t) {
        const auto w = testing::random_encoder(5, 7, 6, 8, rng);
        const auto y = gaussian(Eigen::VectorXd::Zero(6), testing::random_spd(6, 0.1, 2.0, rng));
        const double m1v = encoder_first_moment(w, y);
        const double m2v = encoder_second_moment(w, y);
        CHECK(m2v - m1v * m1v >= -1e-9);
        const auto mc = mc_oracle_y(w, y, 1'000'000, 200 + t);
        CHECK(std::abs(m2v - mc.second_moment) <= 3.0 * mc.second_moment_se);
    }
}

TEST_CASE("latent moments: closed-form cases") {
    const auto x = gaussian(Eigen::VectorXd::Zero(1), m1(1.0));
    const auto lm = latent_moments(chain(m1(1.0), r1(1.0)), x);
    CHECK(lm.mu_z == Approx(0.3989422804014327));
    CHECK(lm.sigma_z == Approx(std::sqrt(0.5 - 1.0 / (2.0 * std::numbers::pi))));
    CHECK(lm.sigma_z == Approx(0.5838193701035489));
    const auto flat = latent_moments(chain(m1(1.0), r1(0.0), 3.5), x);
    CHECK(flat.mu_z == 3.5);
    CHECK(flat.sigma_z == 0.0);
    CHECK_THROWS_AS(latent_moments(chain(m1(1.0), r1(1.0)), gaussian(Eigen::VectorXd::Constant(1, 1.0), m1(1.0))),
                    UsageError);
}

TEST_CASE("latent moments agree with sampling through the full encoder") {
    Rng rng(33);
    for (int t = 0; t < 5; ++t) {
        auto w = testing::random_encoder(4, 6, 5, 7, rng, true);
        const Eigen::VectorXd mu = Eigen::VectorXd::Random(4);
        w = centered_at(w, mu);
        const auto x = gaussian(mu, testing::random_spd(4, 0.1, 1.0, rng));
        const auto lm = latent_moments(w, x);
        const auto mc = mc_oracle(w, x, 1'000'000, 300 + t);
        CHECK(std::abs(lm.mu_z - mc.mean) <= 3.0 * mc.mean_se);
        CHECK(std::abs(lm.sigma_z - mc.sd) <= 3.0 * mc.sd_se);
    }
}

TEST_CASE("sampling oracle basics") {
    Rng rng(44);
    const auto w = testing::random_encoder(3, 4, 4, 4, rng, true);
    const Eigen::VectorXd mu(Eigen::Vector3d(0.3, -0.2, 0.9));
    const auto det = mc_oracle(w, gaussian(mu, Eigen::MatrixXd::Zero(3, 3)), 10000, 1);
    CHECK(det.mean == Approx(w.forward(mu)).epsilon(1e-12));
    CHECK(det.sd < 1e-9);

    const auto x = gaussian(mu, Eigen::MatrixXd::Identity(3, 3));
    const auto a = mc_oracle(w, x, 100000, 2);
    const auto b = mc_oracle(w, x, 200000, 3);
    CHECK(b.mean_se * std::sqrt(2.0) == Approx(a.mean_se).epsilon(0.05));

    CHECK_THROWS_AS(mc_oracle(w, x, 9999, 1), UsageError);
    Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
    bad(0, 1) = bad(1, 0) = 2.0;
    CHECK_THROWS_AS(mc_oracle(w, gaussian(mu, bad), 10000, 1), NumericalError);
}
