#include "fvb/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fvb/error.hpp"
#include "fvb/io.hpp"
#include "fvb/parallel.hpp"
#include "fvb/rng.hpp"

namespace fvb {

namespace {

constexpr std::string_view kModelMagic = "FVBM1";
constexpr Eigen::Index kEvalChunk = 2048;

// Activations of one batch; columns are samples.
struct Forward {
    Eigen::MatrixXd x, h1, h2, a3, r, g1, q, g2, g3, xhat;
    Eigen::RowVectorXd mu, logvar, s, eps, z;
};

Forward run_forward(const VaeParams& p, Eigen::MatrixXd x, std::span<const double> eps) {
    const auto& L = p.layout;
    const auto& th = p.theta;
    Forward f;
    f.x = std::move(x);
    const Eigen::Index n = f.x.cols();
    f.h1 = (L.map(th, Block::W1) * f.x).colwise() + L.map(th, Block::B1).col(0);
    f.h2 = (L.map(th, Block::W2) * f.h1).colwise() + L.map(th, Block::B2).col(0);
    f.a3 = (L.map(th, Block::W3) * f.h2).colwise() + L.map(th, Block::B3).col(0);
    f.r = f.a3.cwiseMax(0.0);
    f.mu = (L.map(th, Block::W4) * f.r).array() + L.map(th, Block::B4)(0, 0);
    f.logvar = (L.map(th, Block::LvW) * f.r).array() + L.map(th, Block::LvB)(0, 0);
    f.s = (0.5 * f.logvar.array()).exp();
    f.eps = eps.empty() ? Eigen::RowVectorXd::Zero(n) : Eigen::Map<const Eigen::RowVectorXd>(eps.data(), n).eval();
    f.z = f.mu.array() + f.s.array() * f.eps.array();
    f.g1 = (L.map(th, Block::D1) * f.z).colwise() + L.map(th, Block::C1).col(0);
    f.q = f.g1.cwiseMax(0.0);
    f.g2 = (L.map(th, Block::D2) * f.q).colwise() + L.map(th, Block::C2).col(0);
    f.g3 = (L.map(th, Block::D3) * f.g2).colwise() + L.map(th, Block::C3).col(0);
    f.xhat = (L.map(th, Block::D4) * f.g3).colwise() + L.map(th, Block::C4).col(0);
    return f;
}

// Per-sample sums (not yet averaged).
ElboBreakdown elbo_sums(const VaeParams& p, const Forward& f) {
    const double d = static_cast<double>(p.input_dim());
    const double var = p.sigma_dec * p.sigma_dec;
    const double log_norm = 0.5 * d * std::log(2.0 * std::numbers::pi * var);
    ElboBreakdown e;
    e.reconstruction = -(f.x - f.xhat).colwise().squaredNorm().sum() / (2.0 * var) - log_norm * f.x.cols();
    e.kl = 0.5 * (f.logvar.array().exp() + f.mu.array().square() - 1.0 - f.logvar.array()).sum();
    e.total = e.reconstruction - e.kl;
    return e;
}

Eigen::MatrixXd columns_of(const RowMatrix& rows, Eigen::Index begin, Eigen::Index count) {
    return rows.middleRows(begin, count).transpose();
}

void check_batch(const VaeParams& p, const RowMatrix& batch, std::span<const double> eps) {
    if (batch.rows() == 0) throw UsageError("elbo: empty batch");
    if (batch.cols() != p.input_dim()) throw UsageError("elbo: batch width differs from model input width");
    if (!eps.empty() && static_cast<Eigen::Index>(eps.size()) != batch.rows())
        throw UsageError("elbo: need one noise draw per row");
}

}  // namespace

void VaeArch::validate() const {
    if (input_dim < 1 || h1 < 1 || h2 < 1 || h3 < 1) throw UsageError("VaeArch: every width must be positive");
}

VaeLayout::VaeLayout(const VaeArch& arch) : arch_(arch) {
    arch.validate();
    const Eigen::Index d = arch.input_dim, h1 = arch.h1, h2 = arch.h2, h3 = arch.h3;
    const std::array<std::pair<Eigen::Index, Eigen::Index>, kBlocks> shapes{{
        {h1, d}, {h1, 1}, {h2, h1}, {h2, 1}, {h3, h2}, {h3, 1}, {1, h3}, {1, 1}, {1, h3}, {1, 1},  // encoder
        {h3, 1}, {h3, 1}, {h2, h3}, {h2, 1}, {h1, h2}, {h1, 1}, {d, h1}, {d, 1},                   // decoder
    }};
    for (std::size_t b = 0; b < kBlocks; ++b) {
        offset_[b] = size_;
        rows_[b] = shapes[b].first;
        cols_[b] = shapes[b].second;
        size_ += rows_[b] * cols_[b];
    }
}

VaeParams VaeParams::init(const VaeArch& arch, double sigma_dec, std::uint64_t seed) {
    if (!(sigma_dec > 0.0)) throw UsageError("VaeParams: sigma_dec must be positive");
    VaeParams p;
    p.layout = VaeLayout(arch);
    p.theta = Eigen::VectorXd::Zero(p.layout.size());
    p.sigma_dec = sigma_dec;
    Rng rng(derive_seed(seed, {0x1417ULL}));
    for (Block b : {Block::W1, Block::W2, Block::W3, Block::W4, Block::LvW, Block::D1, Block::D2, Block::D3,
                    Block::D4}) {
        auto m = p.block(b);
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    }
    p.block(Block::LvW) *= 0.1;
    return p;
}

EncoderWeights VaeParams::encoder() const {
    EncoderWeights w;
    w.w1 = block(Block::W1);
    w.b1 = block(Block::B1).col(0);
    w.w2 = block(Block::W2);
    w.b2 = block(Block::B2).col(0);
    w.w3 = block(Block::W3);
    w.b3 = block(Block::B3).col(0);
    w.w4 = block(Block::W4).row(0);
    w.b4 = block(Block::B4)(0, 0);
    return w;
}

void VaeParams::validate() const {
    if (theta.size() != layout.size()) throw DataError("VaeParams: parameter vector does not match layout");
    if (!(sigma_dec > 0.0)) throw UsageError("VaeParams: sigma_dec must be positive");
}

LatentCode encode(const VaeParams& p, const Eigen::VectorXd& x) {
    if (x.size() != p.input_dim()) throw UsageError("encode: input width differs from model input width");
    RowMatrix row = x.transpose();
    auto [mu, lv] = encode_rows(p, row);
    return {mu(0), lv(0)};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> encode_rows(const VaeParams& p, const RowMatrix& rows) {
    if (rows.cols() != p.input_dim()) throw UsageError("encode: input width differs from model input width");
    const auto& L = p.layout;
    const auto& th = p.theta;
    Eigen::VectorXd mu(rows.rows()), lv(rows.rows());
    for (Eigen::Index b = 0; b < rows.rows(); b += kEvalChunk) {
        const Eigen::Index n = std::min(kEvalChunk, rows.rows() - b);
        const Eigen::MatrixXd x = columns_of(rows, b, n);
        const Eigen::MatrixXd h1 = (L.map(th, Block::W1) * x).colwise() + L.map(th, Block::B1).col(0);
        const Eigen::MatrixXd h2 = (L.map(th, Block::W2) * h1).colwise() + L.map(th, Block::B2).col(0);
        const Eigen::MatrixXd r =
            ((L.map(th, Block::W3) * h2).colwise() + L.map(th, Block::B3).col(0)).cwiseMax(0.0);
        mu.segment(b, n) = ((L.map(th, Block::W4) * r).array() + L.map(th, Block::B4)(0, 0)).transpose();
        lv.segment(b, n) = ((L.map(th, Block::LvW) * r).array() + L.map(th, Block::LvB)(0, 0)).transpose();
    }
    return {mu, lv};
}

RowMatrix decode_rows(const VaeParams& p, const Eigen::VectorXd& z) {
    const auto& L = p.layout;
    const auto& th = p.theta;
    RowMatrix out(z.size(), p.input_dim());
    for (Eigen::Index b = 0; b < z.size(); b += kEvalChunk) {
        const Eigen::Index n = std::min(kEvalChunk, z.size() - b);
        const Eigen::RowVectorXd zz = z.segment(b, n).transpose();
        const Eigen::MatrixXd q = ((L.map(th, Block::D1) * zz).colwise() + L.map(th, Block::C1).col(0)).cwiseMax(0.0);
        const Eigen::MatrixXd g2 = (L.map(th, Block::D2) * q).colwise() + L.map(th, Block::C2).col(0);
        const Eigen::MatrixXd g3 = (L.map(th, Block::D3) * g2).colwise() + L.map(th, Block::C3).col(0);
        out.middleRows(b, n) = ((L.map(th, Block::D4) * g3).colwise() + L.map(th, Block::C4).col(0)).transpose();
    }
    return out;
}

double reparameterize(double mu, double logvar, double eps) {
    if (!std::isfinite(mu) || !std::isfinite(logvar) || !std::isfinite(eps))
        throw UsageError("reparameterize: non-finite input");
    return mu + std::exp(0.5 * logvar) * eps;
}

double kl_diag_gaussian(std::span<const double> mu, std::span<const double> sigma_sq, int k) {
    if (mu.size() != sigma_sq.size() || static_cast<int>(mu.size()) != k)
        throw UsageError("kl_diag_gaussian: dimension mismatch");
    double trace = 0.0, quad = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(sigma_sq[i] > 0.0)) throw UsageError("kl_diag_gaussian: variance must be positive");
        trace += sigma_sq[i];
        quad += mu[i] * mu[i];
        logdet += std::log(sigma_sq[i]);
    }
    return 0.5 * (trace + quad - k - logdet);
}

ElboBreakdown elbo(const VaeParams& p, const RowMatrix& batch, std::span<const double> eps) {
    check_batch(p, batch, eps);
    ElboBreakdown sum;
    for (Eigen::Index b = 0; b < batch.rows(); b += kEvalChunk) {
        const Eigen::Index n = std::min(kEvalChunk, batch.rows() - b);
        const auto chunk_eps = eps.empty() ? eps : eps.subspan(static_cast<std::size_t>(b), static_cast<std::size_t>(n));
        const auto e = elbo_sums(p, run_forward(p, columns_of(batch, b, n), chunk_eps));
        sum.total += e.total;
        sum.reconstruction += e.reconstruction;
        sum.kl += e.kl;
    }
    const double n = static_cast<double>(batch.rows());
    return {sum.total / n, sum.reconstruction / n, sum.kl / n};
}

ElboGradient elbo_grad(const VaeParams& p, const RowMatrix& batch, std::span<const double> eps) {
    check_batch(p, batch, eps);
    const auto& L = p.layout;
    const auto& th = p.theta;
    const Forward f = run_forward(p, batch.transpose(), eps);
    const double n = static_cast<double>(batch.rows());
    const double var = p.sigma_dec * p.sigma_dec;

    ElboGradient out;
    out.value = elbo_sums(p, f);
    out.value.total /= n;
    out.value.reconstruction /= n;
    out.value.kl /= n;
    out.grad = Eigen::VectorXd::Zero(L.size());
    auto g = [&](Block b) { return L.map(out.grad, b); };

    // Decoder.
    const Eigen::MatrixXd d_xhat = (f.x - f.xhat) / (var * n);
    g(Block::D4) = d_xhat * f.g3.transpose();
    g(Block::C4) = d_xhat.rowwise().sum();
    const Eigen::MatrixXd d_g3 = L.map(th, Block::D4).transpose() * d_xhat;
    g(Block::D3) = d_g3 * f.g2.transpose();
    g(Block::C3) = d_g3.rowwise().sum();
    const Eigen::MatrixXd d_g2 = L.map(th, Block::D3).transpose() * d_g3;
    g(Block::D2) = d_g2 * f.q.transpose();
    g(Block::C2) = d_g2.rowwise().sum();
    const Eigen::MatrixXd d_g1 =
        ((L.map(th, Block::D2).transpose() * d_g2).array() * (f.g1.array() > 0.0).cast<double>()).matrix();
    g(Block::D1) = d_g1 * f.z.transpose();
    g(Block::C1) = d_g1.rowwise().sum();
    const Eigen::RowVectorXd d_z = L.map(th, Block::D1).transpose() * d_g1;

    // Latent heads, including the -KL term.
    const Eigen::RowVectorXd d_mu = d_z - f.mu / n;
    const Eigen::RowVectorXd d_lv =
        (0.5 * d_z.array() * f.eps.array() * f.s.array() - 0.5 * (f.logvar.array().exp() - 1.0) / n).matrix();
    g(Block::W4) = d_mu * f.r.transpose();
    g(Block::B4)(0, 0) = d_mu.sum();
    g(Block::LvW) = d_lv * f.r.transpose();
    g(Block::LvB)(0, 0) = d_lv.sum();

    // Encoder trunk.
    const Eigen::MatrixXd d_a3 = ((L.map(th, Block::W4).transpose() * d_mu + L.map(th, Block::LvW).transpose() * d_lv)
                                      .array() *
                                  (f.a3.array() > 0.0).cast<double>())
                                     .matrix();
    g(Block::W3) = d_a3 * f.h2.transpose();
    g(Block::B3) = d_a3.rowwise().sum();
    const Eigen::MatrixXd d_h2 = L.map(th, Block::W3).transpose() * d_a3;
    g(Block::W2) = d_h2 * f.h1.transpose();
    g(Block::B2) = d_h2.rowwise().sum();
    const Eigen::MatrixXd d_h1 = L.map(th, Block::W2).transpose() * d_h2;
    g(Block::W1) = d_h1 * f.x.transpose();
    g(Block::B1) = d_h1.rowwise().sum();
    return out;
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0) || !(sigma_dec > 0.0) || patience < 1 ||
        max_folds < 0 || workers < 1)
        throw UsageError("TrainConfig: epochs, batch size, learning rate, sigma_dec, patience must be positive");
}

FoldState init_fold(const VaeArch& arch, const TrainConfig& cfg, int fold) {
    FoldState s;
    s.fold = fold;
    s.params = VaeParams::init(arch, cfg.sigma_dec, derive_seed(cfg.seed, {static_cast<std::uint64_t>(fold)}));
    s.m = Eigen::VectorXd::Zero(s.params.theta.size());
    s.v = Eigen::VectorXd::Zero(s.params.theta.size());
    s.best = s.params;
    return s;
}

void continue_fold(FoldState& s, const TraceMatrix& data, const SplitPlan& plan, const TrainConfig& cfg) {
    cfg.validate();
    s.params.validate();
    if (static_cast<int>(data.cols()) != s.params.input_dim())
        throw UsageError("train: dataset width " + std::to_string(data.cols()) + " differs from model input width " +
                         std::to_string(s.params.input_dim()));
    const auto train_ids = plan.training_episodes(s.fold);
    const auto val_ids = plan.fold_episodes(s.fold);
    const auto train_rows = data.rows_of(train_ids);
    const auto val_rows = data.rows_of(val_ids);
    if (train_rows.empty() || val_rows.empty())
        throw DataError("train: fold " + std::to_string(s.fold) + " has no training or validation rows");

    RowMatrix val(static_cast<Eigen::Index>(val_rows.size()), data.data.cols());
    for (std::size_t i = 0; i < val_rows.size(); ++i)
        val.row(static_cast<Eigen::Index>(i)) = data.data.row(static_cast<Eigen::Index>(val_rows[i]));
    std::vector<double> val_eps(val_rows.size());
    {
        Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s.fold), 0xe7a1ULL}));
        std::normal_distribution<double> normal;
        for (auto& e : val_eps) e = normal(rng);
    }

    const auto b3 = s.params.layout.offset(Block::B3);
    const auto b3_len = s.params.layout.rows(Block::B3);
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::vector<std::size_t> order(train_rows);
    RowMatrix batch;
    std::vector<double> eps;

    while (!s.stopped && s.epochs_done < cfg.epochs) {
        const int epoch = s.epochs_done;
        Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s.fold), static_cast<std::uint64_t>(epoch) + 1}));
        std::normal_distribution<double> normal;
        order = train_rows;
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
        double train_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
            batch.resize(static_cast<Eigen::Index>(n), data.data.cols());
            eps.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = data.data.row(static_cast<Eigen::Index>(order[start + i]));
                eps[i] = normal(rng);
            }
            auto eg = elbo_grad(s.params, batch, eps);
            train_sum += eg.value.total * static_cast<double>(n);
            eg.grad.segment(b3, b3_len).setZero();
            ++s.step;
            if (cfg.optimizer == Optimizer::Adam) {
                s.m = beta1 * s.m + (1.0 - beta1) * eg.grad;
                s.v = beta2 * s.v + (1.0 - beta2) * eg.grad.cwiseAbs2();
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
                s.params.theta.array() +=
                    cfg.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + adam_eps);
            } else {
                s.params.theta += cfg.learning_rate * eg.grad;
            }
        }
        if (!s.params.theta.allFinite()) throw NumericalError("train: parameters diverged (non-finite)");

        const auto ve = elbo(s.params, val, val_eps);
        s.history.push_back({s.fold, epoch, train_sum / static_cast<double>(order.size()), ve.total,
                             ve.reconstruction, ve.kl});
        ++s.epochs_done;
        if (ve.total > s.best_val) {
            s.best_val = ve.total;
            s.best = s.params;
            s.best_epoch = epoch;
            s.since_best = 0;
        } else if (++s.since_best >= cfg.patience) {
            s.stopped = true;
        }
    }
}

TrainResult train(const TraceMatrix& data, const SplitPlan& plan, const TrainConfig& cfg, const VaeArch& arch,
                  const std::optional<std::filesystem::path>& checkpoint_dir, bool resume) {
    cfg.validate();
    if (arch.input_dim != static_cast<int>(data.cols()))
        throw UsageError("train: dataset width " + std::to_string(data.cols()) +
                         " differs from configured input width " + std::to_string(arch.input_dim));
    const int folds = cfg.max_folds > 0 ? std::min(cfg.max_folds, plan.n_folds) : plan.n_folds;
    std::vector<FoldState> states(static_cast<std::size_t>(folds));
    parallel_for(states.size(), cfg.workers, [&](std::size_t k) {
        const int fold = static_cast<int>(k);
        std::optional<std::filesystem::path> ckpt;
        if (checkpoint_dir) ckpt = *checkpoint_dir / ("fold_" + std::to_string(fold) + ".fvbm");
        if (resume && ckpt && std::filesystem::exists(*ckpt)) {
            states[k] = load_fold_state(*ckpt);
            if (!(states[k].params.layout.arch() == arch) || states[k].fold != fold)
                throw DataError(ckpt->string() + ": checkpoint does not match the configured architecture/fold");
        } else {
            states[k] = init_fold(arch, cfg, fold);
        }
        continue_fold(states[k], data, plan, cfg);
        if (ckpt) save_fold_state(*ckpt, states[k]);
    });
    TrainResult res;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& s : states) {
        res.history.insert(res.history.end(), s.history.begin(), s.history.end());
        if (s.best_val > best) {
            best = s.best_val;
            res.model = s.best;
            res.best_fold = s.fold;
        }
    }
    return res;
}

ReconstructionReport reconstruction_report(const VaeParams& p, const RowMatrix& rows, const NormStats& stats,
                                           int bins) {
    if (rows.rows() == 0) throw UsageError("reconstruction_report: no rows");
    const auto [mu, lv] = encode_rows(p, rows);
    const RowMatrix xhat = denormalize(decode_rows(p, mu), stats);
    const RowMatrix x = denormalize(rows, stats);
    const Eigen::MatrixXd err = (x - xhat).cwiseAbs() * 1.8;  // degC difference -> degF

    ReconstructionReport rep;
    const auto cols = err.cols();
    rep.max_abs.resize(static_cast<std::size_t>(cols));
    rep.mean_abs.resize(static_cast<std::size_t>(cols));
    for (Eigen::Index c = 0; c < cols; ++c) {
        rep.max_abs[static_cast<std::size_t>(c)] = err.col(c).maxCoeff();
        rep.mean_abs[static_cast<std::size_t>(c)] = err.col(c).mean();
    }
    const double top = std::max(err.maxCoeff(), 1e-12);
    for (int b = 0; b <= bins; ++b) rep.bin_edges.push_back(top * b / bins);
    rep.counts.assign(static_cast<std::size_t>(cols), std::vector<std::size_t>(static_cast<std::size_t>(bins), 0));
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < err.rows(); ++r) {
            const auto b = std::min(static_cast<int>(err(r, c) / top * bins), bins - 1);
            ++rep.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
        }
    return rep;
}

Eigen::VectorXd residual_variance(const VaeParams& p, const RowMatrix& rows) {
    if (rows.rows() == 0) throw UsageError("residual_variance: no rows");
    const auto [mu, lv] = encode_rows(p, rows);
    const RowMatrix resid = rows - decode_rows(p, mu);
    const Eigen::RowVectorXd mean = resid.colwise().mean();
    return ((resid.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(rows.rows())).transpose();
}

namespace {

Json arch_json(const VaeArch& a) { return {{"input_dim", a.input_dim}, {"h1", a.h1}, {"h2", a.h2}, {"h3", a.h3}}; }

VaeArch arch_from(const Json& j) {
    VaeArch a;
    a.input_dim = j.at("input_dim").get<int>();
    a.h1 = j.at("h1").get<int>();
    a.h2 = j.at("h2").get<int>();
    a.h3 = j.at("h3").get<int>();
    return a;
}

VaeParams params_from(const VaeArch& arch, double sigma_dec, const double* data) {
    VaeParams p;
    p.layout = VaeLayout(arch);
    p.sigma_dec = sigma_dec;
    p.theta = Eigen::Map<const Eigen::VectorXd>(data, p.layout.size());
    return p;
}

}  // namespace

void save_model(const std::filesystem::path& path, const VaeParams& p, const std::string& metadata_json) {
    p.validate();
    Json h;
    h["format"] = "FVBM1";
    h["kind"] = "model";
    h["arch"] = arch_json(p.layout.arch());
    h["sigma_dec"] = p.sigma_dec;
    h["metadata"] = Json::parse(metadata_json);
    write_blob_file(path, kModelMagic, h, std::span<const double>(p.theta.data(), static_cast<std::size_t>(p.theta.size())));
}

VaeParams load_model(const std::filesystem::path& path) {
    const auto f = read_blob_file(path, kModelMagic);
    try {
        if (f.header.at("kind") != "model") throw DataError(path.string() + ": not a model file");
        const VaeArch arch = arch_from(f.header.at("arch"));
        if (static_cast<Eigen::Index>(f.blob.size()) != VaeLayout(arch).size())
            throw DataError(path.string() + ": parameter count does not match architecture");
        return params_from(arch, f.header.at("sigma_dec").get<double>(), f.blob.data());
    } catch (const Json::exception& e) {
        throw DataError(path.string() + ": malformed model header: " + e.what());
    }
}

void save_fold_state(const std::filesystem::path& path, const FoldState& s) {
    Json h;
    h["format"] = "FVBM1";
    h["kind"] = "checkpoint";
    h["arch"] = arch_json(s.params.layout.arch());
    h["sigma_dec"] = s.params.sigma_dec;
    h["fold"] = s.fold;
    h["epochs_done"] = s.epochs_done;
    h["step"] = s.step;
    h["stopped"] = s.stopped;
    h["best_val"] = s.best_val;
    h["best_epoch"] = s.best_epoch;
    h["since_best"] = s.since_best;
    Json hist = Json::array();
    for (const auto& r : s.history)
        hist.push_back({r.fold, r.epoch, r.train_elbo, r.val_elbo, r.val_reconstruction, r.val_kl});
    h["history"] = hist;
    const auto n = s.params.theta.size();
    std::vector<double> blob;
    blob.reserve(static_cast<std::size_t>(4 * n));
    for (const Eigen::VectorXd* v : {&s.params.theta, &s.m, &s.v, &s.best.theta}) blob.insert(blob.end(), v->data(), v->data() + n);
    write_blob_file(path, kModelMagic, h, blob);
}

FoldState load_fold_state(const std::filesystem::path& path) {
    const auto f = read_blob_file(path, kModelMagic);
    try {
        const auto& h = f.header;
        if (h.at("kind") != "checkpoint") throw DataError(path.string() + ": not a checkpoint file");
        const VaeArch arch = arch_from(h.at("arch"));
        const auto n = VaeLayout(arch).size();
        if (static_cast<Eigen::Index>(f.blob.size()) != 4 * n)
            throw DataError(path.string() + ": checkpoint size does not match architecture");
        const double sigma = h.at("sigma_dec").get<double>();
        FoldState s;
        s.fold = h.at("fold").get<int>();
        s.epochs_done = h.at("epochs_done").get<int>();
        s.step = h.at("step").get<std::int64_t>();
        s.stopped = h.at("stopped").get<bool>();
        s.best_val = h.at("best_val").is_null() ? -std::numeric_limits<double>::infinity() : h.at("best_val").get<double>();
        s.best_epoch = h.at("best_epoch").get<int>();
        s.since_best = h.at("since_best").get<int>();
        for (const auto& r : h.at("history"))
            s.history.push_back({r[0].get<int>(), r[1].get<int>(), r[2].get<double>(), r[3].get<double>(),
                                 r[4].get<double>(), r[5].get<double>()});
        s.params = params_from(arch, sigma, f.blob.data());
        s.m = Eigen::Map<const Eigen::VectorXd>(f.blob.data() + n, n);
        s.v = Eigen::Map<const Eigen::VectorXd>(f.blob.data() + 2 * n, n);
        s.best = params_from(arch, sigma, f.blob.data() + 3 * n);
        return s;
    } catch (const Json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
    }
}

}  // namespace fvb
