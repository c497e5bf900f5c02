#pragma once

// Variational autoencoder with a one-dimensional latent state.
//
// Encoder trunk (affine, affine, affine, relu) shared by two heads: the mean head
// (W4, B4) and a log-variance head. Decoder mirrors the encoder:
// z -> affine -> relu -> affine -> affine -> affine -> x_hat.
// Gaussian likelihood N(x | x_hat, sigma_dec^2 I); standard-normal prior.
//
// All parameters live in one flat vector; VaeLayout maps named blocks onto it so the
// same layout serves parameters, gradients and optimizer moments.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvb/dataset.hpp"
#include "fvb/moments.hpp"

namespace fvb {

struct VaeArch {
    int input_dim = 0;
    int h1 = 200;
    int h2 = 150;
    int h3 = 50;

    void validate() const;
    bool operator==(const VaeArch&) const = default;
};

enum class Block : int { W1, B1, W2, B2, W3, B3, W4, B4, LvW, LvB, D1, C1, D2, C2, D3, C3, D4, C4, Count };

class VaeLayout {
public:
    VaeLayout() = default;
    explicit VaeLayout(const VaeArch& arch);

    const VaeArch& arch() const { return arch_; }
    Eigen::Index size() const { return size_; }
    Eigen::Index offset(Block b) const { return offset_[idx(b)]; }
    Eigen::Index rows(Block b) const { return rows_[idx(b)]; }
    Eigen::Index cols(Block b) const { return cols_[idx(b)]; }

    Eigen::Map<Eigen::MatrixXd> map(Eigen::VectorXd& v, Block b) const {
        return {v.data() + offset(b), rows(b), cols(b)};
    }
    Eigen::Map<const Eigen::MatrixXd> map(const Eigen::VectorXd& v, Block b) const {
        return {v.data() + offset(b), rows(b), cols(b)};
    }

private:
    static std::size_t idx(Block b) { return static_cast<std::size_t>(b); }
    static constexpr std::size_t kBlocks = static_cast<std::size_t>(Block::Count);

    VaeArch arch_;
    std::array<Eigen::Index, kBlocks> offset_{}, rows_{}, cols_{};
    Eigen::Index size_ = 0;
};

struct VaeParams {
    VaeLayout layout;
    Eigen::VectorXd theta;
    double sigma_dec = 1.0;

    /// Fan-in scaled uniform weights, zero biases.
    static VaeParams init(const VaeArch& arch, double sigma_dec, std::uint64_t seed);

    int input_dim() const { return layout.arch().input_dim; }
    Eigen::Map<Eigen::MatrixXd> block(Block b) { return layout.map(theta, b); }
    Eigen::Map<const Eigen::MatrixXd> block(Block b) const { return layout.map(theta, b); }
    /// Copy of the mean path in the form used by moment propagation.
    EncoderWeights encoder() const;
    void validate() const;
};

struct ElboBreakdown {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

struct LatentCode {
    double mu = 0.0;
    double logvar = 0.0;
};

LatentCode encode(const VaeParams& p, const Eigen::VectorXd& x);
/// Row-wise encode of a batch (rows are samples).
std::pair<Eigen::VectorXd, Eigen::VectorXd> encode_rows(const VaeParams& p, const RowMatrix& rows);
/// Row-wise decode; one output row per latent value.
RowMatrix decode_rows(const VaeParams& p, const Eigen::VectorXd& z);

double reparameterize(double mu, double logvar, double eps);

/// KL(N(mu, diag(sigma^2)) || N(0, I)) for a k-dimensional diagonal Gaussian.
double kl_diag_gaussian(std::span<const double> mu, std::span<const double> sigma_sq, int k);

/// ELBO averaged over the batch (rows are samples), one noise draw per row.
ElboBreakdown elbo(const VaeParams& p, const RowMatrix& batch, std::span<const double> eps);

struct ElboGradient {
    ElboBreakdown value;
    Eigen::VectorXd grad;  // d total / d theta, same layout as VaeParams::theta
};

ElboGradient elbo_grad(const VaeParams& p, const RowMatrix& batch, std::span<const double> eps);

enum class Optimizer { Adam, Sgd };

struct TrainConfig {
    int epochs = 50;
    int batch_size = 256;
    double learning_rate = 5e-4;
    std::uint64_t seed = 1;
    double sigma_dec = 0.1;  // decoder noise sd in normalized units
    int patience = 10;
    Optimizer optimizer = Optimizer::Adam;
    int max_folds = 0;  // 0 = every fold of the split plan
    int workers = 1;

    void validate() const;
};

struct HistoryRow {
    int fold = 0;
    int epoch = 0;
    double train_elbo = 0.0;
    double val_elbo = 0.0;
    double val_reconstruction = 0.0;
    double val_kl = 0.0;
};

/// Complete optimizer state of one cross-validation fold; enough to resume.
struct FoldState {
    int fold = 0;
    int epochs_done = 0;
    std::int64_t step = 0;
    bool stopped = false;
    VaeParams params;
    Eigen::VectorXd m, v;  // Adam moments
    VaeParams best;
    double best_val = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_best = 0;
    std::vector<HistoryRow> history;
};

FoldState init_fold(const VaeArch& arch, const TrainConfig& cfg, int fold);

/// Runs epochs until cfg.epochs are done or early stopping triggers. Requires a
/// normalized matrix. B3 is held at zero so the encoder stays inside the domain of
/// the second-moment formula.
void continue_fold(FoldState& state, const TraceMatrix& data, const SplitPlan& plan, const TrainConfig& cfg);

struct TrainResult {
    VaeParams model;  // best validation ELBO over all folds
    int best_fold = 0;
    std::vector<HistoryRow> history;
};

/// Trains one model per fold (optionally checkpointing each fold to
/// checkpoint_dir/fold_<k>.fvbm and resuming from those files).
TrainResult train(const TraceMatrix& data, const SplitPlan& plan, const TrainConfig& cfg, const VaeArch& arch,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt, bool resume = false);

/// Per-column reconstruction error of decode(encode-mean(x)) in degF, after
/// denormalization.
struct ReconstructionReport {
    std::vector<double> max_abs;   // degF per column
    std::vector<double> mean_abs;  // degF per column
    std::vector<double> bin_edges;                // shared histogram edges (degF)
    std::vector<std::vector<std::size_t>> counts;  // per column
};

ReconstructionReport reconstruction_report(const VaeParams& p, const RowMatrix& normalized_rows,
                                           const NormStats& stats, int bins = 20);

/// Per-column variance of the normalized reconstruction residual x - x_hat.
Eigen::VectorXd residual_variance(const VaeParams& p, const RowMatrix& normalized_rows);

// Model files: "FVBM1" | u64 header length | JSON header | f64 blob (little-endian).
// The header carries the architecture, sigma_dec, free-form metadata and an FNV-1a
// checksum of the blob.
void save_model(const std::filesystem::path& path, const VaeParams& p, const std::string& metadata_json = "{}");
VaeParams load_model(const std::filesystem::path& path);
void save_fold_state(const std::filesystem::path& path, const FoldState& s);
FoldState load_fold_state(const std::filesystem::path& path);

}  // namespace fvb
