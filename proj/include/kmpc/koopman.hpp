#pragma once

#include <cstdint>
#include <filesystem>

#include "kmpc/dense_net.hpp"
#include "kmpc/trace.hpp"
#include "kmpc/types.hpp"

namespace kmpc::koopman {

/// Shape and training hyperparameters of the lifted linear model.
struct LiftingConfig {
  int window = 60;           // delay-window length per channel
  int channels = 1;
  int latent_dim = 32;
  int encoder_hidden = 60;
  int decoder_hidden = 60;
  int multi_step = 10;       // forward shift of Z and the operator power in the multi-step loss
  double weight_decay = 0.01;
  double learning_rate = 1e-3;
  int batch_len = 100;       // snapshot columns per optimizer step
  int epochs = 200;
  int refit_period = 20;     // operator refresh cadence (steps) during prediction

  int input_dim() const { return window * channels; }
  void validate() const;
};

/// Delay-embedded snapshot matrices. Columns are windows flattened
/// channel-block by channel-block, oldest sample first within a block;
/// Y is X advanced one sample, Z advanced multi_step samples.
struct SnapshotMatrices {
  Mat X, Y, Z;
};

SnapshotMatrices embed_windows(const SimTrace& trace, const LiftingConfig& config);

/// Least-squares operator K minimizing ||Ly - K Lx||_F, computed through an
/// SVD pseudo-inverse with relative singular-value cutoff.
Mat fit_operator(const Mat& latent_x, const Mat& latent_y, double rel_cutoff = 1e-10);

struct ForcedFit {
  Mat K;
  Mat B;
};

/// Joint least-squares fit of [K B] from latent pairs and the inputs applied
/// between them (inputs is m x N). Throws if the input sequence is all zero
/// (no excitation, B unidentifiable).
ForcedFit fit_input_gain(const Mat& latent_x, const Mat& latent_y, const Mat& inputs,
                         double rel_cutoff = 1e-10);

struct KoopmanModel {
  LiftingConfig config;
  DenseNet encoder;
  DenseNet decoder;
  Mat K;  // latent_dim x latent_dim
  Mat B;  // latent_dim x m; empty until an input gain is identified

  Mat encode(const Mat& windows) const;
  Mat decode(const Mat& latents) const;

  /// Newest sample of each channel from a decoded window stack.
  Mat newest_samples(const Mat& windows) const;
};

/// Per-term multipliers; the loss-ablation baselines zero exactly one.
struct LossWeights {
  double recon = 1.0;
  double ypred = 1.0;
  double zpred = 1.0;
  double lin = 1.0;
};

struct LossTerms {
  double recon = 0, ypred = 0, zpred = 0, lin = 0, reg = 0;
  double total = 0;
};

/// Four mean-squared reconstruction/prediction/linearity terms plus the
/// weight-decay term; total = weighted sum. The operator K is treated as a
/// constant of the model.
LossTerms total_loss(const KoopmanModel& model, const SnapshotMatrices& s,
                     const LossWeights& weights = {});

/// total_loss plus parameter gradients (accumulated into enc_grads /
/// dec_grads, which must be zeroed by the caller). Gradients do not flow
/// through K.
LossTerms loss_and_gradients(const KoopmanModel& model, const SnapshotMatrices& s,
                             const LossWeights& weights, NetGradients& enc_grads,
                             NetGradients& dec_grads);

/// Loss became non-finite; epoch() is where training stopped.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(int epoch);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  LossWeights weights{};
  double svd_cutoff = 1e-10;
};

struct TrainReport {
  std::vector<double> epoch_mean_loss;
};

/// Adam over contiguous snapshot batches; the operator is re-fit from each
/// batch's latents and held constant within the step. The returned model
/// carries the operator fitted on the full training embedding after the
/// final epoch.
KoopmanModel train(const SimTrace& trace, const LiftingConfig& config,
                   const TrainOptions& options = {}, TrainReport* report = nullptr);

/// Refreshes K from the trailing `recent` samples of a live trace (window
/// ends at end_idx inclusive). When the trace carries inputs and the model
/// has an input gain, the input contribution is removed before the fit.
Mat refit_operator(const KoopmanModel& model, const SimTrace& live, Eigen::Index end_idx,
                   int recent, double rel_cutoff = 1e-10);

struct PredictOptions {
  int refit_period = 0;           // <= 0: never refit/re-anchor
  int refit_window = 100;         // trailing samples used by each refit
  const SimTrace* live = nullptr; // observations for refit + re-anchoring
  Eigen::Index seed_end = -1;     // index in live of the last seed sample
  const Mat* inputs = nullptr;    // m x horizon input sequence through B
  double rate = 50.0;             // output time grid when no live trace
  double svd_cutoff = 1e-10;
};

/// Rolls the latent dynamics forward `horizon` samples from the seed window
/// (input_dim x 1), decoding the newest sample each step. With a live trace,
/// K is re-fit and the latent state re-anchored to the encoded current
/// window every refit_period steps. horizon == 0 returns the decoded seed
/// window; negative horizons are invalid.
SimTrace predict(const KoopmanModel& model, const Mat& seed_window, int horizon,
                 const PredictOptions& options = {});

struct SpectralModes {
  Eigen::VectorXcd eigenvalues;
  Eigen::MatrixXcd eigenvectors;
  Vec frequency_hz;   // angle(lambda) * rate / (2 pi)
  Vec growth_rate;    // ln|lambda| * rate, 1/s
  bool eigenvectors_reliable = true;
};

/// Eigen-decomposition of the operator with per-mode continuous-time
/// frequency and growth rate at the given sampling rate. For (near-)defective
/// operators the eigenvalues stay valid and eigenvectors_reliable is false.
SpectralModes spectral_decomposition(const Mat& K, double rate);

void save_checkpoint(const KoopmanModel& model, const std::filesystem::path& path);
KoopmanModel load_koopman_checkpoint(const std::filesystem::path& path);

}  // namespace kmpc::koopman
