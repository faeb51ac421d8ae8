#pragma once

#include <cstdint>
#include <filesystem>

#include "kmpc/dense_net.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/trace.hpp"

namespace kmpc::gru {

/// hard_sigmoid(x) = clamp(0.2 x + 0.5, 0, 1).
double hard_sigmoid(double x);
Mat hard_sigmoid(const Mat& x);

struct GruConfig {
  int prev_inputs = 24;     // M: input-history samples fed to the initial-state net
  int prev_outputs = 25;    // N: output-history samples per channel
  int horizon = 175;        // prediction length
  int train_horizon = 0;    // BPTT unroll; 0 means "= horizon" (full unroll)
  int batch = 30;           // sequences per optimizer step
  int hidden = 60;          // GRU units
  int init_hidden = 60;     // hidden width of the initial-state net
  int output_hidden = 60;   // hidden width of the output net
  int channels = 1;
  double learning_rate = 1e-3;
  int epochs = 40;
  int steps_per_epoch = 8;
  double sample_rate = 50.0;

  int unroll() const { return train_horizon > 0 ? train_horizon : horizon; }
  void validate() const;
};

struct GruWeights {
  Mat Wi_z, Wi_r, Wi_h;  // input weights, hidden x m
  Mat Wx_z, Wx_r, Wx_h;  // recurrent weights, hidden x hidden
  Mat b_z, b_r, b_h;     // hidden x 1
};

/// One cell update over a batch of hidden states (hidden x batch) and inputs
/// (m x batch): update/reset gates through hard_sigmoid, candidate through
/// tanh, convex blend by the update gate.
Mat gru_cell(const Mat& hidden_state, const Mat& input, const GruWeights& weights);

struct GruModel {
  GruConfig config;
  GruWeights cell;
  DenseNet init_net;    // (M + N*channels) -> hidden state
  DenseNet output_net;  // hidden state -> channels

  std::vector<Mat*> parameters();
};

/// Free-runs the model for `horizon` steps from the given histories (both
/// oldest-first; history_outputs is channel-blocked). `inputs`, when
/// non-empty, supplies the per-step exogenous input, otherwise zero.
/// Returns horizon x channels.
Mat predict_gru(const GruModel& model, const Vec& history_inputs, const Vec& history_outputs,
                int horizon, const Vec& inputs = {});

/// Unrolled multi-step prediction trained end to end (backpropagation
/// through time, Adam, mean-squared prediction error); deterministic per
/// seed. Throws koopman::DivergenceError if the loss leaves the finite range.
GruModel train_gru(const SimTrace& trace, const GruConfig& config, std::uint64_t seed = 0,
                   koopman::TrainReport* report = nullptr);

/// Mean-squared multi-step prediction loss and parameter gradients for one
/// batch of anchors; exposed for the finite-difference gradient check.
/// Gradient order matches GruModel::parameters().
double gru_loss_and_gradients(GruModel& model, const SimTrace& trace,
                              const std::vector<Eigen::Index>& anchors, int unroll,
                              std::vector<Mat>& grads);

void save_checkpoint(const GruModel& model, const std::filesystem::path& path);
GruModel load_gru_checkpoint(const std::filesystem::path& path);

/// Loss-term ablations of the lifted-linear trainer; Full keeps every term,
/// the others drop exactly one.
enum class AblationVariant { Full, DropRecon, DropYpred, DropZpred, DropLin };

/// Row labels used in comparison tables ("koopman", "model2".."model5").
const char* ablation_name(AblationVariant variant);

koopman::LossWeights ablation_weights(AblationVariant variant);

/// Same architecture, data handling and optimizer as koopman::train with one
/// loss term removed; Full is bit-identical to koopman::train under the same
/// seed.
koopman::KoopmanModel train_ablation(const SimTrace& trace, const koopman::LiftingConfig& config,
                                     AblationVariant variant, std::uint64_t seed = 0,
                                     koopman::TrainReport* report = nullptr);

}  // namespace kmpc::gru
