#pragma once

#include <random>
#include <vector>

#include "kmpc/types.hpp"

namespace kmpc {

enum class Activation { Identity, Relu, Tanh };

Mat apply_activation(Activation act, const Mat& pre);
/// Elementwise derivative of the activation evaluated at the pre-activation.
Mat activation_grad(Activation act, const Mat& pre);

/// One dense layer. Bias is stored as a column so every trainable tensor is
/// a Mat and the optimizer handles a single type.
struct DenseLayer {
  Mat W;
  Mat b;  // rows() x 1
  Activation act = Activation::Identity;
};

struct NetGradients {
  std::vector<Mat> dW;
  std::vector<Mat> db;

  void set_zero();
};

/// Fully connected feed-forward net over column-stacked samples.
struct DenseNet {
  std::vector<DenseLayer> layers;

  Eigen::Index input_dim() const { return layers.front().W.cols(); }
  Eigen::Index output_dim() const { return layers.back().W.rows(); }

  Mat forward(const Mat& x) const;

  struct Cache {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation of each layer
  };
  Mat forward(const Mat& x, Cache& cache) const;

  /// Backpropagates grad_out (dLoss/dOutput), accumulating parameter
  /// gradients into `grads` and returning dLoss/dInput. `grads` must be
  /// shaped by make_gradients().
  Mat backward(const Cache& cache, const Mat& grad_out, NetGradients& grads) const;

  NetGradients make_gradients() const;
  double weight_squared_norm() const;  // biases excluded

  std::vector<Mat*> parameters();
};

/// Two-layer perceptron in -> hidden (act) -> out (identity) with
/// Glorot-uniform weights and zero biases.
DenseNet make_mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
                  Activation hidden_act, std::mt19937_64& rng);

/// Adam with bias correction; lazily sizes its moments on the first step.
/// A zero gradient leaves parameters exactly unchanged.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace kmpc
