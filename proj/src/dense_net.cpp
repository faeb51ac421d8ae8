#include "kmpc/dense_net.hpp"

#include <cmath>

namespace kmpc {

Mat apply_activation(Activation act, const Mat& pre) {
  switch (act) {
    case Activation::Identity:
      return pre;
    case Activation::Relu:
      return pre.cwiseMax(0.0);
    case Activation::Tanh:
      return pre.array().tanh().matrix();
  }
  throw std::logic_error("unknown activation");
}

Mat activation_grad(Activation act, const Mat& pre) {
  switch (act) {
    case Activation::Identity:
      return Mat::Ones(pre.rows(), pre.cols());
    case Activation::Relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: {
      Mat th = pre.array().tanh().matrix();
      return (1.0 - th.array().square()).matrix();
    }
  }
  throw std::logic_error("unknown activation");
}

void NetGradients::set_zero() {
  for (auto& g : dW) g.setZero();
  for (auto& g : db) g.setZero();
}

Mat DenseNet::forward(const Mat& x) const {
  Mat h = x;
  for (const auto& layer : layers)
    h = apply_activation(layer.act, (layer.W * h).colwise() + layer.b.col(0));
  return h;
}

Mat DenseNet::forward(const Mat& x, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Mat h = x;
  for (const auto& layer : layers) {
    cache.inputs.push_back(h);
    Mat pre = (layer.W * h).colwise() + layer.b.col(0);
    cache.pre.push_back(pre);
    h = apply_activation(layer.act, pre);
  }
  return h;
}

Mat DenseNet::backward(const Cache& cache, const Mat& grad_out, NetGradients& grads) const {
  Mat g = grad_out;
  for (auto i = static_cast<std::ptrdiff_t>(layers.size()) - 1; i >= 0; --i) {
    const auto& layer = layers[static_cast<size_t>(i)];
    Mat dpre = g.cwiseProduct(activation_grad(layer.act, cache.pre[static_cast<size_t>(i)]));
    grads.dW[static_cast<size_t>(i)].noalias() += dpre * cache.inputs[static_cast<size_t>(i)].transpose();
    grads.db[static_cast<size_t>(i)].col(0).noalias() += dpre.rowwise().sum();
    g.noalias() = layer.W.transpose() * dpre;
  }
  return g;
}

NetGradients DenseNet::make_gradients() const {
  NetGradients g;
  for (const auto& layer : layers) {
    g.dW.push_back(Mat::Zero(layer.W.rows(), layer.W.cols()));
    g.db.push_back(Mat::Zero(layer.b.rows(), 1));
  }
  return g;
}

double DenseNet::weight_squared_norm() const {
  double s = 0.0;
  for (const auto& layer : layers) s += layer.W.squaredNorm();
  return s;
}

std::vector<Mat*> DenseNet::parameters() {
  std::vector<Mat*> out;
  for (auto& layer : layers) {
    out.push_back(&layer.W);
    out.push_back(&layer.b);
  }
  return out;
}

namespace {

Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = dist(rng);
  return w;
}

}  // namespace

DenseNet make_mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
                  Activation hidden_act, std::mt19937_64& rng) {
  require(in > 0 && hidden > 0 && out > 0, "layer sizes must be positive");
  DenseNet net;
  net.layers.push_back({glorot_uniform(hidden, in, rng), Mat::Zero(hidden, 1), hidden_act});
  net.layers.push_back({glorot_uniform(out, hidden, rng), Mat::Zero(out, 1), Activation::Identity});
  return net;
}

void Adam::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
  require(params.size() == grads.size(), "parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * (*grads[i]);
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i]->cwiseProduct(*grads[i]);
    params[i]->array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace kmpc
