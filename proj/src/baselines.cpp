#include "kmpc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kmpc/checkpoint.hpp"

namespace kmpc::gru {

double hard_sigmoid(double x) { return std::clamp(0.2 * x + 0.5, 0.0, 1.0); }

Mat hard_sigmoid(const Mat& x) {
  return (0.2 * x.array() + 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

namespace {

/// Derivative of hard_sigmoid at the pre-activation (0.2 on the linear ramp).
Mat hard_sigmoid_grad(const Mat& pre) {
  return ((pre.array() > -2.5) && (pre.array() < 2.5)).cast<double>().matrix() * 0.2;
}

}  // namespace

void GruConfig::validate() const {
  require(prev_inputs >= 1 && prev_outputs >= 1, "history counts must be positive");
  require(horizon >= 1, "prediction length must be positive");
  require(train_horizon >= 0, "training horizon must be nonnegative");
  require(batch >= 1, "batch size must be positive");
  require(hidden >= 1 && init_hidden >= 1 && output_hidden >= 1, "unit counts must be positive");
  require(channels >= 1, "channel count must be positive");
  require(learning_rate > 0, "learning rate must be positive");
  require(epochs >= 1 && steps_per_epoch >= 1, "training schedule must be positive");
  require(sample_rate > 0, "sample rate must be positive");
}

Mat gru_cell(const Mat& hidden_state, const Mat& input, const GruWeights& w) {
  require(hidden_state.rows() == w.Wx_z.cols(), "hidden state dimension mismatch");
  require(input.rows() == w.Wi_z.cols(), "input dimension mismatch");
  require(hidden_state.cols() == input.cols(), "batch sizes differ");
  const Mat z = hard_sigmoid(((w.Wi_z * input + w.Wx_z * hidden_state).colwise() + w.b_z.col(0)).eval());
  const Mat r = hard_sigmoid(((w.Wi_r * input + w.Wx_r * hidden_state).colwise() + w.b_r.col(0)).eval());
  const Mat h =
      ((w.Wi_h * input + w.Wx_h * r.cwiseProduct(hidden_state)).colwise() + w.b_h.col(0))
          .array()
          .tanh()
          .matrix();
  return z.cwiseProduct(hidden_state) + (Mat::Ones(z.rows(), z.cols()) - z).cwiseProduct(h);
}

std::vector<Mat*> GruModel::parameters() {
  std::vector<Mat*> out{&cell.Wi_z, &cell.Wi_r, &cell.Wi_h, &cell.Wx_z, &cell.Wx_r,
                        &cell.Wx_h, &cell.b_z,  &cell.b_r,  &cell.b_h};
  for (Mat* p : init_net.parameters()) out.push_back(p);
  for (Mat* p : output_net.parameters()) out.push_back(p);
  return out;
}

namespace {

/// History vector for the anchor (index of its newest sample): M inputs then
/// N outputs per channel, oldest first.
Vec history_vector(const SimTrace& trace, const GruConfig& cfg, Eigen::Index anchor) {
  Vec h(cfg.prev_inputs + cfg.prev_outputs * cfg.channels);
  for (int i = 0; i < cfg.prev_inputs; ++i) {
    const Eigen::Index idx = anchor - cfg.prev_inputs + 1 + i;
    h[i] = trace.has_input() ? trace.input[idx] : 0.0;
  }
  for (int c = 0; c < cfg.channels; ++c)
    for (int i = 0; i < cfg.prev_outputs; ++i) {
      const Eigen::Index idx = anchor - cfg.prev_outputs + 1 + i;
      h[cfg.prev_inputs + c * cfg.prev_outputs + i] = trace.channels(idx, c);
    }
  return h;
}

struct StepCache {
  Mat x;        // hidden state entering the step
  Mat v;        // input
  Mat z, r, h;  // gate activations
  Mat az, ar;   // gate pre-activations
  Mat rx;       // r .* x
  DenseNet::Cache out_cache;
};

}  // namespace

double gru_loss_and_gradients(GruModel& model, const SimTrace& trace,
                              const std::vector<Eigen::Index>& anchors, int unroll,
                              std::vector<Mat>& grads) {
  const GruConfig& cfg = model.config;
  const auto batch = static_cast<Eigen::Index>(anchors.size());
  const Eigen::Index hid = cfg.hidden;

  Mat hist(cfg.prev_inputs + cfg.prev_outputs * cfg.channels, batch);
  for (Eigen::Index j = 0; j < batch; ++j) hist.col(j) = history_vector(trace, cfg, anchors[j]);

  DenseNet::Cache init_cache;
  Mat x = model.init_net.forward(hist, init_cache);

  const GruWeights& w = model.cell;
  std::vector<StepCache> steps(static_cast<size_t>(unroll));
  std::vector<Mat> outputs(static_cast<size_t>(unroll));
  for (int k = 0; k < unroll; ++k) {
    auto& sc = steps[static_cast<size_t>(k)];
    sc.x = x;
    sc.v.resize(1, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      sc.v(0, j) = trace.has_input() ? trace.input[anchors[j] + k] : 0.0;
    sc.az = (w.Wi_z * sc.v + w.Wx_z * x).colwise() + w.b_z.col(0);
    sc.ar = (w.Wi_r * sc.v + w.Wx_r * x).colwise() + w.b_r.col(0);
    sc.z = hard_sigmoid(sc.az);
    sc.r = hard_sigmoid(sc.ar);
    sc.rx = sc.r.cwiseProduct(x);
    sc.h = (((w.Wi_h * sc.v + w.Wx_h * sc.rx).colwise() + w.b_h.col(0)).array().tanh()).matrix();
    x = sc.z.cwiseProduct(x) + (Mat::Ones(hid, batch) - sc.z).cwiseProduct(sc.h);
    outputs[static_cast<size_t>(k)] = model.output_net.forward(x, sc.out_cache);
  }

  // mean-squared prediction error over steps, batch and channels
  double loss = 0.0;
  const double denom = static_cast<double>(unroll) * static_cast<double>(batch) *
                       static_cast<double>(cfg.channels);
  std::vector<Mat> dout(static_cast<size_t>(unroll));
  for (int k = 0; k < unroll; ++k) {
    Mat target(cfg.channels, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (int c = 0; c < cfg.channels; ++c) target(c, j) = trace.channels(anchors[j] + 1 + k, c);
    const Mat diff = outputs[static_cast<size_t>(k)] - target;
    loss += diff.squaredNorm();
    dout[static_cast<size_t>(k)] = (2.0 / denom) * diff;
  }
  loss /= denom;

  NetGradients init_grads = model.init_net.make_gradients();
  NetGradients out_grads = model.output_net.make_gradients();
  Mat dWi_z = Mat::Zero(hid, 1), dWi_r = Mat::Zero(hid, 1), dWi_h = Mat::Zero(hid, 1);
  Mat dWx_z = Mat::Zero(hid, hid), dWx_r = Mat::Zero(hid, hid), dWx_h = Mat::Zero(hid, hid);
  Mat db_z = Mat::Zero(hid, 1), db_r = Mat::Zero(hid, 1), db_h = Mat::Zero(hid, 1);

  Mat dx_next = Mat::Zero(hid, batch);
  for (int k = unroll - 1; k >= 0; --k) {
    auto& sc = steps[static_cast<size_t>(k)];
    dx_next += model.output_net.backward(sc.out_cache, dout[static_cast<size_t>(k)], out_grads);

    const Mat dz = dx_next.cwiseProduct(sc.x - sc.h);
    const Mat dh = dx_next.cwiseProduct(Mat::Ones(hid, batch) - sc.z);
    Mat dx = dx_next.cwiseProduct(sc.z);

    const Mat dah = dh.cwiseProduct((1.0 - sc.h.array().square()).matrix());
    dWi_h.noalias() += dah * sc.v.transpose();
    dWx_h.noalias() += dah * sc.rx.transpose();
    db_h.col(0).noalias() += dah.rowwise().sum();
    const Mat drx = w.Wx_h.transpose() * dah;
    const Mat dr = drx.cwiseProduct(sc.x);
    dx += drx.cwiseProduct(sc.r);

    const Mat daz = dz.cwiseProduct(hard_sigmoid_grad(sc.az));
    const Mat dar = dr.cwiseProduct(hard_sigmoid_grad(sc.ar));
    dWi_z.noalias() += daz * sc.v.transpose();
    dWi_r.noalias() += dar * sc.v.transpose();
    db_z.col(0).noalias() += daz.rowwise().sum();
    db_r.col(0).noalias() += dar.rowwise().sum();
    dWx_z.noalias() += daz * sc.x.transpose();
    dWx_r.noalias() += dar * sc.x.transpose();
    dx.noalias() += w.Wx_z.transpose() * daz;
    dx.noalias() += w.Wx_r.transpose() * dar;

    dx_next = std::move(dx);
  }
  model.init_net.backward(init_cache, dx_next, init_grads);

  grads.clear();
  grads.reserve(17);
  grads.push_back(dWi_z);
  grads.push_back(dWi_r);
  grads.push_back(dWi_h);
  grads.push_back(dWx_z);
  grads.push_back(dWx_r);
  grads.push_back(dWx_h);
  grads.push_back(db_z);
  grads.push_back(db_r);
  grads.push_back(db_h);
  for (size_t i = 0; i < init_grads.dW.size(); ++i) {
    grads.push_back(init_grads.dW[i]);
    grads.push_back(init_grads.db[i]);
  }
  for (size_t i = 0; i < out_grads.dW.size(); ++i) {
    grads.push_back(out_grads.dW[i]);
    grads.push_back(out_grads.db[i]);
  }
  return loss;
}

namespace {

Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

GruModel train_gru(const SimTrace& trace, const GruConfig& config, std::uint64_t seed,
                   koopman::TrainReport* report) {
  config.validate();
  const int unroll = config.unroll();
  const Eigen::Index history = std::max(config.prev_inputs, config.prev_outputs);
  require(trace.channel_count() == config.channels, "trace channel count does not match config");
  require(trace.samples() >= history + unroll + 1, "trace too short for one training sequence");

  std::mt19937_64 rng(seed);
  GruModel model;
  model.config = config;
  const Eigen::Index hid = config.hidden;
  model.cell = GruWeights{glorot(hid, 1, rng),   glorot(hid, 1, rng),   glorot(hid, 1, rng),
                          glorot(hid, hid, rng), glorot(hid, hid, rng), glorot(hid, hid, rng),
                          Mat::Zero(hid, 1),     Mat::Zero(hid, 1),     Mat::Zero(hid, 1)};
  model.init_net = make_mlp(config.prev_inputs + config.prev_outputs * config.channels,
                            config.init_hidden, hid, Activation::Tanh, rng);
  model.output_net = make_mlp(hid, config.output_hidden, config.channels, Activation::Tanh, rng);

  std::vector<Eigen::Index> anchors;
  for (Eigen::Index a = history - 1; a + unroll < trace.samples(); ++a) anchors.push_back(a);

  std::vector<Mat*> params = model.parameters();
  Adam adam(config.learning_rate);
  std::vector<Mat> grads;
  if (report) report->epoch_mean_loss.clear();

  std::uniform_int_distribution<size_t> pick(0, anchors.size() - 1);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      std::vector<Eigen::Index> batch(static_cast<size_t>(config.batch));
      for (auto& a : batch) a = anchors[pick(rng)];
      const double loss = gru_loss_and_gradients(model, trace, batch, unroll, grads);
      if (!std::isfinite(loss)) throw koopman::DivergenceError(epoch);
      loss_sum += loss;
      std::vector<const Mat*> gp;
      gp.reserve(grads.size());
      for (const Mat& g : grads) gp.push_back(&g);
      adam.step(params, gp);
    }
    if (report)
      report->epoch_mean_loss.push_back(loss_sum / static_cast<double>(config.steps_per_epoch));
  }
  return model;
}

Mat predict_gru(const GruModel& model, const Vec& history_inputs, const Vec& history_outputs,
                int horizon, const Vec& inputs) {
  const GruConfig& cfg = model.config;
  require(history_inputs.size() == cfg.prev_inputs, "input history length mismatch");
  require(history_outputs.size() ==
              static_cast<Eigen::Index>(cfg.prev_outputs) * cfg.channels,
          "output history length mismatch");
  require(horizon >= 0, "horizon must be nonnegative");
  require(inputs.size() == 0 || inputs.size() >= horizon, "per-step inputs too short");

  Vec hist(history_inputs.size() + history_outputs.size());
  hist << history_inputs, history_outputs;
  Mat x = model.init_net.forward(hist);

  Mat out(horizon, cfg.channels);
  Mat v = Mat::Zero(1, 1);
  for (int k = 0; k < horizon; ++k) {
    v(0, 0) = inputs.size() > 0 ? inputs[k] : 0.0;
    x = gru_cell(x, v, model.cell);
    out.row(k) = model.output_net.forward(x).col(0).transpose();
  }
  return out;
}

void save_checkpoint(const GruModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["kind"] = "gru";
  j["config"] = {{"prev_inputs", model.config.prev_inputs},
                 {"prev_outputs", model.config.prev_outputs},
                 {"horizon", model.config.horizon},
                 {"train_horizon", model.config.train_horizon},
                 {"batch", model.config.batch},
                 {"hidden", model.config.hidden},
                 {"init_hidden", model.config.init_hidden},
                 {"output_hidden", model.config.output_hidden},
                 {"channels", model.config.channels},
                 {"learning_rate", model.config.learning_rate},
                 {"epochs", model.config.epochs},
                 {"steps_per_epoch", model.config.steps_per_epoch},
                 {"sample_rate", model.config.sample_rate}};
  j["cell"] = {{"Wi_z", mat_to_json(model.cell.Wi_z)}, {"Wi_r", mat_to_json(model.cell.Wi_r)},
               {"Wi_h", mat_to_json(model.cell.Wi_h)}, {"Wx_z", mat_to_json(model.cell.Wx_z)},
               {"Wx_r", mat_to_json(model.cell.Wx_r)}, {"Wx_h", mat_to_json(model.cell.Wx_h)},
               {"b_z", mat_to_json(model.cell.b_z)},   {"b_r", mat_to_json(model.cell.b_r)},
               {"b_h", mat_to_json(model.cell.b_h)}};
  j["init_net"] = net_to_json(model.init_net);
  j["output_net"] = net_to_json(model.output_net);
  write_json_atomic(j, path);
}

GruModel load_gru_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  require(j.at("kind").get<std::string>() == "gru", "checkpoint is not a gru model");
  GruModel model;
  const auto& c = j.at("config");
  model.config.prev_inputs = c.at("prev_inputs").get<int>();
  model.config.prev_outputs = c.at("prev_outputs").get<int>();
  model.config.horizon = c.at("horizon").get<int>();
  model.config.train_horizon = c.at("train_horizon").get<int>();
  model.config.batch = c.at("batch").get<int>();
  model.config.hidden = c.at("hidden").get<int>();
  model.config.init_hidden = c.at("init_hidden").get<int>();
  model.config.output_hidden = c.at("output_hidden").get<int>();
  model.config.channels = c.at("channels").get<int>();
  model.config.learning_rate = c.at("learning_rate").get<double>();
  model.config.epochs = c.at("epochs").get<int>();
  model.config.steps_per_epoch = c.at("steps_per_epoch").get<int>();
  model.config.sample_rate = c.at("sample_rate").get<double>();
  const auto& cell = j.at("cell");
  model.cell.Wi_z = mat_from_json(cell.at("Wi_z"));
  model.cell.Wi_r = mat_from_json(cell.at("Wi_r"));
  model.cell.Wi_h = mat_from_json(cell.at("Wi_h"));
  model.cell.Wx_z = mat_from_json(cell.at("Wx_z"));
  model.cell.Wx_r = mat_from_json(cell.at("Wx_r"));
  model.cell.Wx_h = mat_from_json(cell.at("Wx_h"));
  model.cell.b_z = mat_from_json(cell.at("b_z"));
  model.cell.b_r = mat_from_json(cell.at("b_r"));
  model.cell.b_h = mat_from_json(cell.at("b_h"));
  model.init_net = net_from_json(j.at("init_net"));
  model.output_net = net_from_json(j.at("output_net"));
  return model;
}

const char* ablation_name(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::Full:
      return "koopman";
    case AblationVariant::DropRecon:
      return "model2";
    case AblationVariant::DropYpred:
      return "model3";
    case AblationVariant::DropZpred:
      return "model4";
    case AblationVariant::DropLin:
      return "model5";
  }
  throw std::logic_error("unknown ablation variant");
}

koopman::LossWeights ablation_weights(AblationVariant variant) {
  koopman::LossWeights w;
  switch (variant) {
    case AblationVariant::Full:
      break;
    case AblationVariant::DropRecon:
      w.recon = 0.0;
      break;
    case AblationVariant::DropYpred:
      w.ypred = 0.0;
      break;
    case AblationVariant::DropZpred:
      w.zpred = 0.0;
      break;
    case AblationVariant::DropLin:
      w.lin = 0.0;
      break;
  }
  return w;
}

koopman::KoopmanModel train_ablation(const SimTrace& trace, const koopman::LiftingConfig& config,
                                     AblationVariant variant, std::uint64_t seed,
                                     koopman::TrainReport* report) {
  koopman::TrainOptions options;
  options.seed = seed;
  options.weights = ablation_weights(variant);
  return koopman::train(trace, config, options, report);
}

}  // namespace kmpc::gru
