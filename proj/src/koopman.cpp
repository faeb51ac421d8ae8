#include "kmpc/koopman.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "kmpc/checkpoint.hpp"

namespace kmpc::koopman {

void LiftingConfig::validate() const {
  require(window >= 1, "window must be at least 1 sample");
  require(channels >= 1, "channel count must be positive");
  require(latent_dim >= 1, "latent dimension must be positive");
  require(encoder_hidden >= 1 && decoder_hidden >= 1, "hidden widths must be positive");
  require(multi_step >= 1, "multi-step horizon must be at least 1");
  require(weight_decay >= 0, "weight decay must be nonnegative");
  require(learning_rate > 0, "learning rate must be positive");
  require(batch_len >= 2, "batch length must be at least 2 columns");
  require(epochs >= 1, "epochs must be positive");
  require(refit_period >= 1, "refit period must be at least 1");
}

namespace {

/// Flattened window ending at sample `end` (inclusive): channel blocks in
/// order, oldest sample first inside each block.
void fill_window(const SimTrace& trace, Eigen::Index end, int window, Eigen::Ref<Vec> out) {
  const Eigen::Index n_ch = trace.channel_count();
  for (Eigen::Index c = 0; c < n_ch; ++c)
    out.segment(c * window, window) = trace.channels.col(c).segment(end - window + 1, window);
}

Mat matrix_power(const Mat& K, int p) {
  Mat out = Mat::Identity(K.rows(), K.cols());
  for (int i = 0; i < p; ++i) out = K * out;
  return out;
}

double mean_sq(const Mat& diff) {
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

}  // namespace

SnapshotMatrices embed_windows(const SimTrace& trace, const LiftingConfig& config) {
  config.validate();
  require(trace.channel_count() == config.channels, "trace channel count does not match config");
  const Eigen::Index n = trace.samples();
  const int tw = config.window;
  const int tp = config.multi_step;
  require(n >= tw + tp, "trace too short for the requested window and shift");

  const Eigen::Index cols = n - tw - tp + 1;
  const Eigen::Index dim = config.input_dim();
  SnapshotMatrices s;
  s.X.resize(dim, cols);
  s.Y.resize(dim, cols);
  s.Z.resize(dim, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Eigen::Index end = tw - 1 + j;
    fill_window(trace, end, tw, s.X.col(j));
    fill_window(trace, end + 1, tw, s.Y.col(j));
    fill_window(trace, end + tp, tw, s.Z.col(j));
  }
  return s;
}

namespace {

/// Ly * pinv(Lx) through a singular-value decomposition of Lx.
Mat pinv_solve(const Mat& lx, const Mat& ly, double rel_cutoff) {
  Eigen::BDCSVD<Mat> svd(lx, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double cutoff = rel_cutoff * (sv.size() > 0 ? sv[0] : 0.0);
  Vec inv = Vec::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff && sv[i] > 0.0) inv[i] = 1.0 / sv[i];
  return ((ly * svd.matrixV()) * inv.asDiagonal()) * svd.matrixU().transpose();
}

}  // namespace

Mat fit_operator(const Mat& latent_x, const Mat& latent_y, double rel_cutoff) {
  require(latent_x.rows() == latent_y.rows() && latent_x.cols() == latent_y.cols(),
          "latent matrices must share their shape");
  require(latent_x.cols() >= 1, "at least one latent pair required");
  return pinv_solve(latent_x, latent_y, rel_cutoff);
}

ForcedFit fit_input_gain(const Mat& latent_x, const Mat& latent_y, const Mat& inputs,
                         double rel_cutoff) {
  require(latent_x.rows() == latent_y.rows() && latent_x.cols() == latent_y.cols(),
          "latent matrices must share their shape");
  require(inputs.cols() == latent_x.cols(), "inputs must align with latent pairs");
  require(inputs.rows() >= 1, "at least one input channel required");
  require(inputs.cwiseAbs().maxCoeff() > 0.0,
          "input sequence is identically zero; input gain is unidentifiable");

  const Eigen::Index k = latent_x.rows();
  const Eigen::Index m = inputs.rows();
  Mat stacked(k + m, latent_x.cols());
  stacked.topRows(k) = latent_x;
  stacked.bottomRows(m) = inputs;
  const Mat kb = pinv_solve(stacked, latent_y, rel_cutoff);
  return {kb.leftCols(k), kb.rightCols(m)};
}

Mat KoopmanModel::encode(const Mat& windows) const {
  require(windows.rows() == config.input_dim(), "window dimension mismatch");
  return encoder.forward(windows);
}

Mat KoopmanModel::decode(const Mat& latents) const {
  require(latents.rows() == config.latent_dim, "latent dimension mismatch");
  return decoder.forward(latents);
}

Mat KoopmanModel::newest_samples(const Mat& windows) const {
  Mat out(config.channels, windows.cols());
  for (int c = 0; c < config.channels; ++c)
    out.row(c) = windows.row((c + 1) * config.window - 1);
  return out;
}

LossTerms total_loss(const KoopmanModel& model, const SnapshotMatrices& s,
                     const LossWeights& weights) {
  // forward-only evaluation: zero weights affect the total, not the term values
  const KoopmanModel& m = model;
  LossTerms terms;
  const Mat phi_x = m.encoder.forward(s.X);
  const Mat phi_y = m.encoder.forward(s.Y);
  const Mat kx = m.K * phi_x;
  const Mat kpx = matrix_power(m.K, m.config.multi_step) * phi_x;
  terms.recon = mean_sq(s.X - m.decoder.forward(phi_x));
  terms.ypred = mean_sq(s.Y - m.decoder.forward(kx));
  terms.zpred = mean_sq(s.Z - m.decoder.forward(kpx));
  terms.lin = mean_sq(phi_y - kx);
  terms.reg = m.config.weight_decay *
              (m.encoder.weight_squared_norm() + m.decoder.weight_squared_norm());
  terms.total = weights.recon * terms.recon + weights.ypred * terms.ypred +
                weights.zpred * terms.zpred + weights.lin * terms.lin + terms.reg;
  return terms;
}

LossTerms loss_and_gradients(const KoopmanModel& model, const SnapshotMatrices& s,
                             const LossWeights& weights, NetGradients& enc_grads,
                             NetGradients& dec_grads) {
  const Eigen::Index k = model.config.latent_dim;
  const Mat kp = matrix_power(model.K, model.config.multi_step);

  DenseNet::Cache enc_x, enc_y, dec_x, dec_y, dec_z;
  const Mat phi_x = model.encoder.forward(s.X, enc_x);
  const Mat phi_y = model.encoder.forward(s.Y, enc_y);
  const Mat kx = model.K * phi_x;
  const Mat kpx = kp * phi_x;
  const Mat x_hat = model.decoder.forward(phi_x, dec_x);
  const Mat y_hat = model.decoder.forward(kx, dec_y);
  const Mat z_hat = model.decoder.forward(kpx, dec_z);

  LossTerms terms;
  terms.recon = mean_sq(s.X - x_hat);
  terms.ypred = mean_sq(s.Y - y_hat);
  terms.zpred = mean_sq(s.Z - z_hat);
  terms.lin = mean_sq(phi_y - kx);
  terms.reg = model.config.weight_decay *
              (model.encoder.weight_squared_norm() + model.decoder.weight_squared_norm());
  terms.total = weights.recon * terms.recon + weights.ypred * terms.ypred +
                weights.zpred * terms.zpred + weights.lin * terms.lin + terms.reg;

  Mat d_phi_x = Mat::Zero(k, phi_x.cols());
  if (weights.recon != 0.0) {
    const Mat g = (2.0 * weights.recon / static_cast<double>(s.X.size())) * (x_hat - s.X);
    d_phi_x += model.decoder.backward(dec_x, g, dec_grads);
  }
  if (weights.ypred != 0.0) {
    const Mat g = (2.0 * weights.ypred / static_cast<double>(s.Y.size())) * (y_hat - s.Y);
    d_phi_x.noalias() += model.K.transpose() * model.decoder.backward(dec_y, g, dec_grads);
  }
  if (weights.zpred != 0.0) {
    const Mat g = (2.0 * weights.zpred / static_cast<double>(s.Z.size())) * (z_hat - s.Z);
    d_phi_x.noalias() += kp.transpose() * model.decoder.backward(dec_z, g, dec_grads);
  }
  if (weights.lin != 0.0) {
    const Mat r = (2.0 * weights.lin / static_cast<double>(phi_y.size())) * (phi_y - kx);
    model.encoder.backward(enc_y, r, enc_grads);
    d_phi_x.noalias() -= model.K.transpose() * r;
  }
  model.encoder.backward(enc_x, d_phi_x, enc_grads);

  const double wd = model.config.weight_decay;
  if (wd != 0.0) {
    for (size_t i = 0; i < model.encoder.layers.size(); ++i)
      enc_grads.dW[i] += 2.0 * wd * model.encoder.layers[i].W;
    for (size_t i = 0; i < model.decoder.layers.size(); ++i)
      dec_grads.dW[i] += 2.0 * wd * model.decoder.layers[i].W;
  }
  return terms;
}

DivergenceError::DivergenceError(int epoch)
    : std::runtime_error("training loss became non-finite at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

KoopmanModel train(const SimTrace& trace, const LiftingConfig& config,
                   const TrainOptions& options, TrainReport* report) {
  config.validate();
  const SnapshotMatrices full = embed_windows(trace, config);
  const Eigen::Index cols = full.X.cols();
  require(cols >= 2, "trace too short for one training batch");

  std::mt19937_64 rng(options.seed);
  KoopmanModel model;
  model.config = config;
  model.encoder = make_mlp(config.input_dim(), config.encoder_hidden, config.latent_dim,
                           Activation::Relu, rng);
  model.decoder = make_mlp(config.latent_dim, config.decoder_hidden, config.input_dim(),
                           Activation::Relu, rng);
  model.K = Mat::Identity(config.latent_dim, config.latent_dim);

  NetGradients enc_grads = model.encoder.make_gradients();
  NetGradients dec_grads = model.decoder.make_gradients();
  std::vector<Mat*> params = model.encoder.parameters();
  for (Mat* p : model.decoder.parameters()) params.push_back(p);
  Adam adam(config.learning_rate);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> batches;  // (begin, len)
  for (Eigen::Index b = 0; b < cols; b += config.batch_len) {
    const Eigen::Index len = std::min<Eigen::Index>(config.batch_len, cols - b);
    if (len >= 2) batches.emplace_back(b, len);
  }

  if (report) report->epoch_mean_loss.clear();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& [begin, len] : batches) {
      SnapshotMatrices batch{full.X.middleCols(begin, len), full.Y.middleCols(begin, len),
                             full.Z.middleCols(begin, len)};
      model.K = fit_operator(model.encoder.forward(batch.X), model.encoder.forward(batch.Y),
                             options.svd_cutoff);

      enc_grads.set_zero();
      dec_grads.set_zero();
      const LossTerms terms =
          loss_and_gradients(model, batch, options.weights, enc_grads, dec_grads);
      if (!std::isfinite(terms.total)) throw DivergenceError(epoch);
      loss_sum += terms.total;

      // order must match parameters(): W, b per layer, encoder then decoder
      std::vector<const Mat*> grads;
      for (size_t i = 0; i < enc_grads.dW.size(); ++i) {
        grads.push_back(&enc_grads.dW[i]);
        grads.push_back(&enc_grads.db[i]);
      }
      for (size_t i = 0; i < dec_grads.dW.size(); ++i) {
        grads.push_back(&dec_grads.dW[i]);
        grads.push_back(&dec_grads.db[i]);
      }
      adam.step(params, grads);
    }
    if (report) report->epoch_mean_loss.push_back(loss_sum / static_cast<double>(batches.size()));
  }

  model.K = fit_operator(model.encoder.forward(full.X), model.encoder.forward(full.Y),
                         options.svd_cutoff);
  return model;
}

Mat refit_operator(const KoopmanModel& model, const SimTrace& live, Eigen::Index end_idx,
                   int recent, double rel_cutoff) {
  const int tw = model.config.window;
  const Eigen::Index begin = std::max<Eigen::Index>(0, end_idx + 1 - recent);
  const Eigen::Index len = end_idx + 1 - begin;
  require(len >= tw + 1, "not enough live samples to refit the operator");

  const SimTrace seg = live.segment(begin, len);
  LiftingConfig cfg = model.config;
  cfg.multi_step = 1;
  const SnapshotMatrices s = embed_windows(seg, cfg);
  Mat ly = model.encode(s.Y);
  if (live.has_input() && model.B.size() > 0) {
    // remove the known input contribution; the X column ending at local index
    // tw-1+j was advanced under input[tw-1+j]
    for (Eigen::Index j = 0; j < ly.cols(); ++j)
      ly.col(j).noalias() -= model.B * Vec::Constant(model.B.cols(), seg.input[tw - 1 + j]);
  }
  return fit_operator(model.encode(s.X), ly, rel_cutoff);
}

SimTrace predict(const KoopmanModel& model, const Mat& seed_window, int horizon,
                 const PredictOptions& options) {
  require(horizon >= 0, "prediction horizon must be nonnegative");
  require(seed_window.rows() == model.config.input_dim() && seed_window.cols() == 1,
          "seed window must be input_dim x 1");
  const double rate = options.live ? options.live->rate : options.rate;
  const int tw = model.config.window;
  const Eigen::Index seed_end = options.live ? options.seed_end : tw - 1;
  if (options.live) {
    require(options.seed_end >= tw - 1 && options.seed_end < options.live->samples(),
            "seed_end must index a full window inside the live trace");
  }

  SimTrace out;
  out.rate = rate;
  if (horizon == 0) {
    const Mat recon = model.decode(model.encode(seed_window));
    out.t.resize(tw);
    out.channels.resize(tw, model.config.channels);
    for (int i = 0; i < tw; ++i) {
      out.t[i] = (seed_end - tw + 1 + i) / rate;
      for (int c = 0; c < model.config.channels; ++c)
        out.channels(i, c) = recon(c * tw + i, 0);
    }
    return out;
  }

  if (options.inputs) {
    require(model.B.size() > 0, "model has no input gain for the supplied inputs");
    require(options.inputs->rows() == model.B.cols() && options.inputs->cols() >= horizon,
            "input sequence must be m x horizon");
  }

  Mat k_live = model.K;
  Vec z = model.encode(seed_window).col(0);
  out.t.resize(horizon);
  out.channels.resize(horizon, model.config.channels);

  for (int i = 0; i < horizon; ++i) {
    if (options.live && options.refit_period > 0 && i > 0 && i % options.refit_period == 0) {
      const Eigen::Index now = seed_end + i;
      if (now < options.live->samples() && now + 1 >= tw + 1) {
        const int avail = static_cast<int>(std::min<Eigen::Index>(options.refit_window, now + 1));
        if (avail >= tw + 1)
          k_live = refit_operator(model, *options.live, now, avail, options.svd_cutoff);
        Mat win(model.config.input_dim(), 1);
        fill_window(*options.live, now, tw, win.col(0));
        z = model.encode(win).col(0);
      }
    }
    z = k_live * z;
    if (options.inputs) z.noalias() += model.B * options.inputs->col(i);
    const Mat w = model.decode(z);
    out.t[i] = (seed_end + 1 + i) / rate;
    out.channels.row(i) = model.newest_samples(w).col(0);
  }
  return out;
}

SpectralModes spectral_decomposition(const Mat& K, double rate) {
  require(K.rows() == K.cols(), "operator must be square");
  require(rate > 0, "rate must be positive");
  Eigen::EigenSolver<Mat> solver(K);
  SpectralModes modes;
  modes.eigenvalues = solver.eigenvalues();
  modes.eigenvectors = solver.eigenvectors();
  const Eigen::Index n = modes.eigenvalues.size();
  modes.frequency_hz.resize(n);
  modes.growth_rate.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lambda = modes.eigenvalues[i];
    modes.frequency_hz[i] = std::arg(lambda) * rate / (2.0 * std::numbers::pi);
    const double mag = std::abs(lambda);
    modes.growth_rate[i] = (mag > 0 ? std::log(mag) : -std::numeric_limits<double>::infinity()) * rate;
  }
  const double residual =
      (K * modes.eigenvectors - modes.eigenvectors * modes.eigenvalues.asDiagonal()).norm();
  modes.eigenvectors_reliable =
      solver.info() == Eigen::Success && residual <= 1e-8 * std::max(1.0, K.norm());
  return modes;
}

void save_checkpoint(const KoopmanModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["kind"] = "koopman";
  j["config"] = {{"window", model.config.window},
                 {"channels", model.config.channels},
                 {"latent_dim", model.config.latent_dim},
                 {"encoder_hidden", model.config.encoder_hidden},
                 {"decoder_hidden", model.config.decoder_hidden},
                 {"multi_step", model.config.multi_step},
                 {"weight_decay", model.config.weight_decay},
                 {"learning_rate", model.config.learning_rate},
                 {"batch_len", model.config.batch_len},
                 {"epochs", model.config.epochs},
                 {"refit_period", model.config.refit_period}};
  j["encoder"] = net_to_json(model.encoder);
  j["decoder"] = net_to_json(model.decoder);
  j["K"] = mat_to_json(model.K);
  j["B"] = mat_to_json(model.B);
  write_json_atomic(j, path);
}

KoopmanModel load_koopman_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  require(j.at("kind").get<std::string>() == "koopman", "checkpoint is not a koopman model");
  KoopmanModel model;
  const auto& c = j.at("config");
  model.config.window = c.at("window").get<int>();
  model.config.channels = c.at("channels").get<int>();
  model.config.latent_dim = c.at("latent_dim").get<int>();
  model.config.encoder_hidden = c.at("encoder_hidden").get<int>();
  model.config.decoder_hidden = c.at("decoder_hidden").get<int>();
  model.config.multi_step = c.at("multi_step").get<int>();
  model.config.weight_decay = c.at("weight_decay").get<double>();
  model.config.learning_rate = c.at("learning_rate").get<double>();
  model.config.batch_len = c.at("batch_len").get<int>();
  model.config.epochs = c.at("epochs").get<int>();
  model.config.refit_period = c.at("refit_period").get<int>();
  model.encoder = net_from_json(j.at("encoder"));
  model.decoder = net_from_json(j.at("decoder"));
  model.K = mat_from_json(j.at("K"));
  model.B = mat_from_json(j.at("B"));
  return model;
}

}  // namespace kmpc::koopman
