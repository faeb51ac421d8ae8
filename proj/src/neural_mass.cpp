#include "kmpc/neural_mass.hpp"

#include <cmath>
#include <sstream>

namespace kmpc::nmm {

void JansenRitParams::validate() const {
  require(a > 0 && b > 0, "time constants a, b must be positive");
  require(r > 0, "sigmoid steepness r must be positive");
  require(e0 > 0, "half maximum firing rate e0 must be positive");
  require(C1 >= 0 && C2 >= 0 && C3 >= 0 && C4 >= 0, "connectivities must be nonnegative");
}

void DoubleColumnParams::validate() const {
  column1.validate();
  column2.validate();
  require(a_d > 0, "delay time constant a_d must be positive");
}

double sigmoid(double v, const JansenRitParams& params) {
  return 2.0 * params.e0 / (1.0 + std::exp(params.r * (params.v0 - v)));
}

Vec single_column_rhs(const Vec& state, double /*t*/, double u, const JansenRitParams& prm) {
  require(state.size() == 6, "single column state must have dimension 6");
  const double y1 = state[0], y2 = state[1], y3 = state[2];
  const double y4 = state[3], y5 = state[4], y6 = state[5];
  const double a = prm.a, b = prm.b;

  Vec d(6);
  d[0] = y4;
  d[1] = y5 + u;
  d[2] = y6;
  d[3] = prm.A * a * sigmoid(y2 - y3, prm) - 2.0 * a * y4 - a * a * y1;
  d[4] = prm.A * a * (prm.p + prm.C2 * sigmoid(prm.C1 * y1, prm)) - 2.0 * a * y5 - a * a * y2;
  d[5] = prm.B_inh * b * prm.C4 * sigmoid(prm.C3 * y1, prm) - 2.0 * b * y6 - b * b * y3;
  return d;
}

Vec double_column_rhs(const Vec& state, double /*t*/, double u, const DoubleColumnParams& prm) {
  require(state.size() == 16, "double column state must have dimension 16");
  const JansenRitParams& c1 = prm.column1;
  const JansenRitParams& c2 = prm.column2;
  const double a = c1.a, b = c1.b, ad = prm.a_d;
  const auto& y = state;

  Vec d(16);
  // column 1, driven by the delayed column-2 output K2*y13
  d[0] = y[3];
  d[3] = c1.A * a * sigmoid(y[1] - y[2], c1) - 2.0 * a * y[3] - a * a * y[0];
  d[1] = y[4] + u;
  d[4] = c1.A * a * (c1.p + c1.C2 * sigmoid(c1.C1 * y[0], c1) + prm.K2 * y[13]) -
         2.0 * a * y[4] - a * a * y[1];
  d[2] = y[5];
  d[5] = c1.B_inh * b * c1.C4 * sigmoid(c1.C3 * y[0], c1) - 2.0 * b * y[5] - b * b * y[2];
  // column 2, driven by the delayed column-1 output K1*y12
  d[6] = y[9];
  d[9] = c2.A * a * sigmoid(y[7] - y[8], c2) - 2.0 * a * y[9] - a * a * y[6];
  d[7] = y[10];
  d[10] = c2.A * a * (c2.p + c2.C2 * sigmoid(c2.C1 * y[6], c2) + prm.K1 * y[12]) -
          2.0 * a * y[10] - a * a * y[7];
  d[8] = y[11];
  d[11] = c2.B_inh * b * c2.C4 * sigmoid(c2.C3 * y[6], c2) - 2.0 * b * y[11] - b * b * y[8];
  // delayed transfers; the stiffness term keeps the a^2 coefficient
  d[12] = y[14];
  d[14] = c2.A * ad * sigmoid(y[1] - y[2], c1) - 2.0 * ad * y[14] - a * a * y[12];
  d[13] = y[15];
  d[15] = c2.A * ad * sigmoid(y[7] - y[8], c2) - 2.0 * ad * y[15] - a * a * y[13];
  return d;
}

BlowUpError::BlowUpError(double time)
    : std::runtime_error([time] {
        std::ostringstream os;
        os << "state became non-finite at t = " << time << " s";
        return os.str();
      }()),
      time_(time) {}

namespace {

Vec rk4_step(const RhsFn& rhs, const Vec& y, double t, double h, double u) {
  const Vec k1 = rhs(y, t, u);
  const Vec k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h, u);
  const Vec k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h, u);
  const Vec k4 = rhs(y + h * k3, t + h, u);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Trajectory integrate(const RhsFn& rhs, const Vec& initial, double duration, double step,
                     const SampledSignal& input) {
  require(step > 0, "integration step must be positive");
  require(duration >= step, "duration must cover at least one step");

  const auto n = static_cast<Eigen::Index>(std::llround(duration / step));
  Trajectory traj;
  traj.times.resize(n + 1);
  traj.states.resize(n + 1, initial.size());
  Vec y = initial;
  traj.times[0] = 0.0;
  traj.states.row(0) = y;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = i * step;
    y = rk4_step(rhs, y, t, step, input.at(t));
    if (!y.allFinite()) throw BlowUpError((i + 1) * step);
    traj.times[i + 1] = (i + 1) * step;
    traj.states.row(i + 1) = y;
  }
  return traj;
}

void SimConfig::validate() const {
  require(step > 0, "step must be positive");
  require(sample_rate > 0, "sample rate must be positive");
  require(burn_in >= 0, "burn-in must be nonnegative");
  require(duration > burn_in, "duration must exceed the burn-in");
  const double per = 1.0 / (step * sample_rate);
  require(std::abs(per - std::llround(per)) < 1e-9,
          "sample rate must divide the integration step rate");
  if (noisy_drive) require(p_min <= p_max, "noise drive bounds out of order");
}

Plant::Plant(const JansenRitParams& params, const SimConfig& config)
    : variant_(ColumnVariant::Single),
      single_(params),
      config_(config),
      state_(Vec::Zero(6)),
      rng_(config.seed),
      drive_(config.p_min, config.p_max) {
  params.validate();
  config.validate();
  substeps_per_sample_ = static_cast<int>(std::llround(1.0 / (config.step * config.sample_rate)));
}

Plant::Plant(const DoubleColumnParams& params, const SimConfig& config)
    : variant_(ColumnVariant::Double),
      double_(params),
      config_(config),
      state_(Vec::Zero(16)),
      rng_(config.seed),
      drive_(config.p_min, config.p_max) {
  params.validate();
  config.validate();
  substeps_per_sample_ = static_cast<int>(std::llround(1.0 / (config.step * config.sample_rate)));
}

void Plant::substep(double u) {
  if (variant_ == ColumnVariant::Single) {
    JansenRitParams prm = single_;
    if (config_.noisy_drive) prm.p = drive_(rng_);
    state_ = rk4_step(
        [&prm](const Vec& y, double t, double uu) { return single_column_rhs(y, t, uu, prm); },
        state_, time_, config_.step, u);
  } else {
    DoubleColumnParams prm = double_;
    if (config_.noisy_drive) {
      prm.column1.p = drive_(rng_);
      prm.column2.p = drive_(rng_);
    }
    state_ = rk4_step(
        [&prm](const Vec& y, double t, double uu) { return double_column_rhs(y, t, uu, prm); },
        state_, time_, config_.step, u);
  }
  time_ += config_.step;
  if (!state_.allFinite()) throw BlowUpError(time_);
}

void Plant::run_burn_in(double seconds) {
  const auto n = static_cast<long long>(std::llround(seconds / config_.step));
  for (long long i = 0; i < n; ++i) substep(0.0);
  time_ = 0.0;
}

Vec Plant::advance(double u) {
  for (int i = 0; i < substeps_per_sample_; ++i) substep(u);
  return output();
}

Vec Plant::output() const {
  if (variant_ == ColumnVariant::Single) {
    Vec out(1);
    out[0] = state_[1] - state_[2];
    return out;
  }
  Vec out(2);
  out[0] = state_[1] - state_[2];
  out[1] = state_[7] - state_[8];
  return out;
}

namespace {

SimTrace trace_from_plant(Plant& plant, const SimConfig& config, const SampledSignal& input) {
  plant.run_burn_in(config.burn_in);
  const auto n =
      static_cast<Eigen::Index>(std::llround((config.duration - config.burn_in) * config.sample_rate));
  require(n >= 1, "duration leaves no samples after burn-in");

  SimTrace trace;
  trace.rate = config.sample_rate;
  trace.t.resize(n);
  trace.channels.resize(n, plant.channel_count());
  if (!input.empty()) trace.input.resize(n);

  trace.t[0] = 0.0;
  trace.channels.row(0) = plant.output();
  if (!input.empty()) trace.input[0] = input.at(0.0);
  for (Eigen::Index i = 1; i < n; ++i) {
    const double t_prev = (i - 1) / config.sample_rate;
    trace.channels.row(i) = plant.advance(input.at(t_prev));
    trace.t[i] = i / config.sample_rate;
    if (!input.empty()) trace.input[i] = input.at(trace.t[i]);
  }
  return trace;
}

}  // namespace

SimTrace generate_trace(const JansenRitParams& params, const SimConfig& config,
                        const SampledSignal& input) {
  Plant plant(params, config);
  return trace_from_plant(plant, config, input);
}

SimTrace generate_trace(const DoubleColumnParams& params, const SimConfig& config,
                        const SampledSignal& input) {
  Plant plant(params, config);
  return trace_from_plant(plant, config, input);
}

}  // namespace kmpc::nmm
