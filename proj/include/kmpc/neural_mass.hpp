#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include "kmpc/trace.hpp"
#include "kmpc/types.hpp"

namespace kmpc::nmm {

/// Physiological constants of one cortical column. Units: gains in mV,
/// reciprocal time constants in Hz, v0 in mV, r in 1/mV, e0 and p in Hz,
/// connectivities dimensionless.
struct JansenRitParams {
  double A = 7.8;
  double B_inh = 22.0;
  double a = 100.0;
  double b = 50.0;
  double v0 = 6.0;
  double r = 0.56;
  double e0 = 2.5;
  double C1 = 135.0;
  double C2 = 108.0;
  double C3 = 33.75;
  double C4 = 33.75;
  double p = 0.0;  // deterministic external pulse density

  void validate() const;
};

/// Two coupled columns. column1 carries the unprimed constants (and receives
/// the control input), column2 the primed ones. a_d is the reciprocal time
/// constant of the delayed inter-column transfer; K1 drives column 2 from
/// column 1, K2 the reverse.
struct DoubleColumnParams {
  JansenRitParams column1{};
  JansenRitParams column2{.A = 7.0};
  double K1 = 100.0;
  double K2 = 100.0;
  double a_d = 100.0 / 3.0;

  void validate() const;
};

/// Firing-rate sigmoid S(v) = 2 e0 / (1 + exp(r (v0 - v))).
/// Total on finite v; range (0, 2 e0), strictly increasing.
double sigmoid(double v, const JansenRitParams& params);

/// Six coupled ODEs of a single column. State ordering [y1..y6]; the control
/// input u adds to the y2 velocity. Throws on wrong state dimension.
Vec single_column_rhs(const Vec& state, double t, double u, const JansenRitParams& params);

/// Sixteen coupled ODEs of two columns, state ordering [y0..y15]:
///   y0,y3   column-1 pyramidal PSP and velocity
///   y1,y4   column-1 excitatory PSP (receives p, C2-feedback and K2*y13)
///   y2,y5   column-1 inhibitory PSP
///   y6..y11 the same three pairs for column 2 (primed constants, K1*y12)
///   y12,y14 delayed transfer of column-1 output S(y1-y2)
///   y13,y15 delayed transfer of column-2 output S(y7-y8)
/// The control input u adds to the y1 velocity (column 1, same injection
/// site as the single column). Column outputs are y1-y2 and y7-y8.
Vec double_column_rhs(const Vec& state, double t, double u, const DoubleColumnParams& params);

/// Signals a non-finite state during integration; time() is the first
/// offending instant.
class BlowUpError : public std::runtime_error {
 public:
  explicit BlowUpError(double time);
  double time() const { return time_; }

 private:
  double time_;
};

using RhsFn = std::function<Vec(const Vec&, double, double)>;

struct Trajectory {
  Vec times;
  Mat states;  // (steps + 1) x dim, row i at times[i]
};

/// Classical fixed-step RK4 with zero-order-hold input. Deterministic for
/// fixed arguments. Throws BlowUpError if the state leaves the finite range.
Trajectory integrate(const RhsFn& rhs, const Vec& initial, double duration, double step,
                     const SampledSignal& input = {});

enum class ColumnVariant { Single, Double };

struct SimConfig {
  double duration = 22.0;    // total integration time, burn-in included
  double burn_in = 2.0;      // discarded; trace timestamps restart at 0
  double sample_rate = 50.0; // Hz
  double step = 1e-3;        // internal RK4 step; 1/(step*sample_rate) must be integral
  bool noisy_drive = false;  // replace constant p with uniform draws per step
  double p_min = 120.0;
  double p_max = 320.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stateful plant for closed-loop use: advances one sample period per call
/// with the input held constant across the internal RK4 substeps. The same
/// stepper backs generate_trace, so open- and closed-loop runs that apply
/// identical inputs produce bit-identical trajectories.
class Plant {
 public:
  Plant(const JansenRitParams& params, const SimConfig& config);
  Plant(const DoubleColumnParams& params, const SimConfig& config);

  /// Advances `seconds` with u = 0 and discards the samples.
  void run_burn_in(double seconds);

  /// Advances one sample period (1/sample_rate) under input u; returns the
  /// output channel value(s) at the end of the period.
  Vec advance(double u);

  /// Output channel(s) at the current state (pyramidal PSP differences).
  Vec output() const;

  Eigen::Index channel_count() const { return variant_ == ColumnVariant::Single ? 1 : 2; }
  const Vec& state() const { return state_; }
  double time() const { return time_; }
  double sample_rate() const { return config_.sample_rate; }

 private:
  void substep(double u);

  ColumnVariant variant_;
  JansenRitParams single_{};
  DoubleColumnParams double_{};
  SimConfig config_;
  Vec state_;
  double time_ = 0.0;
  int substeps_per_sample_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> drive_;
};

/// Integrates from the zero state, discards the burn-in and downsamples to
/// config.sample_rate. The optional input signal is indexed from the
/// post-burn-in time axis (u = 0 during burn-in) and is copied into the
/// trace's input column.
SimTrace generate_trace(const JansenRitParams& params, const SimConfig& config,
                        const SampledSignal& input = {});
SimTrace generate_trace(const DoubleColumnParams& params, const SimConfig& config,
                        const SampledSignal& input = {});

}  // namespace kmpc::nmm
