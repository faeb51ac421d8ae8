#pragma once

#include <filesystem>

#include "kmpc/types.hpp"

namespace kmpc {

/// Uniformly sampled multichannel time series, the data currency between the
/// simulator, the models and the controller. Channels are EEG-like potentials
/// in mV; the optional input column is the control signal u aligned with the
/// samples (the value held over [t_i, t_{i+1})).
struct SimTrace {
  double rate = 50.0;  // Hz
  Vec t;               // seconds, t(i) = t(0) + i/rate
  Mat channels;        // n_samples x n_channels
  Vec input;           // empty or n_samples

  Eigen::Index samples() const { return channels.rows(); }
  Eigen::Index channel_count() const { return channels.cols(); }
  bool has_input() const { return input.size() > 0; }

  /// Contiguous slice of `len` samples starting at `begin`.
  SimTrace segment(Eigen::Index begin, Eigen::Index len) const;

  /// Throws ValidationError unless lengths agree and the time grid is
  /// uniform with spacing 1/rate.
  void validate() const;
};

/// Zero-order-hold view of a sampled signal; empty means identically zero.
struct SampledSignal {
  double rate = 50.0;
  Vec values;

  bool empty() const { return values.size() == 0; }
  double at(double t) const;
};

/// Writes `t,ch0[,ch1],u` CSV at full round-trip precision plus a
/// `<path>.meta.json` sidecar carrying the sampling rate and shape.
void write_trace_csv(const SimTrace& trace, const std::filesystem::path& path);

/// Reads a CSV written by write_trace_csv, using the sidecar for the rate.
SimTrace read_trace_csv(const std::filesystem::path& path);

}  // namespace kmpc
