#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/layers.hpp"
#include "tbnet/network.hpp"

namespace tbnet {

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Entries checked per parameter tensor; smaller tensors are checked fully.
  std::size_t samples_per_parameter = 24;
  /// Denominator floor: relative error = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  /// Entries whose +/- epsilon evaluations flipped a ReLU gate or pooling winner.
  std::size_t skipped_kinks = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of the mean cross-entropy against the analytic
/// gradients of the network, in training mode.
inline GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input, std::span<const int> labels,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.epsilon > 0.0)) throw PreconditionError("grad_check: epsilon must be > 0");
  auto loss_at = [&]() { return softmax_cross_entropy(net.forward(input, Mode::Train), labels); };

  net.zero_grad();
  Tensor<double> dlogits;
  softmax_cross_entropy(net.forward(input, Mode::Train), labels, &dlogits);
  const std::uint64_t pattern = net.activation_pattern();
  net.backward(dlogits);

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (auto* p : net.parameters()) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opt.samples_per_parameter) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.samples_per_parameter);
    }
    for (std::size_t i : idx) {
      const double original = p->value[i];
      p->value[i] = original + opt.epsilon;
      const double up = loss_at();
      const bool kink_up = net.activation_pattern() != pattern;
      p->value[i] = original - opt.epsilon;
      const double down = loss_at();
      const bool kink_down = net.activation_pattern() != pattern;
      p->value[i] = original;
      if (kink_up || kink_down) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric, opt.floor);
      ++report.checked;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = p->name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace tbnet
