#pragma once

#include <functional>
#include <vector>

#include "tslab/tape.hpp"
#include "tslab/tensor.hpp"

namespace tslab {

/// SGD with classic momentum: v <- momentum*v + g; p <- p - lr*v.
struct OptState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // lazily sized to match params

  OptState() = default;
  OptState(double lr, double mom) : learning_rate(lr), momentum(mom) {}
};

/// In-place update; throws on NaN gradients (aborting the run is the
/// caller's contract).
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              OptState& opt);

/// Central-difference check of the tape gradient of a scalar function.
/// `f(x, tape)` must be deterministic and, when tape != nullptr, build its
/// result through the tape. Returns the max relative error over all
/// entries, denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                  const Tensor& x, double eps = 1e-5);

}  // namespace tslab
