#include "tslab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tslab {

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
              OptState& opt) {
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(grads.size()) +
                                " grads");
  if (opt.learning_rate <= 0.0)
    throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (opt.momentum < 0.0 || opt.momentum >= 1.0)
    throw std::invalid_argument("sgd_step: momentum must be in [0,1)");
  if (opt.velocity.empty()) {
    opt.velocity.reserve(params.size());
    for (const Tensor& p : params) opt.velocity.emplace_back(p.shape());
  }
  if (opt.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: velocity count mismatch");

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() ||
        params[i].shape() != opt.velocity[i].shape())
      throw std::invalid_argument("sgd_step: shape mismatch at param " +
                                  std::to_string(i));
    double* p = params[i].mutable_data();
    double* v = opt.velocity[i].mutable_data();
    const double* g = grads[i].data();
    const std::int64_t n = params[i].size();
    for (std::int64_t j = 0; j < n; ++j) {
      if (std::isnan(g[j]))
        throw std::runtime_error("sgd_step: NaN gradient in param " +
                                 std::to_string(i) + " entry " +
                                 std::to_string(j) + "; aborting run");
      v[j] = opt.momentum * v[j] + g[j];
      p[j] -= opt.learning_rate * v[j];
    }
  }
}

double grad_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                  const Tensor& x, double eps) {
  Tensor analytic;
  {
    Tape tape;
    Tensor xw = tape.watch(x);
    Tensor loss = f(xw, &tape);
    tape.backward(loss);
    analytic = tape.grad(xw);
  }

  Tensor probe = x.clone();
  double* px = probe.mutable_data();
  const double* pa = analytic.data();
  double worst = 0.0;
  for (std::int64_t i = 0, n = probe.size(); i < n; ++i) {
    const double orig = px[i];
    px[i] = orig + eps;
    const double hi = f(probe, nullptr).value();
    px[i] = orig - eps;
    const double lo = f(probe, nullptr).value();
    px[i] = orig;
    const double numeric = (hi - lo) / (2.0 * eps);
    const double denom =
        std::max({std::abs(pa[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(pa[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace tslab
