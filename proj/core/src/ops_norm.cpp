#include <cmath>
#include <stdexcept>

#include "tslab/ops.hpp"

namespace tslab {

namespace {
int node_of(const Tensor& t) { return t.on_tape() ? t.node() : -1; }
}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double eps, double momentum) {
  if (x.rank() < 2)
    throw std::invalid_argument("batch_norm: need a channel axis (axis 1)");
  const std::int64_t n = x.shape()[0];
  const std::int64_t c = x.shape()[1];
  std::int64_t spatial = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) spatial *= x.shape()[i];
  auto check_vec = [&](const Tensor& v, const char* what) {
    if (v.rank() != 1 || v.shape()[0] != c)
      throw std::invalid_argument(std::string("batch_norm: ") + what +
                                  " must be [" + std::to_string(c) +
                                  "], have " + shape_str(v.shape()));
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");
  check_vec(running_mean, "running_mean");
  check_vec(running_var, "running_var");

  const std::int64_t m = n * spatial;  // elements per channel
  Tensor mean(Shape{c}), inv_std(Shape{c});
  const double* px = x.data();

  if (mode == Mode::train) {
    double* pm = mean.mutable_data();
    double* pv = inv_std.mutable_data();  // variance first, inverted below
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* row = px + (i * c + ch) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) acc += row[s];
      }
      pm[ch] = acc / static_cast<double>(m);
      double acc2 = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* row = px + (i * c + ch) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) {
          const double d = row[s] - pm[ch];
          acc2 += d * d;
        }
      }
      pv[ch] = acc2 / static_cast<double>(m);
    }
    // update running stats (unbiased variance, PyTorch convention)
    double* rm = running_mean.mutable_data();
    double* rv = running_var.mutable_data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * pm[ch];
      const double unbiased =
          m > 1 ? pv[ch] * static_cast<double>(m) / static_cast<double>(m - 1)
                : pv[ch];
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
    }
    for (std::int64_t ch = 0; ch < c; ++ch)
      inv_std.mutable_data()[ch] = 1.0 / std::sqrt(pv[ch] + eps);
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean.mutable_data()[ch] = running_mean.data()[ch];
      inv_std.mutable_data()[ch] =
          1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  {
    double* ph = xhat.mutable_data();
    double* po = out.mutable_data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    const double* pm = mean.data();
    const double* ps = inv_std.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double mu = pm[ch], is = ps[ch], g = pg[ch], b = pb[ch];
        const double* row = px + (i * c + ch) * spatial;
        double* hrow = ph + (i * c + ch) * spatial;
        double* orow = po + (i * c + ch) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) {
          hrow[s] = (row[s] - mu) * is;
          orow[s] = g * hrow[s] + b;
        }
      }
  }

  Tape* tape = common_tape({&x, &gamma, &beta});
  if (!tape) return out;
  const int nx = node_of(x), ng = node_of(gamma), nb = node_of(beta);
  const Tensor sg = gamma.detached();
  const bool through_stats = (mode == Mode::train);
  std::vector<int> rec;
  for (int nd : {nx, ng, nb})
    if (nd >= 0) rec.push_back(nd);
  const int id = tape->record(
      "batch_norm", rec,
      [nx, ng, nb, xhat, inv_std, sg, n, c, spatial, m,
       through_stats](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        const double* ph = xhat.data();
        if (ng >= 0) {
          Tensor g(Shape{c});
          double* pg = g.mutable_data();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double* urow = pu + (i * c + ch) * spatial;
              const double* hrow = ph + (i * c + ch) * spatial;
              double acc = 0.0;
              for (std::int64_t s = 0; s < spatial; ++s)
                acc += urow[s] * hrow[s];
              pg[ch] += acc;
            }
          tp.accumulate(ng, std::move(g));
        }
        if (nb >= 0) {
          Tensor g(Shape{c});
          double* pg = g.mutable_data();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double* urow = pu + (i * c + ch) * spatial;
              double acc = 0.0;
              for (std::int64_t s = 0; s < spatial; ++s) acc += urow[s];
              pg[ch] += acc;
            }
          tp.accumulate(nb, std::move(g));
        }
        if (nx >= 0) {
          Tensor g(up.shape());
          double* pg = g.mutable_data();
          const double* pga = sg.data();
          const double* pis = inv_std.data();
          if (through_stats) {
            // per channel: dx = inv_std/m * (m*dxh - sum(dxh) - xh*sum(dxh*xh))
            std::vector<double> sum_dxh(static_cast<std::size_t>(c), 0.0);
            std::vector<double> sum_dxh_xh(static_cast<std::size_t>(c), 0.0);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t ch = 0; ch < c; ++ch) {
                const double* urow = pu + (i * c + ch) * spatial;
                const double* hrow = ph + (i * c + ch) * spatial;
                double a = 0.0, b2 = 0.0;
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const double dxh = urow[s] * pga[ch];
                  a += dxh;
                  b2 += dxh * hrow[s];
                }
                sum_dxh[static_cast<std::size_t>(ch)] += a;
                sum_dxh_xh[static_cast<std::size_t>(ch)] += b2;
              }
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t ch = 0; ch < c; ++ch) {
                const double* urow = pu + (i * c + ch) * spatial;
                const double* hrow = ph + (i * c + ch) * spatial;
                double* grow = pg + (i * c + ch) * spatial;
                const double s1 = sum_dxh[static_cast<std::size_t>(ch)];
                const double s2 = sum_dxh_xh[static_cast<std::size_t>(ch)];
                const double is = pis[ch];
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const double dxh = urow[s] * pga[ch];
                  grow[s] = is * (dxh - inv_m * (s1 + hrow[s] * s2));
                }
              }
          } else {
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t ch = 0; ch < c; ++ch) {
                const double* urow = pu + (i * c + ch) * spatial;
                double* grow = pg + (i * c + ch) * spatial;
                const double scale = pga[ch] * pis[ch];
                for (std::int64_t s = 0; s < spatial; ++s)
                  grow[s] = urow[s] * scale;
              }
          }
          tp.accumulate(nx, std::move(g));
        }
      });
  return tape->attach(out, id);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: empty shape");
  const std::int64_t d = x.shape().back();
  auto check_vec = [&](const Tensor& v, const char* what) {
    if (v.rank() != 1 || v.shape()[0] != d)
      throw std::invalid_argument(std::string("layer_norm: ") + what +
                                  " must be [" + std::to_string(d) +
                                  "], have " + shape_str(v.shape()));
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");

  const std::int64_t rows = x.size() / d;
  Tensor xhat(x.shape());
  Tensor inv_std(Shape{rows});
  Tensor out(x.shape());
  {
    const double* px = x.data();
    double* ph = xhat.mutable_data();
    double* po = out.mutable_data();
    double* pis = inv_std.mutable_data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* row = px + r * d;
      double mu = 0.0;
      for (std::int64_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double dv = row[j] - mu;
        var += dv * dv;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      pis[r] = is;
      for (std::int64_t j = 0; j < d; ++j) {
        ph[r * d + j] = (row[j] - mu) * is;
        po[r * d + j] = pg[j] * ph[r * d + j] + pb[j];
      }
    }
  }

  Tape* tape = common_tape({&x, &gamma, &beta});
  if (!tape) return out;
  const int nx = node_of(x), ng = node_of(gamma), nb = node_of(beta);
  const Tensor sg = gamma.detached();
  std::vector<int> rec;
  for (int nd : {nx, ng, nb})
    if (nd >= 0) rec.push_back(nd);
  const int id = tape->record(
      "layer_norm", rec,
      [nx, ng, nb, xhat, inv_std, sg, rows, d](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        const double* ph = xhat.data();
        if (ng >= 0) {
          Tensor g(Shape{d});
          double* pg = g.mutable_data();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < d; ++j)
              pg[j] += pu[r * d + j] * ph[r * d + j];
          tp.accumulate(ng, std::move(g));
        }
        if (nb >= 0) {
          Tensor g(Shape{d});
          double* pg = g.mutable_data();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < d; ++j) pg[j] += pu[r * d + j];
          tp.accumulate(nb, std::move(g));
        }
        if (nx >= 0) {
          Tensor g(up.shape());
          double* pg = g.mutable_data();
          const double* pga = sg.data();
          const double* pis = inv_std.data();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::int64_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
              const double dxh = pu[r * d + j] * pga[j];
              s1 += dxh;
              s2 += dxh * ph[r * d + j];
            }
            const double is = pis[r];
            for (std::int64_t j = 0; j < d; ++j) {
              const double dxh = pu[r * d + j] * pga[j];
              pg[r * d + j] = is * (dxh - inv_d * (s1 + ph[r * d + j] * s2));
            }
          }
          tp.accumulate(nx, std::move(g));
        }
      });
  return tape->attach(out, id);
}

}  // namespace tslab
