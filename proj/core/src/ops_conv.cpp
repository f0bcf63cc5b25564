#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

#include "blas.hpp"
#include "tslab/ops.hpp"

namespace tslab {

namespace {

int node_of(const Tensor& t) { return t.on_tape() ? t.node() : -1; }

// ---- conv2d lowering -------------------------------------------------
// col is [C*k*k, OH*OW] for one sample.

void im2col_2d(const double* x, std::int64_t c_in, std::int64_t h,
               std::int64_t w, std::int64_t k, std::int64_t pad,
               std::int64_t oh, std::int64_t ow, double* col) {
  for (std::int64_t c = 0; c < c_in; ++c) {
    const double* xc = x + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        double* row = col + ((c * k + ki) * k + kj) * (oh * ow);
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy - pad + ki;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const std::int64_t x0 = std::max<std::int64_t>(0, pad - kj);
          const std::int64_t x1 = std::min<std::int64_t>(ow, w + pad - kj);
          std::fill(dst, dst + std::min(x0, ow), 0.0);
          if (x1 > x0)
            std::memcpy(dst + x0, xc + iy * w + (x0 - pad + kj),
                        static_cast<std::size_t>(x1 - x0) * sizeof(double));
          if (x1 < ow) std::fill(dst + std::max<std::int64_t>(x1, 0), dst + ow, 0.0);
        }
      }
    }
  }
}

void col2im_2d(const double* col, std::int64_t c_in, std::int64_t h,
               std::int64_t w, std::int64_t k, std::int64_t pad,
               std::int64_t oh, std::int64_t ow, double* x) {
  for (std::int64_t c = 0; c < c_in; ++c) {
    double* xc = x + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const double* row = col + ((c * k + ki) * k + kj) * (oh * ow);
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const std::int64_t x0 = std::max<std::int64_t>(0, pad - kj);
          const std::int64_t x1 = std::min<std::int64_t>(ow, w + pad - kj);
          const double* src = row + oy * ow;
          double* dst = xc + iy * w - pad + kj;
          for (std::int64_t ox = x0; ox < x1; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

// ---- conv3d lowering -------------------------------------------------
// col is [C*k^3, OT*OH*OW] for one sample.

void im2col_3d(const double* x, std::int64_t c_in, std::int64_t t,
               std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t pad, std::int64_t ot, std::int64_t oh,
               std::int64_t ow, double* col) {
  const std::int64_t cols = ot * oh * ow;
  for (std::int64_t c = 0; c < c_in; ++c) {
    const double* xc = x + c * t * h * w;
    for (std::int64_t kt = 0; kt < k; ++kt)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          double* row = col + (((c * k + kt) * k + ki) * k + kj) * cols;
          for (std::int64_t oz = 0; oz < ot; ++oz) {
            const std::int64_t iz = oz - pad + kt;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy - pad + ki;
              double* dst = row + (oz * oh + oy) * ow;
              if (iz < 0 || iz >= t || iy < 0 || iy >= h) {
                std::fill(dst, dst + ow, 0.0);
                continue;
              }
              const std::int64_t x0 = std::max<std::int64_t>(0, pad - kj);
              const std::int64_t x1 = std::min<std::int64_t>(ow, w + pad - kj);
              std::fill(dst, dst + std::min(x0, ow), 0.0);
              if (x1 > x0)
                std::memcpy(dst + x0, xc + (iz * h + iy) * w + (x0 - pad + kj),
                            static_cast<std::size_t>(x1 - x0) * sizeof(double));
              if (x1 < ow)
                std::fill(dst + std::max<std::int64_t>(x1, 0), dst + ow, 0.0);
            }
          }
        }
  }
}

void col2im_3d(const double* col, std::int64_t c_in, std::int64_t t,
               std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t pad, std::int64_t ot, std::int64_t oh,
               std::int64_t ow, double* x) {
  const std::int64_t cols = ot * oh * ow;
  for (std::int64_t c = 0; c < c_in; ++c) {
    double* xc = x + c * t * h * w;
    for (std::int64_t kt = 0; kt < k; ++kt)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const double* row = col + (((c * k + kt) * k + ki) * k + kj) * cols;
          for (std::int64_t oz = 0; oz < ot; ++oz) {
            const std::int64_t iz = oz - pad + kt;
            if (iz < 0 || iz >= t) continue;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy - pad + ki;
              if (iy < 0 || iy >= h) continue;
              const std::int64_t x0 = std::max<std::int64_t>(0, pad - kj);
              const std::int64_t x1 = std::min<std::int64_t>(ow, w + pad - kj);
              const double* src = row + (oz * oh + oy) * ow;
              double* dst = xc + (iz * h + iy) * w - pad + kj;
              for (std::int64_t ox = x0; ox < x1; ++ox) dst[ox] += src[ox];
            }
          }
        }
  }
}

void check_conv_args(const char* op, const Tensor& x, const Tensor& w,
                     const Tensor& b, int padding, std::size_t x_rank,
                     std::size_t w_rank) {
  if (x.rank() != x_rank)
    throw std::invalid_argument(std::string(op) + ": input must have " +
                                std::to_string(x_rank) + " axes, have " +
                                shape_str(x.shape()));
  if (w.rank() != w_rank)
    throw std::invalid_argument(std::string(op) + ": weight must have " +
                                std::to_string(w_rank) + " axes, have " +
                                shape_str(w.shape()));
  if (x.shape()[1] != w.shape()[1])
    throw std::invalid_argument(
        std::string(op) + ": input channel axis 1 (" +
        std::to_string(x.shape()[1]) + ") != weight channel axis 1 (" +
        std::to_string(w.shape()[1]) + ")");
  const std::int64_t k = w.shape()[2];
  for (std::size_t i = 3; i < w_rank; ++i)
    if (w.shape()[i] != k)
      throw std::invalid_argument(std::string(op) +
                                  ": kernel must be cubic, axis " +
                                  std::to_string(i) + " differs");
  if (k % 2 == 0)
    throw std::invalid_argument(std::string(op) + ": kernel size " +
                                std::to_string(k) + " must be odd");
  if (b.rank() != 1 || b.shape()[0] != w.shape()[0])
    throw std::invalid_argument(std::string(op) + ": bias must be [" +
                                std::to_string(w.shape()[0]) + "]");
  if (padding < 0)
    throw std::invalid_argument(std::string(op) + ": negative padding");
  for (std::size_t i = 2; i < x_rank; ++i) {
    const std::int64_t out = x.shape()[i] + 2 * padding - k + 1;
    if (out < 1)
      throw std::invalid_argument(std::string(op) + ": spatial axis " +
                                  std::to_string(i) + " collapses to " +
                                  std::to_string(out));
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding) {
  check_conv_args("conv2d", x, weight, bias, padding, 4, 4);
  const std::int64_t n = x.shape()[0], c = x.shape()[1];
  const std::int64_t h = x.shape()[2], w = x.shape()[3];
  const std::int64_t f = weight.shape()[0], k = weight.shape()[2];
  const std::int64_t oh = h + 2 * padding - k + 1;
  const std::int64_t ow = w + 2 * padding - k + 1;
  const std::int64_t kk = c * k * k;
  const std::int64_t cols = oh * ow;

  Tensor out(Shape{n, f, oh, ow});
  std::vector<double> col(static_cast<std::size_t>(kk * cols));
  for (std::int64_t i = 0; i < n; ++i) {
    im2col_2d(x.data() + i * c * h * w, c, h, w, k, padding, oh, ow,
              col.data());
    detail::gemm(false, false, f, cols, kk, 1.0, weight.data(), kk, col.data(),
                 cols, 0.0, out.mutable_data() + i * f * cols, cols);
  }
  {
    double* po = out.mutable_data();
    const double* pb = bias.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ff = 0; ff < f; ++ff) {
        const double bv = pb[ff];
        double* row = po + (i * f + ff) * cols;
        for (std::int64_t j = 0; j < cols; ++j) row[j] += bv;
      }
  }

  Tape* tape = common_tape({&x, &weight, &bias});
  if (!tape) return out;
  const int nx = node_of(x), nw = node_of(weight), nb = node_of(bias);
  const Tensor sx = x.detached(), sw = weight.detached();
  std::vector<int> rec;
  for (int nd : {nx, nw, nb})
    if (nd >= 0) rec.push_back(nd);
  const int pad = padding;
  const int id = tape->record(
      "conv2d", rec,
      [=](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        std::vector<double> col2(static_cast<std::size_t>(kk * cols));
        Tensor gw, gx;
        if (nw >= 0) gw = Tensor(sw.shape());
        if (nx >= 0) gx = Tensor(sx.shape());
        for (std::int64_t i = 0; i < n; ++i) {
          const double* du = pu + i * f * cols;
          if (nw >= 0) {
            im2col_2d(sx.data() + i * c * h * w, c, h, w, k, pad, oh, ow,
                      col2.data());
            detail::gemm(false, true, f, kk, cols, 1.0, du, cols, col2.data(),
                         cols, 1.0, gw.mutable_data(), kk);
          }
          if (nx >= 0) {
            detail::gemm(true, false, kk, cols, f, 1.0, sw.data(), kk, du,
                         cols, 0.0, col2.data(), cols);
            col2im_2d(col2.data(), c, h, w, k, pad, oh, ow,
                      gx.mutable_data() + i * c * h * w);
          }
        }
        if (nb >= 0) {
          Tensor gb(Shape{f});
          double* pg = gb.mutable_data();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ff = 0; ff < f; ++ff) {
              const double* row = pu + (i * f + ff) * cols;
              double acc = 0.0;
              for (std::int64_t j = 0; j < cols; ++j) acc += row[j];
              pg[ff] += acc;
            }
          tp.accumulate(nb, std::move(gb));
        }
        if (nw >= 0) tp.accumulate(nw, std::move(gw));
        if (nx >= 0) tp.accumulate(nx, std::move(gx));
      });
  return tape->attach(out, id);
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding) {
  check_conv_args("conv3d", x, weight, bias, padding, 5, 5);
  const std::int64_t n = x.shape()[0], c = x.shape()[1];
  const std::int64_t t = x.shape()[2], h = x.shape()[3], w = x.shape()[4];
  const std::int64_t f = weight.shape()[0], k = weight.shape()[2];
  const std::int64_t ot = t + 2 * padding - k + 1;
  const std::int64_t oh = h + 2 * padding - k + 1;
  const std::int64_t ow = w + 2 * padding - k + 1;
  const std::int64_t kk = c * k * k * k;
  const std::int64_t cols = ot * oh * ow;

  Tensor out(Shape{n, f, ot, oh, ow});
  std::vector<double> col(static_cast<std::size_t>(kk * cols));
  for (std::int64_t i = 0; i < n; ++i) {
    im2col_3d(x.data() + i * c * t * h * w, c, t, h, w, k, padding, ot, oh, ow,
              col.data());
    detail::gemm(false, false, f, cols, kk, 1.0, weight.data(), kk, col.data(),
                 cols, 0.0, out.mutable_data() + i * f * cols, cols);
  }
  {
    double* po = out.mutable_data();
    const double* pb = bias.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ff = 0; ff < f; ++ff) {
        const double bv = pb[ff];
        double* row = po + (i * f + ff) * cols;
        for (std::int64_t j = 0; j < cols; ++j) row[j] += bv;
      }
  }

  Tape* tape = common_tape({&x, &weight, &bias});
  if (!tape) return out;
  const int nx = node_of(x), nw = node_of(weight), nb = node_of(bias);
  const Tensor sx = x.detached(), sw = weight.detached();
  std::vector<int> rec;
  for (int nd : {nx, nw, nb})
    if (nd >= 0) rec.push_back(nd);
  const int pad = padding;
  const int id = tape->record(
      "conv3d", rec,
      [=](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        std::vector<double> col2(static_cast<std::size_t>(kk * cols));
        Tensor gw, gx;
        if (nw >= 0) gw = Tensor(sw.shape());
        if (nx >= 0) gx = Tensor(sx.shape());
        for (std::int64_t i = 0; i < n; ++i) {
          const double* du = pu + i * f * cols;
          if (nw >= 0) {
            im2col_3d(sx.data() + i * c * t * h * w, c, t, h, w, k, pad, ot,
                      oh, ow, col2.data());
            detail::gemm(false, true, f, kk, cols, 1.0, du, cols, col2.data(),
                         cols, 1.0, gw.mutable_data(), kk);
          }
          if (nx >= 0) {
            detail::gemm(true, false, kk, cols, f, 1.0, sw.data(), kk, du,
                         cols, 0.0, col2.data(), cols);
            col2im_3d(col2.data(), c, t, h, w, k, pad, ot, oh, ow,
                      gx.mutable_data() + i * c * t * h * w);
          }
        }
        if (nb >= 0) {
          Tensor gb(Shape{f});
          double* pg = gb.mutable_data();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ff = 0; ff < f; ++ff) {
              const double* row = pu + (i * f + ff) * cols;
              double acc = 0.0;
              for (std::int64_t j = 0; j < cols; ++j) acc += row[j];
              pg[ff] += acc;
            }
          tp.accumulate(nb, std::move(gb));
        }
        if (nw >= 0) tp.accumulate(nw, std::move(gw));
        if (nx >= 0) tp.accumulate(nx, std::move(gx));
      });
  return tape->attach(out, id);
}

Tensor maxpool(const Tensor& x, const std::vector<std::int64_t>& window) {
  const std::size_t r = x.rank();
  const std::size_t pooled = window.size();
  if (pooled == 0 || pooled > r)
    throw std::invalid_argument("maxpool: window rank " +
                                std::to_string(pooled) + " vs input rank " +
                                std::to_string(r));
  const std::size_t lead = r - pooled;
  Shape out_shape = x.shape();
  for (std::size_t i = 0; i < pooled; ++i) {
    if (window[i] < 1)
      throw std::invalid_argument("maxpool: window entry " +
                                  std::to_string(i) + " must be >= 1");
    if (window[i] > x.shape()[lead + i])
      throw std::invalid_argument(
          "maxpool: window " + std::to_string(window[i]) +
          " larger than axis " + std::to_string(lead + i) + " extent " +
          std::to_string(x.shape()[lead + i]));
    out_shape[lead + i] = x.shape()[lead + i] / window[i];
  }

  const Shape in_strides = strides_of(x.shape());
  // relative flat offsets of the cells inside one window
  std::vector<std::int64_t> offsets;
  {
    std::vector<std::int64_t> idx(pooled, 0);
    while (true) {
      std::int64_t off = 0;
      for (std::size_t i = 0; i < pooled; ++i)
        off += idx[i] * in_strides[lead + i];
      offsets.push_back(off);
      std::size_t ax = pooled;
      while (ax > 0) {
        --ax;
        if (++idx[ax] < window[ax]) break;
        idx[ax] = 0;
        if (ax == 0) goto done;
      }
      if (pooled == 0) break;
    }
  done:;
  }

  Tensor out(out_shape);
  const std::int64_t out_n = out.size();
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out_n));
  {
    const double* px = x.data();
    double* po = out.mutable_data();
    std::vector<std::int64_t> oidx(r, 0);
    for (std::int64_t o = 0; o < out_n; ++o) {
      std::int64_t base = 0;
      for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t in_i =
            (i < lead) ? oidx[i] : oidx[i] * window[i - lead];
        base += in_i * in_strides[i];
      }
      double best = px[base + offsets[0]];
      std::int64_t best_at = base + offsets[0];
      for (std::size_t j = 1; j < offsets.size(); ++j) {
        const double v = px[base + offsets[j]];
        if (v > best) {  // ties keep the first occurrence
          best = v;
          best_at = base + offsets[j];
        }
      }
      po[o] = best;
      (*argmax)[static_cast<std::size_t>(o)] = best_at;
      for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
        if (++oidx[static_cast<std::size_t>(ax)] <
            out_shape[static_cast<std::size_t>(ax)])
          break;
        oidx[static_cast<std::size_t>(ax)] = 0;
      }
    }
  }

  Tape* tape = common_tape({&x});
  if (!tape) return out;
  const int nx = x.node();
  const Shape in_shape = x.shape();
  const int id = tape->record(
      "maxpool", {nx},
      [nx, in_shape, argmax](const Tensor& up, Tape& tp) {
        Tensor g(in_shape);
        double* pg = g.mutable_data();
        const double* pu = up.data();
        for (std::int64_t o = 0, n = up.size(); o < n; ++o)
          pg[(*argmax)[static_cast<std::size_t>(o)]] += pu[o];
        tp.accumulate(nx, std::move(g));
      });
  return tape->attach(out, id);
}

}  // namespace tslab
