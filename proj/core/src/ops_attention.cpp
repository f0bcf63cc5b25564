#include <cmath>
#include <stdexcept>
#include <vector>

#include "blas.hpp"
#include "tslab/ops.hpp"

namespace tslab {

namespace {
int node_of(const Tensor& t) { return t.on_tape() ? t.node() : -1; }
}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2)
    throw std::invalid_argument("attention: q must be [..., n, d_h], have " +
                                shape_str(q.shape()));
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("attention: q/k/v shapes differ: " +
                                shape_str(q.shape()) + " " +
                                shape_str(k.shape()) + " " +
                                shape_str(v.shape()));
  const std::int64_t n = q.shape()[q.rank() - 2];
  const std::int64_t dh = q.shape()[q.rank() - 1];
  if (n < 1) throw std::invalid_argument("attention: empty token axis");
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < q.rank(); ++i) batch *= q.shape()[i];
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Shape weights_shape = q.shape();
  weights_shape[q.rank() - 1] = n;
  Tensor weights(weights_shape);  // softmax rows, saved for backward
  Tensor out(q.shape());
  {
    const double* pq = q.data();
    const double* pk = k.data();
    const double* pv = v.data();
    double* pw = weights.mutable_data();
    double* po = out.mutable_data();
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* qb = pq + b * n * dh;
      const double* kb = pk + b * n * dh;
      const double* vb = pv + b * n * dh;
      double* wb = pw + b * n * n;
      double* ob = po + b * n * dh;
      detail::gemm(false, true, n, n, dh, sc, qb, dh, kb, dh, 0.0, wb, n);
      for (std::int64_t i = 0; i < n; ++i) {
        double* row = wb + i * n;
        double mx = row[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          denom += row[j];
        }
        for (std::int64_t j = 0; j < n; ++j) row[j] /= denom;
      }
      detail::gemm(false, false, n, dh, n, 1.0, wb, n, vb, dh, 0.0, ob, dh);
    }
  }

  Tape* tape = common_tape({&q, &k, &v});
  if (!tape) return out;
  const int nq = node_of(q), nk = node_of(k), nv = node_of(v);
  const Tensor sq = q.detached(), sk = k.detached(), sv = v.detached();
  std::vector<int> rec;
  for (int nd : {nq, nk, nv})
    if (nd >= 0) rec.push_back(nd);
  const int id = tape->record(
      "attention", rec,
      [nq, nk, nv, sq, sk, sv, weights, batch, n, dh,
       sc](const Tensor& up, Tape& tp) {
        Tensor gq, gk, gv;
        if (nq >= 0) gq = Tensor(sq.shape());
        if (nk >= 0) gk = Tensor(sk.shape());
        if (nv >= 0) gv = Tensor(sv.shape());
        std::vector<double> dattn(static_cast<std::size_t>(n * n));
        const double* pu = up.data();
        const double* pw = weights.data();
        for (std::int64_t b = 0; b < batch; ++b) {
          const double* ub = pu + b * n * dh;
          const double* wb = pw + b * n * n;
          if (nv >= 0)
            detail::gemm(true, false, n, dh, n, 1.0, wb, n, ub, dh, 0.0,
                         gv.mutable_data() + b * n * dh, dh);
          if (nq >= 0 || nk >= 0) {
            // dattn = up * v^T, then softmax jacobian row by row
            detail::gemm(false, true, n, n, dh, 1.0, ub, dh,
                         sv.data() + b * n * dh, dh, 0.0, dattn.data(), n);
            for (std::int64_t i = 0; i < n; ++i) {
              const double* wrow = wb + i * n;
              double* drow = dattn.data() + i * n;
              double dot = 0.0;
              for (std::int64_t j = 0; j < n; ++j) dot += drow[j] * wrow[j];
              for (std::int64_t j = 0; j < n; ++j)
                drow[j] = wrow[j] * (drow[j] - dot);
            }
            if (nq >= 0)
              detail::gemm(false, false, n, dh, n, sc, dattn.data(), n,
                           sk.data() + b * n * dh, dh, 0.0,
                           gq.mutable_data() + b * n * dh, dh);
            if (nk >= 0)
              detail::gemm(true, false, n, dh, n, sc, dattn.data(), n,
                           sq.data() + b * n * dh, dh, 0.0,
                           gk.mutable_data() + b * n * dh, dh);
          }
        }
        if (nq >= 0) tp.accumulate(nq, std::move(gq));
        if (nk >= 0) tp.accumulate(nk, std::move(gk));
        if (nv >= 0) tp.accumulate(nv, std::move(gv));
      });
  return tape->attach(out, id);
}

Tensor rotary_apply(const Tensor& x, std::span<const std::int64_t> positions) {
  if (x.rank() < 2)
    throw std::invalid_argument("rotary_apply: x must be [..., n, d_h]");
  const std::int64_t n = x.shape()[x.rank() - 2];
  const std::int64_t dh = x.shape()[x.rank() - 1];
  if (dh % 2 != 0)
    throw std::invalid_argument("rotary_apply: head dim " +
                                std::to_string(dh) + " must be even");
  if (static_cast<std::int64_t>(positions.size()) != n)
    throw std::invalid_argument("rotary_apply: " +
                                std::to_string(positions.size()) +
                                " positions for token axis " +
                                std::to_string(n));
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < x.rank(); ++i) batch *= x.shape()[i];
  const std::int64_t half = dh / 2;

  // cos/sin table per (token, frequency); base 10000
  std::vector<double> cs(static_cast<std::size_t>(n * half));
  std::vector<double> sn(static_cast<std::size_t>(n * half));
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(positions[i]);
    for (std::int64_t j = 0; j < half; ++j) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                static_cast<double>(dh));
      cs[static_cast<std::size_t>(i * half + j)] = std::cos(p * freq);
      sn[static_cast<std::size_t>(i * half + j)] = std::sin(p * freq);
    }
  }

  Tensor out(x.shape());
  {
    const double* px = x.data();
    double* po = out.mutable_data();
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t i = 0; i < n; ++i) {
        const double* row = px + (b * n + i) * dh;
        double* orow = po + (b * n + i) * dh;
        for (std::int64_t j = 0; j < half; ++j) {
          const double c = cs[static_cast<std::size_t>(i * half + j)];
          const double s = sn[static_cast<std::size_t>(i * half + j)];
          orow[j] = row[j] * c - row[j + half] * s;
          orow[j + half] = row[j] * s + row[j + half] * c;
        }
      }
  }

  Tape* tape = common_tape({&x});
  if (!tape) return out;
  const int nx = x.node();
  auto cs_p = std::make_shared<std::vector<double>>(std::move(cs));
  auto sn_p = std::make_shared<std::vector<double>>(std::move(sn));
  const int id = tape->record(
      "rotary", {nx},
      [nx, cs_p, sn_p, batch, n, half, dh](const Tensor& up, Tape& tp) {
        // gradient rotates the other way
        Tensor g(up.shape());
        const double* pu = up.data();
        double* pg = g.mutable_data();
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t i = 0; i < n; ++i) {
            const double* row = pu + (b * n + i) * dh;
            double* grow = pg + (b * n + i) * dh;
            for (std::int64_t j = 0; j < half; ++j) {
              const double c = (*cs_p)[static_cast<std::size_t>(i * half + j)];
              const double s = (*sn_p)[static_cast<std::size_t>(i * half + j)];
              grow[j] = row[j] * c + row[j + half] * s;
              grow[j + half] = -row[j] * s + row[j + half] * c;
            }
          }
        tp.accumulate(nx, std::move(g));
      });
  return tape->attach(out, id);
}

}  // namespace tslab
