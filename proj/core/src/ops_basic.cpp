#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "blas.hpp"
#include "tslab/ops.hpp"

namespace tslab {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

int node_of(const Tensor& t) { return t.on_tape() ? t.node() : -1; }

std::vector<int> attached(std::initializer_list<const Tensor*> ts) {
  std::vector<int> ids;
  for (auto* t : ts)
    if (t->on_tape()) ids.push_back(t->node());
  return ids;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = pa[i] + pb[i];

  Tape* tape = common_tape({&a, &b});
  if (!tape) return out;
  const int na = node_of(a), nb = node_of(b);
  const int id = tape->record("add", attached({&a, &b}),
                              [na, nb](const Tensor& up, Tape& tp) {
                                if (na >= 0) tp.accumulate(na, up);
                                if (nb >= 0) tp.accumulate(nb, up);
                              });
  return tape->attach(out, id);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = pa[i] - pb[i];

  Tape* tape = common_tape({&a, &b});
  if (!tape) return out;
  const int na = node_of(a), nb = node_of(b);
  const int id = tape->record(
      "sub", attached({&a, &b}), [na, nb](const Tensor& up, Tape& tp) {
        if (na >= 0) tp.accumulate(na, up);
        if (nb >= 0) {
          Tensor neg(up.shape());
          double* pn = neg.mutable_data();
          const double* pu = up.data();
          for (std::int64_t i = 0, n = up.size(); i < n; ++i) pn[i] = -pu[i];
          tp.accumulate(nb, std::move(neg));
        }
      });
  return tape->attach(out, id);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mutable_data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = pa[i] * pb[i];

  Tape* tape = common_tape({&a, &b});
  if (!tape) return out;
  const int na = node_of(a), nb = node_of(b);
  const Tensor sa = a.detached(), sb = b.detached();
  const int id = tape->record(
      "mul", attached({&a, &b}), [na, nb, sa, sb](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        const std::int64_t n = up.size();
        if (na >= 0) {
          Tensor g(up.shape());
          double* pg = g.mutable_data();
          const double* pb2 = sb.data();
          for (std::int64_t i = 0; i < n; ++i) pg[i] = pu[i] * pb2[i];
          tp.accumulate(na, std::move(g));
        }
        if (nb >= 0) {
          Tensor g(up.shape());
          double* pg = g.mutable_data();
          const double* pa2 = sa.data();
          for (std::int64_t i = 0; i < n; ++i) pg[i] = pu[i] * pa2[i];
          tp.accumulate(nb, std::move(g));
        }
      });
  return tape->attach(out, id);
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.mutable_data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) po[i] = pa[i] * s;

  Tape* tape = common_tape({&a});
  if (!tape) return out;
  const int na = a.node();
  const int id =
      tape->record("scale", {na}, [na, s](const Tensor& up, Tape& tp) {
        Tensor g(up.shape());
        double* pg = g.mutable_data();
        const double* pu = up.data();
        for (std::int64_t i = 0, n = up.size(); i < n; ++i) pg[i] = pu[i] * s;
        tp.accumulate(na, std::move(g));
      });
  return tape->attach(out, id);
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc);

  Tape* tape = common_tape({&a});
  if (!tape) return out;
  const int na = a.node();
  const Shape in_shape = a.shape();
  const int id =
      tape->record("sum", {na}, [na, in_shape](const Tensor& up, Tape& tp) {
        tp.accumulate(na, Tensor::full(in_shape, up.value()));
      });
  return tape->attach(out, id);
}

Tensor reshape(const Tensor& t, Shape shape) {
  Tensor out = t.with_shape(std::move(shape));

  Tape* tape = common_tape({&t});
  if (!tape) return out;
  const int nt = t.node();
  const Shape in_shape = t.shape();
  const int id =
      tape->record("reshape", {nt}, [nt, in_shape](const Tensor& up, Tape& tp) {
        tp.accumulate(nt, up.with_shape(in_shape));
      });
  return tape->attach(out, id);
}

Tensor permute(const Tensor& t, const std::vector<int>& axes) {
  const std::size_t r = t.rank();
  if (axes.size() != r) throw std::invalid_argument("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    const int a = axes[i];
    if (a < 0 || a >= static_cast<int>(r) || seen[static_cast<std::size_t>(a)])
      throw std::invalid_argument("permute: invalid axis list");
    seen[static_cast<std::size_t>(a)] = true;
    out_shape[i] = t.shape()[static_cast<std::size_t>(a)];
  }

  const Shape in_strides = strides_of(t.shape());
  const Shape out_strides = strides_of(out_shape);
  Tensor out(out_shape);
  double* po = out.mutable_data();
  const double* pt = t.data();
  const std::int64_t n = t.size();
  // walk output linearly, gather from input
  std::vector<std::int64_t> gather(r);
  for (std::size_t i = 0; i < r; ++i)
    gather[i] = in_strides[static_cast<std::size_t>(axes[i])];
  std::vector<std::int64_t> idx(r, 0);
  for (std::int64_t o = 0; o < n; ++o) {
    std::int64_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * gather[i];
    po[o] = pt[src];
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      if (++idx[static_cast<std::size_t>(ax)] <
          out_shape[static_cast<std::size_t>(ax)])
        break;
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }

  Tape* tape = common_tape({&t});
  if (!tape) return out;
  // inverse permutation routes the gradient back
  std::vector<int> inv(r);
  for (std::size_t i = 0; i < r; ++i)
    inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
  const int nt = t.node();
  const int id =
      tape->record("permute", {nt}, [nt, inv](const Tensor& up, Tape& tp) {
        tp.accumulate(nt, permute(up, inv));
      });
  return tape->attach(out, id);
}

Tensor slice(const Tensor& t, int axis, std::int64_t start, std::int64_t len) {
  const std::size_t r = t.rank();
  if (axis < 0 || axis >= static_cast<int>(r))
    throw std::invalid_argument("slice: bad axis");
  const std::int64_t extent = t.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || len < 1 || start + len > extent)
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") out of bounds for extent " +
                                std::to_string(extent));

  Shape out_shape = t.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.shape()[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < r; ++i)
    inner *= t.shape()[i];

  Tensor out(out_shape);
  double* po = out.mutable_data();
  const double* pt = t.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * len * inner,
                pt + (o * extent + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(double));

  Tape* tape = common_tape({&t});
  if (!tape) return out;
  const int nt = t.node();
  const Shape in_shape = t.shape();
  const int id = tape->record(
      "slice", {nt},
      [nt, in_shape, axis, start, len, outer, inner,
       extent](const Tensor& up, Tape& tp) {
        Tensor g(in_shape);  // zeros
        double* pg = g.mutable_data();
        const double* pu = up.data();
        for (std::int64_t o = 0; o < outer; ++o)
          std::memcpy(pg + (o * extent + start) * inner,
                      pu + o * len * inner,
                      static_cast<std::size_t>(len * inner) * sizeof(double));
        tp.accumulate(nt, std::move(g));
      });
  return tape->attach(out, id);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t r = parts[0].rank();
  if (axis < 0 || axis >= static_cast<int>(r))
    throw std::invalid_argument("concat: bad axis");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < r; ++i)
      if (i != static_cast<std::size_t>(axis) &&
          p.shape()[i] != out_shape[i])
        throw std::invalid_argument("concat: shape mismatch on axis " +
                                    std::to_string(i));
    total += p.shape()[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < r; ++i)
    inner *= out_shape[i];

  Tensor out(out_shape);
  double* po = out.mutable_data();
  std::int64_t offset = 0;
  for (const Tensor& p : parts) {
    const std::int64_t ext = p.shape()[static_cast<std::size_t>(axis)];
    const double* pp = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(po + (o * total + offset) * inner, pp + o * ext * inner,
                  static_cast<std::size_t>(ext * inner) * sizeof(double));
    offset += ext;
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (auto* p : ptrs) {
    if (!p->on_tape()) continue;
    if (tape && tape != p->tape())
      throw std::logic_error("concat inputs belong to different tapes");
    tape = p->tape();
  }
  if (!tape) return out;

  std::vector<int> in_nodes;
  std::vector<std::int64_t> extents;
  std::vector<int> rec_inputs;
  for (const Tensor& p : parts) {
    in_nodes.push_back(node_of(p));
    extents.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    if (p.on_tape()) rec_inputs.push_back(p.node());
  }
  const int id = tape->record(
      "concat", rec_inputs,
      [in_nodes, extents, axis, outer, inner, total](const Tensor& up,
                                                     Tape& tp) {
        const double* pu = up.data();
        std::int64_t off = 0;
        for (std::size_t k = 0; k < in_nodes.size(); ++k) {
          const std::int64_t ext = extents[k];
          if (in_nodes[k] >= 0) {
            Shape gs = up.shape();
            gs[static_cast<std::size_t>(axis)] = ext;
            Tensor g(gs);
            double* pg = g.mutable_data();
            for (std::int64_t o = 0; o < outer; ++o)
              std::memcpy(pg + o * ext * inner,
                          pu + (o * total + off) * inner,
                          static_cast<std::size_t>(ext * inner) *
                              sizeof(double));
            tp.accumulate(in_nodes[k], std::move(g));
          }
          off += ext;
        }
      });
  return tape->attach(out, id);
}

Tensor repeat_rows(const Tensor& t, std::int64_t n) {
  if (t.shape().empty() || t.shape()[0] != 1)
    throw std::invalid_argument("repeat_rows: leading axis must be 1, have " +
                                shape_str(t.shape()));
  if (n < 1) throw std::invalid_argument("repeat_rows: n must be >= 1");
  Shape out_shape = t.shape();
  out_shape[0] = n;
  Tensor out(out_shape);
  const std::int64_t block = t.size();
  double* po = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(po + i * block, t.data(),
                static_cast<std::size_t>(block) * sizeof(double));

  Tape* tape = common_tape({&t});
  if (!tape) return out;
  const int nt = t.node();
  const Shape in_shape = t.shape();
  const int id = tape->record(
      "repeat_rows", {nt},
      [nt, in_shape, n, block](const Tensor& up, Tape& tp) {
        Tensor g(in_shape);
        double* pg = g.mutable_data();
        const double* pu = up.data();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < block; ++j) pg[j] += pu[i * block + j];
        tp.accumulate(nt, std::move(g));
      });
  return tape->attach(out, id);
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double act_forward(double x, Act kind) {
  switch (kind) {
    case Act::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Act::tanh:
      return std::tanh(x);
    case Act::relu:
      return x > 0.0 ? x : 0.0;
    case Act::gelu: {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
  }
  return 0.0;
}

// derivative expressed via input x and saved output y
inline double act_backward(double x, double y, Act kind) {
  switch (kind) {
    case Act::sigmoid:
      return y * (1.0 - y);
    case Act::tanh:
      return 1.0 - y * y;
    case Act::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Act::gelu: {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 0.0;
}

}  // namespace

Tensor activation(const Tensor& x, Act kind) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.mutable_data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = act_forward(px[i], kind);

  Tape* tape = common_tape({&x});
  if (!tape) return out;
  const int nx = x.node();
  // sigmoid/tanh derivatives only need the output; relu/gelu only the input.
  // Saving just the needed one matters for long recurrent chains.
  const bool save_output = (kind == Act::sigmoid || kind == Act::tanh);
  const Tensor saved = save_output ? out : x.detached();
  const int id = tape->record(
      "activation", {nx}, [nx, saved, kind](const Tensor& up, Tape& tp) {
        Tensor g(up.shape());
        double* pg = g.mutable_data();
        const double* pu = up.data();
        const double* ps = saved.data();
        for (std::int64_t i = 0, n2 = up.size(); i < n2; ++i)
          pg[i] = pu[i] * act_backward(ps[i], ps[i], kind);
        tp.accumulate(nx, std::move(g));
      });
  return tape->attach(out, id);
}

Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias) {
  if (weight.rank() != 2)
    throw std::invalid_argument("linear: weight must be [out,in], have " +
                                shape_str(weight.shape()));
  if (x.rank() < 1)
    throw std::invalid_argument("linear: input must have at least one axis");
  const std::int64_t in = weight.shape()[1];
  const std::int64_t out_dim = weight.shape()[0];
  if (x.shape().back() != in)
    throw std::invalid_argument(
        "linear: last input axis " + std::to_string(x.shape().back()) +
        " != weight in-dim " + std::to_string(in));
  if (bias && (bias->rank() != 1 || bias->shape()[0] != out_dim))
    throw std::invalid_argument("linear: bias must be [out]");

  const std::int64_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  // out[rows,out] = x[rows,in] * W^T
  detail::gemm(false, true, rows, out_dim, in, 1.0, x.data(), in,
               weight.data(), in, 0.0, out.mutable_data(), out_dim);
  if (bias) {
    double* po = out.mutable_data();
    const double* pb = bias->data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < out_dim; ++c) po[r * out_dim + c] += pb[c];
  }

  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  Tape* tape = common_tape({&x, &weight, bias_ptr ? bias_ptr : &x});
  if (!tape) return out;

  const int nx = node_of(x), nw = node_of(weight);
  const int nb = bias_ptr ? node_of(*bias_ptr) : -1;
  const Tensor sx = x.detached(), sw = weight.detached();
  std::vector<int> rec;
  if (nx >= 0) rec.push_back(nx);
  if (nw >= 0) rec.push_back(nw);
  if (nb >= 0) rec.push_back(nb);
  const int id = tape->record(
      "linear", rec,
      [nx, nw, nb, sx, sw, rows, in, out_dim](const Tensor& up, Tape& tp) {
        const double* pu = up.data();
        if (nx >= 0) {
          Tensor gx(sx.shape());
          detail::gemm(false, false, rows, in, out_dim, 1.0, pu, out_dim,
                       sw.data(), in, 0.0, gx.mutable_data(), in);
          tp.accumulate(nx, std::move(gx));
        }
        if (nw >= 0) {
          Tensor gw(sw.shape());
          detail::gemm(true, false, out_dim, in, rows, 1.0, pu, out_dim,
                       sx.data(), in, 0.0, gw.mutable_data(), in);
          tp.accumulate(nw, std::move(gw));
        }
        if (nb >= 0) {
          Tensor gb(Shape{out_dim});
          double* pg = gb.mutable_data();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < out_dim; ++c)
              pg[c] += pu[r * out_dim + c];
          tp.accumulate(nb, std::move(gb));
        }
      });
  return tape->attach(out, id);
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::int64_t> labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
  const std::int64_t n = logits.shape()[0];
  const std::int64_t k = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: " +
                                std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(n));
  for (std::int64_t i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= k)
      throw std::invalid_argument(
          "softmax_cross_entropy: label " + std::to_string(labels[i]) +
          " out of range [0," + std::to_string(k) + ") at row " +
          std::to_string(i));

  // softmax probabilities are saved for the backward pass
  Tensor probs(Shape{n, k});
  double* pp = probs.mutable_data();
  const double* pl = logits.data();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = pl + i * k;
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::int64_t j = 0; j < k; ++j)
      pp[i * k + j] = std::exp(row[j] - mx) / denom;
    loss += -(row[labels[i]] - mx - log_denom);
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));

  Tape* tape = common_tape({&logits});
  if (!tape) return out;
  const int nl = logits.node();
  std::vector<std::int64_t> labels_copy(labels.begin(), labels.end());
  const int id = tape->record(
      "softmax_xent", {nl},
      [nl, probs, labels_copy, n, k](const Tensor& up, Tape& tp) {
        const double s = up.value() / static_cast<double>(n);
        Tensor g(Shape{n, k});
        double* pg = g.mutable_data();
        const double* pr = probs.data();
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t j = 0; j < k; ++j) pg[i * k + j] = s * pr[i * k + j];
          pg[i * k + labels_copy[i]] -= s;
        }
        tp.accumulate(nl, std::move(g));
      });
  return tape->attach(out, id);
}

}  // namespace tslab
