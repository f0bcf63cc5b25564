#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tslab/tape.hpp"
#include "tslab/tensor.hpp"

namespace tslab {

enum class Mode { train, eval };
enum class Act { sigmoid, tanh, relu, gelu };

// elementwise / structural
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum_all(const Tensor& a);  // -> scalar
Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<int>& axes);
Tensor slice(const Tensor& t, int axis, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor repeat_rows(const Tensor& t, std::int64_t n);  // [1,rest...] -> [n,rest...]

// activations; gelu uses the tanh approximation
Tensor activation(const Tensor& x, Act kind);
inline Tensor sigmoid(const Tensor& x) { return activation(x, Act::sigmoid); }
inline Tensor tanh_act(const Tensor& x) { return activation(x, Act::tanh); }
inline Tensor relu(const Tensor& x) { return activation(x, Act::relu); }
inline Tensor gelu(const Tensor& x) { return activation(x, Act::gelu); }

// affine map over the last axis; weight is [out, in]
Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias = std::nullopt);

// x [N,C,H,W] * weight [F,C,k,k] + bias [F], zero padding on both sides
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding);
// x [N,C,T,H,W] * weight [F,C,k,k,k] + bias [F]
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding);

// windows cover the trailing axes; stride == window; partial windows
// dropped (floor). Gradient routes to the first argmax of each window.
Tensor maxpool(const Tensor& x, const std::vector<std::int64_t>& window);

// channel axis is axis 1; train mode normalizes over all non-channel axes
// and updates running stats in place (momentum 0.1 convention), eval mode
// uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double eps = 1e-5, double momentum = 0.1);

// normalizes the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// q,k,v [..., n, d_h]; scaled dot-product, softmax over the key axis.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Rotary position rotation on [..., n, d_h]; d_h even, base 10000,
// half-dimension pairing (i, i + d_h/2). Parameter-free and norm-preserving.
Tensor rotary_apply(const Tensor& x, std::span<const std::int64_t> positions);

// mean over the batch of -log softmax(logits)[label]; max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::int64_t> labels);

}  // namespace tslab
