#ifndef PDM_CONV_HPP
#define PDM_CONV_HPP

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pdm/field.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// Slope of the leaky rectifier used wherever a layer is activated. Plain
// ReLU without normalization lets feature units die under adaptive updates
// at this scale; the leak keeps them recoverable and stays deterministic.
inline constexpr double kLeakySlope = 0.1;

// One layer of a small convolutional stack: either a 2D convolution with
// zero padding (optionally followed by a leaky rectifier) or a max-pool over
// in-bounds window positions.
struct ConvLayer {
  enum Kind { kConv, kMaxPool };
  Kind kind = kConv;
  int in_c = 0, out_c = 0;
  int kh = 0, kw = 0;
  int stride = 1, pad = 0;
  bool relu = false;  // apply the leaky rectifier after this conv
  std::vector<double> w;  // [out_c][kh][kw][in_c]
  std::vector<double> b;  // [out_c]

  static ConvLayer conv(int in_c, int out_c, int k, int stride, int pad,
                        bool relu);
  static ConvLayer conv_rect(int in_c, int out_c, int kh, int kw, int stride,
                             int pad, bool relu);
  static ConvLayer maxpool(int k, int stride, int pad);

  std::pair<int, int> output_extent(int h, int w) const;
};

// Stored forward activations needed for the backward pass.
struct StackTrace {
  // x[0] is the stack input, x[i+1] the post-activation output of layer i.
  std::vector<Field> x;
  // For pool layers: flat source index (into the layer input) per output
  // element; empty vectors for conv layers.
  std::vector<std::vector<int>> pool_src;
  bool empty() const { return x.empty(); }
};

struct ConvStack {
  std::vector<ConvLayer> layers;

  Field forward(const Field& in, StackTrace* trace = nullptr) const;

  // Accumulates weight/bias gradients into `gacc` (same geometry as *this,
  // built via zeros_like) and returns the gradient w.r.t. the stack input.
  // Throws if the trace is missing or inconsistent.
  Field backward(const StackTrace& trace, const Field& gout,
                 ConvStack& gacc) const;

  // Uniform init in [-a, a] with a = 1/sqrt(fan_in) for weights and biases.
  void init_uniform(Rng& rng);
  ConvStack zeros_like() const;
  void add_scaled(const ConvStack& other, double s);  // this += s * other

  int in_channels() const;
  int out_channels() const;
  std::pair<int, int> output_extent(int h, int w) const;
  size_t param_count() const;

  // Enumerates parameter vectors as (suffix, pointer) pairs, e.g. "0.w",
  // "0.b"; order is stable and used for checkpoints and the optimizer.
  void for_each_param(
      const std::string& prefix,
      const std::function<void(const std::string&, std::vector<double>*)>& cb);
};

// Stack for processing one correlation slice down to a 1x1 x n_out vector:
// 3x3 valid convolutions, a 3x3/stride-2/pad-1 max pool after the first conv
// when the extent is still above 7, then 3x3 valid convolutions to 1x1.
// With channel plan (32, 32, 16) this reproduces the published layer shapes
// for 9x9 and 16x16 inputs. Kernels shrink to the remaining extent when it
// falls below 3.
ConvStack make_correlation_uncertainty_stack(int eh, int ew, int c0, int c1,
                                             int c2, int n_out, Rng& rng);

// Three 3x3/stride-1/pad-1 convolutions with channels 32, 16 and n_out
// (ReLU, ReLU, linear); the uncertainty-predictor head.
ConvStack make_uncertainty_predictor_stack(int in_c, int n_out, Rng& rng);

}  // namespace pdm

#endif
