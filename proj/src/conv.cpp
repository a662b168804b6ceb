#include "pdm/conv.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace pdm {

ConvLayer ConvLayer::conv(int in_c, int out_c, int k, int stride, int pad,
                          bool relu) {
  return conv_rect(in_c, out_c, k, k, stride, pad, relu);
}

ConvLayer ConvLayer::conv_rect(int in_c, int out_c, int kh, int kw, int stride,
                               int pad, bool relu) {
  if (in_c < 1 || out_c < 1 || kh < 1 || kw < 1 || stride < 1 || pad < 0)
    throw std::invalid_argument("ConvLayer: bad geometry");
  ConvLayer l;
  l.kind = kConv;
  l.in_c = in_c;
  l.out_c = out_c;
  l.kh = kh;
  l.kw = kw;
  l.stride = stride;
  l.pad = pad;
  l.relu = relu;
  l.w.assign(static_cast<size_t>(out_c) * kh * kw * in_c, 0.0);
  l.b.assign(out_c, 0.0);
  return l;
}

ConvLayer ConvLayer::maxpool(int k, int stride, int pad) {
  if (k < 1 || stride < 1 || pad < 0 || pad >= k)
    throw std::invalid_argument("ConvLayer: bad pool geometry");
  ConvLayer l;
  l.kind = kMaxPool;
  l.kh = l.kw = k;
  l.stride = stride;
  l.pad = pad;
  return l;
}

std::pair<int, int> ConvLayer::output_extent(int h, int w) const {
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw std::invalid_argument("ConvLayer: input smaller than kernel");
  return {oh, ow};
}

namespace {

Field conv_forward(const ConvLayer& l, const Field& in) {
  if (in.c != l.in_c)
    throw std::invalid_argument("ConvStack: input channel mismatch");
  auto [oh, ow] = l.output_extent(in.h, in.w);
  Field out(oh, ow, l.out_c);
  const int64_t n = static_cast<int64_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / ow), j = static_cast<int>(px % ow);
    double* op = &out.v[px * l.out_c];
    for (int oc = 0; oc < l.out_c; ++oc) {
      double acc = l.b[oc];
      const double* wk = &l.w[static_cast<size_t>(oc) * l.kh * l.kw * l.in_c];
      for (int ki = 0; ki < l.kh; ++ki) {
        int y = i * l.stride - l.pad + ki;
        if (y < 0 || y >= in.h) continue;
        for (int kj = 0; kj < l.kw; ++kj) {
          int x = j * l.stride - l.pad + kj;
          if (x < 0 || x >= in.w) continue;
          const double* ip = in.px(y, x);
          const double* wp = &wk[(ki * l.kw + kj) * l.in_c];
          for (int ic = 0; ic < l.in_c; ++ic) acc += wp[ic] * ip[ic];
        }
      }
      if (l.relu && acc < 0.0) acc *= kLeakySlope;
      op[oc] = acc;
    }
  }
  return out;
}

Field pool_forward(const ConvLayer& l, const Field& in,
                   std::vector<int>* src_idx) {
  auto [oh, ow] = l.output_extent(in.h, in.w);
  Field out(oh, ow, in.c);
  if (src_idx) src_idx->assign(static_cast<size_t>(oh) * ow * in.c, -1);
  const int64_t n = static_cast<int64_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / ow), j = static_cast<int>(px % ow);
    for (int ch = 0; ch < in.c; ++ch) {
      double best = -std::numeric_limits<double>::infinity();
      int best_idx = -1;
      for (int ki = 0; ki < l.kh; ++ki) {
        int y = i * l.stride - l.pad + ki;
        if (y < 0 || y >= in.h) continue;
        for (int kj = 0; kj < l.kw; ++kj) {
          int x = j * l.stride - l.pad + kj;
          if (x < 0 || x >= in.w) continue;
          int idx = (y * in.w + x) * in.c + ch;
          if (in.v[idx] > best) {
            best = in.v[idx];
            best_idx = idx;
          }
        }
      }
      out.v[px * in.c + ch] = best;
      if (src_idx) (*src_idx)[px * in.c + ch] = best_idx;
    }
  }
  return out;
}

// Gradient w.r.t. the conv input, gather form (parallel-safe).
void conv_backward_input(const ConvLayer& l, const Field& gpre, int ih, int iw,
                         Field& gin) {
  const int64_t n = static_cast<int64_t>(ih) * iw;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int y = static_cast<int>(px / iw), x = static_cast<int>(px % iw);
    double* gp = &gin.v[px * l.in_c];
    for (int ki = 0; ki < l.kh; ++ki) {
      int num = y + l.pad - ki;
      if (num < 0 || num % l.stride) continue;
      int i = num / l.stride;
      if (i >= gpre.h) continue;
      for (int kj = 0; kj < l.kw; ++kj) {
        int numx = x + l.pad - kj;
        if (numx < 0 || numx % l.stride) continue;
        int j = numx / l.stride;
        if (j >= gpre.w) continue;
        const double* go = gpre.px(i, j);
        for (int oc = 0; oc < l.out_c; ++oc) {
          const double* wp =
              &l.w[((static_cast<size_t>(oc) * l.kh + ki) * l.kw + kj) *
                   l.in_c];
          double g = go[oc];
          for (int ic = 0; ic < l.in_c; ++ic) gp[ic] += g * wp[ic];
        }
      }
    }
  }
}

// Weight/bias gradients, parallel over output channels (each channel sums
// pixels in a fixed order, so results do not depend on thread count).
void conv_backward_weights(const ConvLayer& l, const Field& in,
                           const Field& gpre, ConvLayer& gl) {
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < l.out_c; ++oc) {
    double* gw = &gl.w[static_cast<size_t>(oc) * l.kh * l.kw * l.in_c];
    double gb = 0.0;
    for (int i = 0; i < gpre.h; ++i) {
      for (int j = 0; j < gpre.w; ++j) {
        double g = gpre.at(i, j, oc);
        if (g == 0.0) continue;
        gb += g;
        for (int ki = 0; ki < l.kh; ++ki) {
          int y = i * l.stride - l.pad + ki;
          if (y < 0 || y >= in.h) continue;
          for (int kj = 0; kj < l.kw; ++kj) {
            int x = j * l.stride - l.pad + kj;
            if (x < 0 || x >= in.w) continue;
            const double* ip = in.px(y, x);
            double* wp = &gw[(ki * l.kw + kj) * l.in_c];
            for (int ic = 0; ic < l.in_c; ++ic) wp[ic] += g * ip[ic];
          }
        }
      }
    }
    gl.b[oc] += gb;
  }
}

}  // namespace

Field ConvStack::forward(const Field& in, StackTrace* trace) const {
  Field cur = in;
  if (trace) {
    trace->x.clear();
    trace->pool_src.assign(layers.size(), {});
    trace->x.push_back(cur);
  }
  for (size_t li = 0; li < layers.size(); ++li) {
    const ConvLayer& l = layers[li];
    if (l.kind == ConvLayer::kConv) {
      cur = conv_forward(l, cur);
    } else {
      cur = pool_forward(l, cur, trace ? &trace->pool_src[li] : nullptr);
    }
    if (trace) trace->x.push_back(cur);
  }
  return cur;
}

Field ConvStack::backward(const StackTrace& trace, const Field& gout,
                          ConvStack& gacc) const {
  if (trace.empty() || trace.x.size() != layers.size() + 1)
    throw std::runtime_error("ConvStack::backward: missing forward trace");
  if (gacc.layers.size() != layers.size())
    throw std::invalid_argument("ConvStack::backward: gradient shape");
  Field g = gout;
  for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
    const ConvLayer& l = layers[li];
    const Field& in = trace.x[li];
    const Field& out = trace.x[li + 1];
    if (!g.same_extent(out))
      throw std::invalid_argument("ConvStack::backward: upstream extent");
    if (l.kind == ConvLayer::kConv) {
      Field gpre = g;
      if (l.relu) {
        for (size_t k = 0; k < gpre.v.size(); ++k)
          if (out.v[k] <= 0.0) gpre.v[k] *= kLeakySlope;
      }
      conv_backward_weights(l, in, gpre, gacc.layers[li]);
      Field gin(in.h, in.w, in.c);
      conv_backward_input(l, gpre, in.h, in.w, gin);
      g = std::move(gin);
    } else {
      const std::vector<int>& src = trace.pool_src[li];
      Field gin(in.h, in.w, in.c);
      for (size_t k = 0; k < g.v.size(); ++k)
        if (src[k] >= 0) gin.v[src[k]] += g.v[k];
      g = std::move(gin);
    }
  }
  return g;
}

void ConvStack::init_uniform(Rng& rng) {
  for (ConvLayer& l : layers) {
    if (l.kind != ConvLayer::kConv) continue;
    double a = 1.0 / std::sqrt(static_cast<double>(l.in_c) * l.kh * l.kw);
    for (double& x : l.w) x = uniform(rng, -a, a);
    for (double& x : l.b) x = uniform(rng, -a, a);
  }
}

ConvStack ConvStack::zeros_like() const {
  ConvStack g = *this;
  for (ConvLayer& l : g.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  return g;
}

void ConvStack::add_scaled(const ConvStack& other, double s) {
  for (size_t li = 0; li < layers.size(); ++li) {
    for (size_t k = 0; k < layers[li].w.size(); ++k)
      layers[li].w[k] += s * other.layers[li].w[k];
    for (size_t k = 0; k < layers[li].b.size(); ++k)
      layers[li].b[k] += s * other.layers[li].b[k];
  }
}

int ConvStack::in_channels() const {
  for (const ConvLayer& l : layers)
    if (l.kind == ConvLayer::kConv) return l.in_c;
  return 0;
}

int ConvStack::out_channels() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == ConvLayer::kConv) return it->out_c;
  return 0;
}

std::pair<int, int> ConvStack::output_extent(int h, int w) const {
  for (const ConvLayer& l : layers) {
    auto [oh, ow] = l.output_extent(h, w);
    h = oh;
    w = ow;
  }
  return {h, w};
}

size_t ConvStack::param_count() const {
  size_t n = 0;
  for (const ConvLayer& l : layers) n += l.w.size() + l.b.size();
  return n;
}

void ConvStack::for_each_param(
    const std::string& prefix,
    const std::function<void(const std::string&, std::vector<double>*)>& cb) {
  for (size_t li = 0; li < layers.size(); ++li) {
    if (layers[li].kind != ConvLayer::kConv) continue;
    cb(prefix + "." + std::to_string(li) + ".w", &layers[li].w);
    cb(prefix + "." + std::to_string(li) + ".b", &layers[li].b);
  }
}

ConvStack make_correlation_uncertainty_stack(int eh, int ew, int c0, int c1,
                                             int c2, int n_out, Rng& rng) {
  if (eh != ew)
    throw std::invalid_argument("uncertainty stack: square input required");
  // Plan the extent schedule first, then assign the channel plan so the last
  // conv always emits n_out with no activation.
  struct Step {
    int k;
    bool pool;
  };
  std::vector<Step> steps;
  int cur = eh;
  {
    int k = std::min(3, cur);
    steps.push_back({k, false});
    cur = cur - k + 1;
    if (cur > 7) {
      steps.push_back({3, true});
      cur = (cur + 2 - 3) / 2 + 1;
    }
  }
  while (cur > 1) {
    int k = std::min(3, cur);
    steps.push_back({k, false});
    cur = cur - k + 1;
  }
  int n_convs = 0;
  for (const Step& s : steps) n_convs += !s.pool;

  ConvStack st;
  int in_c = 1;
  int conv_idx = 0;
  for (const Step& s : steps) {
    if (s.pool) {
      st.layers.push_back(ConvLayer::maxpool(3, 2, 1));
      continue;
    }
    int out_c;
    if (conv_idx == n_convs - 1)
      out_c = n_out;
    else if (conv_idx == 0)
      out_c = c0;
    else if (conv_idx == n_convs - 2)
      out_c = c2;
    else
      out_c = c1;
    bool last = conv_idx == n_convs - 1;
    st.layers.push_back(ConvLayer::conv(in_c, out_c, s.k, 1, 0, !last));
    in_c = out_c;
    ++conv_idx;
  }
  st.init_uniform(rng);
  return st;
}

ConvStack make_uncertainty_predictor_stack(int in_c, int n_out, Rng& rng) {
  ConvStack st;
  st.layers.push_back(ConvLayer::conv(in_c, 32, 3, 1, 1, true));
  st.layers.push_back(ConvLayer::conv(32, 16, 3, 1, 1, true));
  st.layers.push_back(ConvLayer::conv(16, n_out, 3, 1, 1, false));
  st.init_uniform(rng);
  return st;
}

}  // namespace pdm
