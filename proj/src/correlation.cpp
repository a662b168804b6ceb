#include "pdm/correlation.hpp"

#include "pdm/parallel.hpp"

namespace pdm {

CorrelationVolume local_correlation(const Field& ref, const Field& query,
                                    int radius) {
  require_same_extent(ref, query, "local_correlation");
  if (radius < 0) throw std::invalid_argument("local_correlation: radius < 0");
  const int d = 2 * radius + 1;
  CorrelationVolume cv;
  cv.dk = cv.dl = d;
  cv.radius = radius;
  cv.is_global = false;
  cv.vals = Field(ref.h, ref.w, d * d);
  const int64_t n = static_cast<int64_t>(ref.h) * ref.w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / ref.w), j = static_cast<int>(px % ref.w);
    const double* rp = ref.px(i, j);
    double* out = &cv.vals.v[px * d * d];
    for (int k = -radius; k <= radius; ++k) {
      int y = i + k;
      for (int l = -radius; l <= radius; ++l) {
        int x = j + l;
        double acc = 0.0;
        if (y >= 0 && y < ref.h && x >= 0 && x < ref.w) {
          const double* qp = query.px(y, x);
          for (int c = 0; c < ref.c; ++c) acc += rp[c] * qp[c];
        }
        out[(k + radius) * d + (l + radius)] = acc;
      }
    }
  }
  return cv;
}

CorrelationVolume global_correlation(const Field& ref, const Field& query) {
  require_same_extent(ref, query, "global_correlation");
  CorrelationVolume cv;
  cv.dk = ref.h;
  cv.dl = ref.w;
  cv.is_global = true;
  cv.vals = Field(ref.h, ref.w, ref.h * ref.w);
  const int64_t n = static_cast<int64_t>(ref.h) * ref.w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / ref.w), j = static_cast<int>(px % ref.w);
    const double* rp = ref.px(i, j);
    double* out = &cv.vals.v[px * cv.dk * cv.dl];
    for (int64_t q = 0; q < n; ++q) {
      const double* qp = &query.v[q * query.c];
      double acc = 0.0;
      for (int c = 0; c < ref.c; ++c) acc += rp[c] * qp[c];
      out[q] = acc;
    }
  }
  return cv;
}

void local_correlation_backward(const Field& ref, const Field& query,
                                int radius, const Field& gvals, Field& gref,
                                Field& gquery) {
  const int d = 2 * radius + 1;
  const int64_t n = static_cast<int64_t>(ref.h) * ref.w;
  // d/d ref(i,j): gather over the displacement window.
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / ref.w), j = static_cast<int>(px % ref.w);
    const double* gv = &gvals.v[px * d * d];
    double* gr = &gref.v[px * ref.c];
    for (int k = -radius; k <= radius; ++k) {
      int y = i + k;
      if (y < 0 || y >= ref.h) continue;
      for (int l = -radius; l <= radius; ++l) {
        int x = j + l;
        if (x < 0 || x >= ref.w) continue;
        double g = gv[(k + radius) * d + (l + radius)];
        if (g == 0.0) continue;
        const double* qp = query.px(y, x);
        for (int c = 0; c < ref.c; ++c) gr[c] += g * qp[c];
      }
    }
  }
  // d/d query(y,x): gather over reference pixels whose window covers (y,x).
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int y = static_cast<int>(px / ref.w), x = static_cast<int>(px % ref.w);
    double* gq = &gquery.v[px * ref.c];
    for (int k = -radius; k <= radius; ++k) {
      int i = y - k;
      if (i < 0 || i >= ref.h) continue;
      for (int l = -radius; l <= radius; ++l) {
        int j = x - l;
        if (j < 0 || j >= ref.w) continue;
        double g = gvals.v[(static_cast<int64_t>(i) * ref.w + j) * d * d +
                           (k + radius) * d + (l + radius)];
        if (g == 0.0) continue;
        const double* rp = ref.px(i, j);
        for (int c = 0; c < ref.c; ++c) gq[c] += g * rp[c];
      }
    }
  }
}

void global_correlation_backward(const Field& ref, const Field& query,
                                 const Field& gvals, Field& gref,
                                 Field& gquery) {
  const int64_t n = static_cast<int64_t>(ref.h) * ref.w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    const double* gv = &gvals.v[px * n];
    double* gr = &gref.v[px * ref.c];
    for (int64_t q = 0; q < n; ++q) {
      double g = gv[q];
      if (g == 0.0) continue;
      const double* qp = &query.v[q * query.c];
      for (int c = 0; c < ref.c; ++c) gr[c] += g * qp[c];
    }
  }
#pragma omp parallel for schedule(static)
  for (int64_t q = 0; q < n; ++q) {
    double* gq = &gquery.v[q * query.c];
    for (int64_t px = 0; px < n; ++px) {
      double g = gvals.v[px * n + q];
      if (g == 0.0) continue;
      const double* rp = &ref.v[px * ref.c];
      for (int c = 0; c < ref.c; ++c) gq[c] += g * rp[c];
    }
  }
}

namespace {

void fill_slice(const CorrelationVolume& corr, int64_t px, Field& slice) {
  const double* src = &corr.vals.v[px * corr.dk * corr.dl];
  for (int k = 0; k < corr.dk * corr.dl; ++k) slice.v[k] = src[k];
}

}  // namespace

Field correlation_uncertainty(const CorrelationVolume& corr,
                              const ConvStack& stack, CorrUncTrace* trace) {
  auto [oh, ow] = stack.output_extent(corr.dk, corr.dl);
  if (oh != 1 || ow != 1)
    throw std::invalid_argument(
        "correlation_uncertainty: stack does not reduce the slice to 1x1");
  const int n_out = stack.out_channels();
  const int64_t n = static_cast<int64_t>(corr.vals.h) * corr.vals.w;
  Field out(corr.vals.h, corr.vals.w, n_out);
  if (trace) trace->slices.assign(n, {});
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    Field slice(corr.dk, corr.dl, 1);
    fill_slice(corr, px, slice);
    Field u = stack.forward(slice, trace ? &trace->slices[px] : nullptr);
    for (int k = 0; k < n_out; ++k) out.v[px * n_out + k] = u.v[k];
  }
  return out;
}

Field correlation_uncertainty_backward(const CorrelationVolume& corr,
                                       const ConvStack& stack,
                                       const CorrUncTrace& trace,
                                       const Field& gout, ConvStack& gacc) {
  const int64_t n = static_cast<int64_t>(corr.vals.h) * corr.vals.w;
  if (static_cast<int64_t>(trace.slices.size()) != n)
    throw std::runtime_error("correlation_uncertainty_backward: missing trace");
  const int n_out = stack.out_channels();
  Field gcorr(corr.vals.h, corr.vals.w, corr.dk * corr.dl);

  // Per-chunk weight-gradient buffers merged in chunk order.
  std::vector<ConvStack> chunk_grads(kReduceChunks, gacc.zeros_like());
  for_chunks(n, [&](int ci, int64_t begin, int64_t end) {
    for (int64_t px = begin; px < end; ++px) {
      Field g(1, 1, n_out);
      for (int k = 0; k < n_out; ++k) g.v[k] = gout.v[px * n_out + k];
      Field gslice = stack.backward(trace.slices[px], g, chunk_grads[ci]);
      double* dst = &gcorr.v[px * corr.dk * corr.dl];
      for (int k = 0; k < corr.dk * corr.dl; ++k) dst[k] = gslice.v[k];
    }
  });
  for (const ConvStack& cg : chunk_grads) gacc.add_scaled(cg, 1.0);
  return gcorr;
}

UncPrediction uncertainty_predictor(const ConvStack& stack,
                                    const Field& flow_features, const Field& u,
                                    const Field* prev, int m_components,
                                    StackTrace* trace) {
  std::vector<const Field*> parts{&flow_features, &u};
  if (prev) parts.push_back(prev);
  Field in = concat_channels(parts);
  if (in.c != stack.in_channels())
    throw std::invalid_argument("uncertainty_predictor: channel mismatch");
  if (stack.out_channels() != 2 * m_components)
    throw std::invalid_argument("uncertainty_predictor: needs 2M outputs");
  Field out = stack.forward(in, trace);
  UncPrediction p;
  p.alpha_raw = Field(out.h, out.w, m_components);
  p.h_raw = Field(out.h, out.w, m_components);
  split_channels(out, {&p.alpha_raw, &p.h_raw});
  return p;
}

}  // namespace pdm
