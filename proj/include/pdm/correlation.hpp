#ifndef PDM_CORRELATION_HPP
#define PDM_CORRELATION_HPP

#include "pdm/conv.hpp"
#include "pdm/field.hpp"

namespace pdm {

// Feature-similarity volume. For a local volume, channel (k+r)*d + (l+r)
// of pixel (i,j) holds <ref(i,j), query(i+k, j+l)> for displacements
// k,l in [-r, r]; displacements landing outside the query contribute 0.
// For a global volume the "displacement" channels enumerate absolute query
// positions: channel k*w + l holds <ref(i,j), query(k,l)>.
struct CorrelationVolume {
  Field vals;  // h x w x (dk*dl)
  int dk = 0, dl = 0;
  int radius = -1;  // >= 0 for local volumes
  bool is_global = false;
};

CorrelationVolume local_correlation(const Field& ref, const Field& query,
                                    int radius);
CorrelationVolume global_correlation(const Field& ref, const Field& query);

// Accumulate gradients w.r.t. both feature maps given d(loss)/d(vals).
void local_correlation_backward(const Field& ref, const Field& query,
                                int radius, const Field& gvals, Field& gref,
                                Field& gquery);
void global_correlation_backward(const Field& ref, const Field& query,
                                 const Field& gvals, Field& gref,
                                 Field& gquery);

// Per-slice forward traces of the correlation uncertainty module.
struct CorrUncTrace {
  std::vector<StackTrace> slices;
};

// Applies `stack` independently to every displacement slice C_ij.. of the
// volume, producing an h x w x n representation. The stack must reduce the
// slice extent to 1x1.
Field correlation_uncertainty(const CorrelationVolume& corr,
                              const ConvStack& stack,
                              CorrUncTrace* trace = nullptr);

// Backward pass: accumulates stack-weight gradients into gacc (chunk-merged
// in a fixed order, independent of thread count) and returns the gradient
// w.r.t. the volume values.
Field correlation_uncertainty_backward(const CorrelationVolume& corr,
                                       const ConvStack& stack,
                                       const CorrUncTrace& trace,
                                       const Field& gout, ConvStack& gacc);

// Uncertainty predictor head: concatenates [flow_features, u, prev] and runs
// the given stack (final layer linear, 2M channels). Returns weight logits
// (first M channels) and pre-constraint scales (last M).
struct UncPrediction {
  Field alpha_raw;
  Field h_raw;
};
UncPrediction uncertainty_predictor(const ConvStack& stack,
                                    const Field& flow_features, const Field& u,
                                    const Field* prev, int m_components,
                                    StackTrace* trace = nullptr);

}  // namespace pdm

#endif
