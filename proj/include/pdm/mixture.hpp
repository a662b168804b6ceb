#ifndef PDM_MIXTURE_HPP
#define PDM_MIXTURE_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pdm/field.hpp"

namespace pdm {

// Variance interval of one mixture component, in pixels^2.
//  lo == hi        : fixed component, no learned scale parameter.
//  lo < hi finite  : sigma2 = lo + (hi - lo) * sigmoid(h).
//  hi infinite     : sigma2 = lo + exp(h), h clamped to +-40.
struct ComponentBounds {
  double lo = 1.0;
  double hi = 1.0;
  bool fixed() const { return lo == hi; }
  bool bounded() const { return std::isfinite(hi); }
};

// Per-component variance ranges of the mixture. When `ordered` is set the
// intervals must form a chain 0 < lo_1 <= hi_1 <= lo_2 <= ... <= hi_M so each
// component covers its own band of uncertainties; the unordered form is kept
// for the free-variance ablation models.
struct ConstraintSpec {
  std::vector<ComponentBounds> comps;
  bool ordered = true;

  int count() const { return static_cast<int>(comps.size()); }

  // Throws std::invalid_argument on an invalid chain (e.g. lo > hi).
  void validate() const;

  static ConstraintSpec constrained(std::vector<ComponentBounds> bounds);
  // Two Laplace components: the first fixed at sigma2 = 1, the second in
  // [2, image_size^2].
  static ConstraintSpec default_two(double image_size);
  // M components with free variance sigma2 = exp(h); no ordering chain.
  static ConstraintSpec unconstrained(int m);
  static ConstraintSpec single_laplace() { return unconstrained(1); }

  bool operator==(const ConstraintSpec&) const = default;
};
inline bool operator==(const ComponentBounds& a, const ComponentBounds& b) {
  return a.lo == b.lo && a.hi == b.hi;
}

// Maps an unconstrained scalar h into the [lo, hi] variance interval.
// Monotone increasing in h; throws on lo > hi or lo < 0.
double constrain_variance(double h, double lo, double hi);
// d sigma2 / d h of the mapping above.
double constrain_variance_dh(double h, double lo, double hi);

// Per-pixel parameters of the mixture-of-Laplace predictive distribution.
// All fields share one spatial extent; alpha rows sum to 1 and every sigma2
// lies inside its component interval.
struct MixtureParams {
  Field mu;         // h x w x 2, predicted flow (u = x/col, v = y/row)
  Field alpha;      // h x w x M, softmaxed component weights
  Field alpha_raw;  // h x w x M, weight logits
  Field h_raw;      // h x w x M, pre-constraint scale values
  Field sigma2;     // h x w x M, constrained variances
  ConstraintSpec spec;

  int components() const { return spec.count(); }
  int height() const { return mu.h; }
  int width() const { return mu.w; }

  // Applies softmax and the variance constraint to raw network outputs.
  static MixtureParams from_raw(Field mu, Field alpha_raw, Field h_raw,
                                ConstraintSpec spec);
  // Builds params from already-valid weights/variances (evaluation paths and
  // tests); logits are log(alpha) and h_raw is left zero.
  static MixtureParams from_values(Field mu, Field alpha, Field sigma2,
                                   ConstraintSpec spec);

  // Throws if any invariant (simplex weights, variance bounds, extents) is
  // violated beyond `tol`.
  void check_invariants(double tol = 1e-9) const;
};

// Ground-truth flow with validity mask; losses and metrics only read pixels
// where valid is nonzero.
struct GroundTruthFlow {
  Field flow;                  // h x w x 2
  std::vector<uint8_t> valid;  // h * w

  GroundTruthFlow() = default;
  GroundTruthFlow(Field f, std::vector<uint8_t> m)
      : flow(std::move(f)), valid(std::move(m)) {}
  static GroundTruthFlow all_valid(Field f) {
    size_t n = static_cast<size_t>(f.h) * f.w;
    return GroundTruthFlow(std::move(f), std::vector<uint8_t>(n, 1));
  }
  int valid_count() const;
};

// log p(y | params at one pixel) for the shared-variance Laplace mixture,
// evaluated with a max-shifted log-sum-exp so it stays finite for
// sigma2 in [1, 1e8] and |y - mu|_1 up to 1e4.
//   alpha_raw, h_raw: M-vectors at the pixel (see MixtureParams).
double log_density(double yu, double yv, double mu_u, double mu_v,
                   const double* alpha_raw, const double* h_raw,
                   const ConstraintSpec& spec);
double log_density_at(const MixtureParams& p, int i, int j, double yu,
                      double yv);

// Mean negative log-likelihood over valid pixels with exact analytic
// gradients w.r.t. mu, the weight logits and the pre-constraint scales.
// The subgradient of |x| at 0 is taken as 0.
struct NllResult {
  double loss = 0.0;
  Field d_mu;         // h x w x 2
  Field d_alpha_raw;  // h x w x M
  Field d_h_raw;      // h x w x M
  int valid_count = 0;
};
NllResult nll_loss(const MixtureParams& params, const GroundTruthFlow& gt,
                   bool with_grads = true);

// P(|y - mu|_inf < R) per pixel: sum_m alpha_m (1 - exp(-sqrt(2) R/sigma_m))^2.
// Throws std::domain_error for R <= 0. Result extent h x w x 1.
Field confidence_pr(const MixtureParams& params, double radius);

// V = sum_m alpha_m sigma2_m per pixel; the variance-based confidence measure
// kept for comparison.
Field mixture_variance(const MixtureParams& params);

}  // namespace pdm

#endif
