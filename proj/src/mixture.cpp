#include "pdm/mixture.hpp"

#include <algorithm>
#include <cmath>

#include "pdm/parallel.hpp"

namespace pdm {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kLog2 = 0.6931471805599453;
constexpr double kFreeClamp = 40.0;  // clamp on h for unbounded components

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sum exp(t_m)) with max shift; n >= 1.
double logsumexp(const double* t, int n) {
  double mx = t[0];
  for (int m = 1; m < n; ++m) mx = std::max(mx, t[m]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int m = 0; m < n; ++m) s += std::exp(t[m] - mx);
  return mx + std::log(s);
}

}  // namespace

void ConstraintSpec::validate() const {
  if (comps.empty())
    throw std::invalid_argument("ConstraintSpec: no components");
  for (const auto& b : comps) {
    if (!(b.lo >= 0.0)) throw std::invalid_argument("ConstraintSpec: lo < 0");
    if (b.lo > b.hi)
      throw std::invalid_argument("ConstraintSpec: lo > hi (constraint order)");
    if (!b.fixed() && b.bounded() && !(b.lo > 0.0))
      throw std::invalid_argument("ConstraintSpec: learned bounded component "
                                  "needs lo > 0");
  }
  if (ordered) {
    if (!(comps[0].lo > 0.0))
      throw std::invalid_argument("ConstraintSpec: chain must start > 0");
    for (size_t m = 1; m < comps.size(); ++m)
      if (comps[m - 1].hi > comps[m].lo)
        throw std::invalid_argument(
            "ConstraintSpec: intervals must be interleaved "
            "(hi_m <= lo_{m+1})");
  }
}

ConstraintSpec ConstraintSpec::constrained(std::vector<ComponentBounds> b) {
  ConstraintSpec s;
  s.comps = std::move(b);
  s.ordered = true;
  s.validate();
  return s;
}

ConstraintSpec ConstraintSpec::default_two(double image_size) {
  return constrained({{1.0, 1.0}, {2.0, image_size * image_size}});
}

ConstraintSpec ConstraintSpec::unconstrained(int m) {
  if (m < 1) throw std::invalid_argument("ConstraintSpec: m < 1");
  ConstraintSpec s;
  s.comps.assign(m, ComponentBounds{
                        0.0, std::numeric_limits<double>::infinity()});
  s.ordered = false;
  return s;
}

double constrain_variance(double h, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("constrain_variance: lo > hi");
  if (lo < 0.0) throw std::invalid_argument("constrain_variance: lo < 0");
  if (lo == hi) return lo;
  if (!std::isfinite(hi))
    return lo + std::exp(std::clamp(h, -kFreeClamp, kFreeClamp));
  if (!(lo > 0.0))
    throw std::invalid_argument("constrain_variance: bounded range needs lo > 0");
  return lo + (hi - lo) * sigmoid(h);
}

double constrain_variance_dh(double h, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("constrain_variance: lo > hi");
  if (lo == hi) return 0.0;
  if (!std::isfinite(hi)) {
    if (h < -kFreeClamp || h > kFreeClamp) return 0.0;
    return std::exp(h);
  }
  double s = sigmoid(h);
  return (hi - lo) * s * (1.0 - s);
}

MixtureParams MixtureParams::from_raw(Field mu, Field alpha_raw, Field h_raw,
                                      ConstraintSpec spec) {
  spec.validate();
  const int m = spec.count();
  if (mu.c != 2) throw std::invalid_argument("MixtureParams: mu needs 2 ch");
  if (alpha_raw.c != m || h_raw.c != m)
    throw std::invalid_argument("MixtureParams: channel count != M");
  require_same_spatial(mu, alpha_raw, "MixtureParams");
  require_same_spatial(mu, h_raw, "MixtureParams");

  MixtureParams p;
  p.alpha = Field(mu.h, mu.w, m);
  p.sigma2 = Field(mu.h, mu.w, m);
  p.mu = std::move(mu);
  p.alpha_raw = std::move(alpha_raw);
  p.h_raw = std::move(h_raw);
  p.spec = std::move(spec);

  const int64_t n = static_cast<int64_t>(p.mu.h) * p.mu.w;
  const auto& comps = p.spec.comps;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    const double* ar = &p.alpha_raw.v[px * m];
    const double* hr = &p.h_raw.v[px * m];
    double* a = &p.alpha.v[px * m];
    double* s2 = &p.sigma2.v[px * m];
    double lse = logsumexp(ar, m);
    for (int k = 0; k < m; ++k) {
      a[k] = std::exp(ar[k] - lse);
      s2[k] = constrain_variance(hr[k], comps[k].lo, comps[k].hi);
    }
  }
  return p;
}

MixtureParams MixtureParams::from_values(Field mu, Field alpha, Field sigma2,
                                         ConstraintSpec spec) {
  spec.validate();
  const int m = spec.count();
  if (alpha.c != m || sigma2.c != m)
    throw std::invalid_argument("MixtureParams: channel count != M");
  MixtureParams p;
  p.alpha_raw = Field(mu.h, mu.w, m);
  p.h_raw = Field(mu.h, mu.w, m);
  p.mu = std::move(mu);
  p.alpha = std::move(alpha);
  p.sigma2 = std::move(sigma2);
  p.spec = std::move(spec);
  for (size_t i = 0; i < p.alpha.v.size(); ++i)
    p.alpha_raw.v[i] = std::log(p.alpha.v[i]);
  // Invert the constraint mapping so h_raw is consistent with sigma2.
  const int64_t n = static_cast<int64_t>(p.mu.h) * p.mu.w;
  for (int64_t px = 0; px < n; ++px) {
    for (int k = 0; k < m; ++k) {
      const auto& b = p.spec.comps[k];
      double s2 = p.sigma2.v[px * m + k];
      double h = 0.0;
      if (!b.fixed()) {
        if (b.bounded()) {
          double t = std::clamp((s2 - b.lo) / (b.hi - b.lo), 1e-12, 1.0 - 1e-12);
          h = std::log(t / (1.0 - t));
        } else {
          h = std::log(std::max(s2 - b.lo, 1e-300));
        }
      }
      p.h_raw.v[px * m + k] = h;
    }
  }
  return p;
}

void MixtureParams::check_invariants(double tol) const {
  spec.validate();
  const int m = spec.count();
  require_same_spatial(mu, alpha, "MixtureParams");
  require_same_spatial(mu, sigma2, "MixtureParams");
  const int64_t n = static_cast<int64_t>(mu.h) * mu.w;
  for (int64_t px = 0; px < n; ++px) {
    double sum = 0.0;
    for (int k = 0; k < m; ++k) {
      double a = alpha.v[px * m + k];
      if (!(a >= 0.0)) throw std::invalid_argument("MixtureParams: alpha < 0");
      sum += a;
      double s2 = sigma2.v[px * m + k];
      const auto& b = spec.comps[k];
      if (s2 < b.lo - tol || s2 > b.hi + tol)
        throw std::invalid_argument("MixtureParams: sigma2 out of bounds");
    }
    if (std::abs(sum - 1.0) > tol)
      throw std::invalid_argument("MixtureParams: weights do not sum to 1");
  }
}

int GroundTruthFlow::valid_count() const {
  int n = 0;
  for (uint8_t b : valid) n += b != 0;
  return n;
}

double log_density(double yu, double yv, double mu_u, double mu_v,
                   const double* alpha_raw, const double* h_raw,
                   const ConstraintSpec& spec) {
  const int m = spec.count();
  double d1 = std::abs(yu - mu_u) + std::abs(yv - mu_v);
  double t[16];
  std::vector<double> tbuf;
  double* tp = t;
  if (m > 16) {
    tbuf.resize(m);
    tp = tbuf.data();
  }
  for (int k = 0; k < m; ++k) {
    double s2 = constrain_variance(h_raw[k], spec.comps[k].lo, spec.comps[k].hi);
    double s = std::log(s2);
    tp[k] = alpha_raw[k] - kLog2 - s - kSqrt2 * std::exp(-0.5 * s) * d1;
  }
  return logsumexp(tp, m) - logsumexp(alpha_raw, m);
}

double log_density_at(const MixtureParams& p, int i, int j, double yu,
                      double yv) {
  const int m = p.components();
  const size_t px = static_cast<size_t>(i) * p.mu.w + j;
  const double* ar = &p.alpha_raw.v[px * m];
  const double* s2 = &p.sigma2.v[px * m];
  double d1 = std::abs(yu - p.mu.v[px * 2 + 0]) +
              std::abs(yv - p.mu.v[px * 2 + 1]);
  double t[16];
  std::vector<double> tbuf;
  double* tp = t;
  if (m > 16) {
    tbuf.resize(m);
    tp = tbuf.data();
  }
  for (int k = 0; k < m; ++k) {
    double s = std::log(s2[k]);
    tp[k] = ar[k] - kLog2 - s - kSqrt2 * std::exp(-0.5 * s) * d1;
  }
  return logsumexp(tp, m) - logsumexp(ar, m);
}

NllResult nll_loss(const MixtureParams& params, const GroundTruthFlow& gt,
                   bool with_grads) {
  require_same_spatial(params.mu, gt.flow, "nll_loss");
  if (gt.flow.c != 2) throw std::invalid_argument("nll_loss: gt needs 2 ch");
  const int m = params.components();
  const int64_t n = static_cast<int64_t>(params.mu.h) * params.mu.w;
  if (static_cast<int64_t>(gt.valid.size()) != n)
    throw std::invalid_argument("nll_loss: mask size mismatch");

  NllResult r;
  if (with_grads) {
    r.d_mu = Field(params.mu.h, params.mu.w, 2);
    r.d_alpha_raw = Field(params.mu.h, params.mu.w, m);
    r.d_h_raw = Field(params.mu.h, params.mu.w, m);
  }
  const auto& comps = params.spec.comps;

  double chunk_loss[kReduceChunks] = {0};
  int chunk_count[kReduceChunks] = {0};
  for_chunks(n, [&](int ci, int64_t begin, int64_t end) {
    double t[16];
    double wresp[16];
    for (int64_t px = begin; px < end; ++px) {
      if (!gt.valid[px]) continue;
      const double* mu = &params.mu.v[px * 2];
      const double* ar = &params.alpha_raw.v[px * m];
      const double* hr = &params.h_raw.v[px * m];
      const double* a = &params.alpha.v[px * m];
      const double* s2 = &params.sigma2.v[px * m];
      double du = gt.flow.v[px * 2 + 0] - mu[0];
      double dv = gt.flow.v[px * 2 + 1] - mu[1];
      double d1 = std::abs(du) + std::abs(dv);
      for (int k = 0; k < m; ++k) {
        double s = std::log(s2[k]);
        t[k] = ar[k] - kLog2 - s - kSqrt2 * std::exp(-0.5 * s) * d1;
      }
      double lse_t = logsumexp(t, m);
      double lse_a = logsumexp(ar, m);
      chunk_loss[ci] += -(lse_t - lse_a);
      ++chunk_count[ci];
      if (!with_grads) continue;

      // Responsibilities under the density term vs. plain softmax weights.
      for (int k = 0; k < m; ++k) wresp[k] = std::exp(t[k] - lse_t);
      double wc = 0.0;
      double su = du > 0.0 ? 1.0 : (du < 0.0 ? -1.0 : 0.0);
      double sv = dv > 0.0 ? 1.0 : (dv < 0.0 ? -1.0 : 0.0);
      for (int k = 0; k < m; ++k) {
        double ck = kSqrt2 / std::sqrt(s2[k]);
        r.d_alpha_raw.v[px * m + k] = a[k] - wresp[k];
        double dL_ds = wresp[k] * (1.0 - 0.5 * ck * d1);
        double ds_dh =
            constrain_variance_dh(hr[k], comps[k].lo, comps[k].hi) / s2[k];
        r.d_h_raw.v[px * m + k] = dL_ds * ds_dh;
        wc += wresp[k] * ck;
      }
      // Moving mu toward y shrinks the exponent, so the loss gradient points
      // away from y; subgradient 0 at an exact fit.
      r.d_mu.v[px * 2 + 0] = -su * wc;
      r.d_mu.v[px * 2 + 1] = -sv * wc;
    }
  });

  double total = 0.0;
  int count = 0;
  for (int ci = 0; ci < kReduceChunks; ++ci) {
    total += chunk_loss[ci];
    count += chunk_count[ci];
  }
  if (count == 0)
    throw std::invalid_argument("nll_loss: no valid pixels");
  r.loss = total / count;
  r.valid_count = count;
  if (with_grads) {
    double inv = 1.0 / count;
    for (auto& g : r.d_mu.v) g *= inv;
    for (auto& g : r.d_alpha_raw.v) g *= inv;
    for (auto& g : r.d_h_raw.v) g *= inv;
  }
  return r;
}

Field confidence_pr(const MixtureParams& params, double radius) {
  if (!(radius > 0.0)) throw std::domain_error("confidence_pr: R <= 0");
  const int m = params.components();
  const int64_t n = static_cast<int64_t>(params.mu.h) * params.mu.w;
  Field out(params.mu.h, params.mu.w, 1);
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    const double* a = &params.alpha.v[px * m];
    const double* s2 = &params.sigma2.v[px * m];
    double p = 0.0;
    for (int k = 0; k < m; ++k) {
      double one_axis = 1.0 - std::exp(-kSqrt2 * radius / std::sqrt(s2[k]));
      p += a[k] * one_axis * one_axis;
    }
    out.v[px] = p;
  }
  return out;
}

Field mixture_variance(const MixtureParams& params) {
  const int m = params.components();
  const int64_t n = static_cast<int64_t>(params.mu.h) * params.mu.w;
  Field out(params.mu.h, params.mu.w, 1);
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    const double* a = &params.alpha.v[px * m];
    const double* s2 = &params.sigma2.v[px * m];
    double v = 0.0;
    for (int k = 0; k < m; ++k) v += a[k] * s2[k];
    out.v[px] = v;
  }
  return out;
}

}  // namespace pdm
