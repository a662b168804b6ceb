#include "pdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdm {

namespace {

void check_gt(const Field& pred, const GroundTruthFlow& gt, const char* what) {
  require_same_spatial(pred, gt.flow, what);
  if (pred.c != 2) throw std::invalid_argument(std::string(what) + ": channels");
  if (gt.valid_count() == 0)
    throw std::invalid_argument(std::string(what) + ": no valid pixels");
}

}  // namespace

double aepe(const Field& pred, const GroundTruthFlow& gt) {
  check_gt(pred, gt, "aepe");
  double sum = 0.0;
  int n = 0;
  const int64_t total = static_cast<int64_t>(pred.h) * pred.w;
  for (int64_t px = 0; px < total; ++px) {
    if (!gt.valid[px]) continue;
    double du = pred.v[px * 2 + 0] - gt.flow.v[px * 2 + 0];
    double dv = pred.v[px * 2 + 1] - gt.flow.v[px * 2 + 1];
    sum += std::sqrt(du * du + dv * dv);
    ++n;
  }
  return sum / n;
}

double pck(const Field& pred, const GroundTruthFlow& gt, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("pck: threshold <= 0");
  check_gt(pred, gt, "pck");
  int good = 0, n = 0;
  const int64_t total = static_cast<int64_t>(pred.h) * pred.w;
  for (int64_t px = 0; px < total; ++px) {
    if (!gt.valid[px]) continue;
    double du = pred.v[px * 2 + 0] - gt.flow.v[px * 2 + 0];
    double dv = pred.v[px * 2 + 1] - gt.flow.v[px * 2 + 1];
    good += std::sqrt(du * du + dv * dv) <= threshold;
    ++n;
  }
  return 100.0 * good / n;
}

double f1_outlier_rate(const Field& pred, const GroundTruthFlow& gt) {
  check_gt(pred, gt, "f1_outlier_rate");
  int outliers = 0, n = 0;
  const int64_t total = static_cast<int64_t>(pred.h) * pred.w;
  for (int64_t px = 0; px < total; ++px) {
    if (!gt.valid[px]) continue;
    double du = pred.v[px * 2 + 0] - gt.flow.v[px * 2 + 0];
    double dv = pred.v[px * 2 + 1] - gt.flow.v[px * 2 + 1];
    double err = std::sqrt(du * du + dv * dv);
    double mag = std::sqrt(gt.flow.v[px * 2 + 0] * gt.flow.v[px * 2 + 0] +
                           gt.flow.v[px * 2 + 1] * gt.flow.v[px * 2 + 1]);
    bool rel = mag == 0.0 ? true : err / mag > 0.05;
    outliers += err > 3.0 && rel;
    ++n;
  }
  return 100.0 * outliers / n;
}

std::vector<double> flow_error_list(const Field& pred,
                                    const GroundTruthFlow& gt) {
  check_gt(pred, gt, "flow_error_list");
  std::vector<double> out;
  const int64_t total = static_cast<int64_t>(pred.h) * pred.w;
  out.reserve(total);
  for (int64_t px = 0; px < total; ++px) {
    if (!gt.valid[px]) continue;
    double du = pred.v[px * 2 + 0] - gt.flow.v[px * 2 + 0];
    double dv = pred.v[px * 2 + 1] - gt.flow.v[px * 2 + 1];
    out.push_back(std::sqrt(du * du + dv * dv));
  }
  return out;
}

std::vector<double> masked_list(const Field& scalar,
                                const std::vector<uint8_t>& valid) {
  if (scalar.c != 1) throw std::invalid_argument("masked_list: channels");
  std::vector<double> out;
  for (size_t px = 0; px < valid.size(); ++px)
    if (valid[px]) out.push_back(scalar.v[px]);
  return out;
}

std::vector<double> default_fraction_grid() {
  std::vector<double> g(50);
  for (int k = 0; k < 50; ++k) g[k] = k / 50.0;
  return g;
}

SparsificationCurve sparsification(const std::vector<double>& errors,
                                   const std::vector<double>& confidence,
                                   SparsMetric metric, double pck_threshold,
                                   bool normalize) {
  if (errors.size() != confidence.size())
    throw std::invalid_argument("sparsification: length mismatch");
  if (errors.empty()) throw std::invalid_argument("sparsification: empty");
  const size_t n = errors.size();

  // Removal order: least confident first, ties by pixel index.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return confidence[a] < confidence[b];
  });

  // Prefix sums along the removal order.
  std::vector<double> removed_err(n + 1, 0.0);
  std::vector<int> removed_good(n + 1, 0);
  for (size_t k = 0; k < n; ++k) {
    removed_err[k + 1] = removed_err[k] + errors[order[k]];
    removed_good[k + 1] =
        removed_good[k] + (errors[order[k]] <= pck_threshold ? 1 : 0);
  }
  double total_err = removed_err[n];
  int total_good = removed_good[n];

  SparsificationCurve c;
  c.fractions = default_fraction_grid();
  for (double f : c.fractions) {
    size_t k = static_cast<size_t>(std::floor(f * n));
    size_t remain = n - k;
    if (remain == 0) break;  // curve truncated at an empty remainder
    double val;
    if (metric == SparsMetric::kAepe)
      val = (total_err - removed_err[k]) / remain;
    else
      val = 100.0 * (total_good - removed_good[k]) / remain;
    c.values.push_back(val);
  }
  c.fractions.resize(c.values.size());
  if (normalize) {
    c.normalized = true;
    double base = c.values.empty() ? 0.0 : c.values[0];
    if (std::abs(base) > 1e-300)
      for (double& v : c.values) v /= base;
  }
  return c;
}

SparsificationCurve oracle_curve(const std::vector<double>& errors,
                                 SparsMetric metric, double pck_threshold,
                                 bool normalize) {
  std::vector<double> neg(errors.size());
  for (size_t k = 0; k < errors.size(); ++k) neg[k] = -errors[k];
  return sparsification(errors, neg, metric, pck_threshold, normalize);
}

double ause(const SparsificationCurve& spars,
            const SparsificationCurve& oracle) {
  if (spars.fractions != oracle.fractions)
    throw std::invalid_argument("ause: fraction grids differ");
  double area = 0.0;
  for (size_t k = 1; k < spars.fractions.size(); ++k) {
    double ya = spars.values[k - 1] - oracle.values[k - 1];
    double yb = spars.values[k] - oracle.values[k];
    area += 0.5 * (ya + yb) * (spars.fractions[k] - spars.fractions[k - 1]);
  }
  return area;
}

SparsificationCurve average_curves(const std::vector<SparsificationCurve>& cs) {
  if (cs.empty()) throw std::invalid_argument("average_curves: empty");
  SparsificationCurve out = cs[0];
  for (size_t i = 1; i < cs.size(); ++i) {
    if (cs[i].fractions != out.fractions)
      throw std::invalid_argument("average_curves: grids differ");
    for (size_t k = 0; k < out.values.size(); ++k)
      out.values[k] += cs[i].values[k];
  }
  for (double& v : out.values) v /= cs.size();
  return out;
}

namespace {

void check_rotation(const double r[9], const char* what) {
  // R^T R should be the identity.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6)
        throw std::invalid_argument(std::string(what) +
                                    ": matrix is not orthonormal");
    }
}

}  // namespace

double rotation_error_deg(const double r_gt[9], const double r_est[9]) {
  check_rotation(r_gt, "rotation_error");
  check_rotation(r_est, "rotation_error");
  // trace(R_gt^-1 R_est) with R^-1 = R^T.
  double tr = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) tr += r_gt[k * 3 + i] * r_est[k * 3 + i];
  double arg = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::abs(std::acos(arg)) * 180.0 / M_PI;
}

double translation_error_deg(const double t_gt[3], const double t_est[3]) {
  double n1 = std::sqrt(t_gt[0] * t_gt[0] + t_gt[1] * t_gt[1] +
                        t_gt[2] * t_gt[2]);
  double n2 = std::sqrt(t_est[0] * t_est[0] + t_est[1] * t_est[1] +
                        t_est[2] * t_est[2]);
  if (n1 == 0.0 || n2 == 0.0)
    throw std::invalid_argument("translation_error: zero vector");
  double dot = (t_gt[0] * t_est[0] + t_gt[1] * t_est[1] + t_gt[2] * t_est[2]) /
               (n1 * n2);
  return std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI;
}

MapScores map_at(const std::vector<double>& max_err_deg) {
  if (max_err_deg.empty()) throw std::invalid_argument("map_at: empty");
  auto acc = [&](double thr) {
    int c = 0;
    for (double e : max_err_deg) c += e < thr;
    return static_cast<double>(c) / max_err_deg.size();
  };
  MapScores s;
  s.acc5 = acc(5.0);
  s.acc10 = acc(10.0);
  s.acc15 = acc(15.0);
  s.acc20 = acc(20.0);
  s.map5 = s.acc5;
  s.map10 = 0.5 * (s.acc5 + s.acc10);
  s.map20 = 0.25 * (s.acc5 + s.acc10 + s.acc15 + s.acc20);
  return s;
}

}  // namespace pdm
