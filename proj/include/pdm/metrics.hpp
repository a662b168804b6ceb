#ifndef PDM_METRICS_HPP
#define PDM_METRICS_HPP

#include <vector>

#include "pdm/field.hpp"
#include "pdm/mixture.hpp"

namespace pdm {

// Mean Euclidean flow error over valid pixels. Throws when no pixel is valid.
double aepe(const Field& pred, const GroundTruthFlow& gt);

// Percentage of valid pixels with Euclidean error <= threshold, pooled over
// the given field (callers pool across images by concatenating error lists).
double pck(const Field& pred, const GroundTruthFlow& gt, double threshold);

// Percentage of valid pixels that are outliers: error > 3 px AND
// error / |gt| > 0.05. Where |gt| = 0 the ratio test is considered satisfied,
// so the absolute gate alone decides.
double f1_outlier_rate(const Field& pred, const GroundTruthFlow& gt);

// Per-valid-pixel Euclidean errors / confidences, in pixel scan order.
std::vector<double> flow_error_list(const Field& pred,
                                    const GroundTruthFlow& gt);
std::vector<double> masked_list(const Field& scalar,
                                const std::vector<uint8_t>& valid);

struct SparsificationCurve {
  std::vector<double> fractions;
  std::vector<double> values;
  bool normalized = false;
};

enum class SparsMetric { kAepe, kPck };

// Removal fractions 0, 0.02, ..., 0.98.
std::vector<double> default_fraction_grid();

// For each grid fraction, drops that share of the pixels with the lowest
// confidence (ties by index) and evaluates the metric on the remainder.
// With normalize the curve is divided by its full-set value. Passing
// confidence = -error yields the oracle curve.
SparsificationCurve sparsification(const std::vector<double>& errors,
                                   const std::vector<double>& confidence,
                                   SparsMetric metric,
                                   double pck_threshold = 5.0,
                                   bool normalize = true);
SparsificationCurve oracle_curve(const std::vector<double>& errors,
                                 SparsMetric metric, double pck_threshold = 5.0,
                                 bool normalize = true);

// Trapezoidal integral of (spars - oracle) over the shared fraction grid.
// Throws on grid mismatch. Curves averaged over images should be averaged
// before calling this.
double ause(const SparsificationCurve& spars,
            const SparsificationCurve& oracle);

// Pointwise mean of per-image curves (same grids required).
SparsificationCurve average_curves(const std::vector<SparsificationCurve>& cs);

// Angular pose errors in degrees; inputs row-major 3x3 / length-3.
// The trace argument is clamped to [-1, 1] before the arccos.
double rotation_error_deg(const double r_gt[9], const double r_est[9]);
double translation_error_deg(const double t_gt[3], const double t_est[3]);

struct MapScores {
  double acc5 = 0, acc10 = 0, acc15 = 0, acc20 = 0;
  double map5 = 0, map10 = 0, map20 = 0;
};
// Acc-k = fraction of pairs whose max(rotation, translation) error is below
// k degrees; mAP@10 averages Acc-5 and Acc-10, mAP@20 averages through Acc-20.
MapScores map_at(const std::vector<double>& max_err_deg);

}  // namespace pdm

#endif
