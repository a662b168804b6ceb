#ifndef PDM_GEOMETRY_HPP
#define PDM_GEOMETRY_HPP

#include <cstdint>
#include <vector>

#include "pdm/field.hpp"

namespace pdm {

// 3x3 projective transform, row-major. Maps reference coordinates to query
// coordinates: (x', y', w')^T = H (x, y, 1)^T.
struct Homography {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }

  // Projects (x, y); sets ok=false when the point maps near infinity.
  void apply(double x, double y, double& ox, double& oy, bool& ok) const;
  Homography inverse() const;  // throws std::invalid_argument if singular
  // Scales so the bottom-right entry is 1 when it is nonzero.
  Homography normalized() const;
  double det() const;
};

// Matrix product: (a * b) maps like a applied after b.
Homography operator*(const Homography& a, const Homography& b);

struct Match {
  double rx = 0, ry = 0;  // reference coordinates (x, y)
  double qx = 0, qy = 0;  // query coordinates
  double conf = 1.0;
};
using MatchSet = std::vector<Match>;

// One match per pixel with confidence strictly above `threshold`, with
// coordinates (and displacements) scaled from the flow grid to an
// out_w x out_h resolution. Matches whose query target falls outside the
// output bounds are dropped. An empty result is a valid signal.
MatchSet select_matches(const Field& flow, const Field& conf, double threshold,
                        int out_w, int out_h);

// Normalized direct linear transform on >= 4 correspondences.
// Exact on noise-free inputs; throws std::invalid_argument on fewer than 4
// matches or a degenerate (rank-deficient) configuration.
Homography fit_homography_dlt(const MatchSet& matches);

struct RansacResult {
  bool ok = false;
  Homography h;
  std::vector<uint8_t> inliers;  // consistent with h at the threshold
  double inlier_ratio = 0.0;
  int iterations = 0;
};

// Hypothesize-and-verify with 4-point samples. A match is an inlier when
// both the forward and backward transfer residuals are within
// `inlier_thresh_px`. The consensus set is refit by least squares and the
// returned mask is recomputed against the refit model. Deterministic for a
// given seed.
RansacResult ransac_homography(const MatchSet& matches, double inlier_thresh_px,
                               int max_iters, uint64_t seed);

struct FlowWithValidity {
  Field flow;                  // h x w x 2
  std::vector<uint8_t> valid;  // h * w; false where the point maps to infinity
};

// flow(x) = project(H x) - x on the given extent.
FlowWithValidity flow_from_homography(const Homography& h, int height,
                                      int width);

// Composition of a coarse homography with a fine flow field:
// out(x) = project(H (x + fine(x))) - x, i.e. the homography flow evaluated
// at the fine-displaced position plus the fine flow.
FlowWithValidity compose_flows(const Homography& coarse, const Field& fine);

}  // namespace pdm

#endif
