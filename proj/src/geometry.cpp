#include "pdm/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "pdm/rng.hpp"

namespace pdm {

namespace {
constexpr double kInfEps = 1e-12;
}

void Homography::apply(double x, double y, double& ox, double& oy,
                       bool& ok) const {
  double d = m[6] * x + m[7] * y + m[8];
  if (std::abs(d) < kInfEps) {
    ox = oy = 0.0;
    ok = false;
    return;
  }
  ox = (m[0] * x + m[1] * y + m[2]) / d;
  oy = (m[3] * x + m[4] * y + m[5]) / d;
  ok = true;
}

double Homography::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  Eigen::Matrix3d a;
  a << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
  if (std::abs(a.determinant()) < 1e-300)
    throw std::invalid_argument("Homography: singular matrix");
  Eigen::Matrix3d inv = a.inverse();
  Homography r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = inv(i, j);
  return r.normalized();
}

Homography Homography::normalized() const {
  Homography r = *this;
  if (std::abs(m[8]) > kInfEps) {
    for (double& x : r.m) x /= m[8];
  }
  return r;
}

Homography operator*(const Homography& a, const Homography& b) {
  Homography r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.m[i * 3 + k] * b.m[k * 3 + j];
      r.m[i * 3 + j] = s;
    }
  return r;
}

MatchSet select_matches(const Field& flow, const Field& conf, double threshold,
                        int out_w, int out_h) {
  require_same_spatial(flow, conf, "select_matches");
  if (flow.c != 2) throw std::invalid_argument("select_matches: flow channels");
  double sx = static_cast<double>(out_w) / flow.w;
  double sy = static_cast<double>(out_h) / flow.h;
  MatchSet out;
  for (int i = 0; i < flow.h; ++i) {
    for (int j = 0; j < flow.w; ++j) {
      double c = conf.at(i, j, 0);
      if (!(c > threshold)) continue;
      Match mt;
      mt.rx = j * sx;
      mt.ry = i * sy;
      mt.qx = (j + flow.at(i, j, 0)) * sx;
      mt.qy = (i + flow.at(i, j, 1)) * sy;
      mt.conf = c;
      if (mt.qx < 0 || mt.qx > out_w - 1 || mt.qy < 0 || mt.qy > out_h - 1)
        continue;
      out.push_back(mt);
    }
  }
  return out;
}

namespace {

struct NormXform {
  double cx, cy, s;
};

NormXform hartley(const MatchSet& ms, bool query) {
  double cx = 0, cy = 0;
  for (const Match& m : ms) {
    cx += query ? m.qx : m.rx;
    cy += query ? m.qy : m.ry;
  }
  cx /= ms.size();
  cy /= ms.size();
  double dist = 0;
  for (const Match& m : ms) {
    double dx = (query ? m.qx : m.rx) - cx;
    double dy = (query ? m.qy : m.ry) - cy;
    dist += std::sqrt(dx * dx + dy * dy);
  }
  dist /= ms.size();
  double s = dist > 1e-300 ? std::sqrt(2.0) / dist : 1.0;
  return {cx, cy, s};
}

}  // namespace

Homography fit_homography_dlt(const MatchSet& matches) {
  const int n = static_cast<int>(matches.size());
  if (n < 4)
    throw std::invalid_argument("fit_homography_dlt: needs >= 4 matches");

  NormXform tr = hartley(matches, false);
  NormXform tq = hartley(matches, true);

  Eigen::MatrixXd a(2 * n, 9);
  for (int k = 0; k < n; ++k) {
    double x = (matches[k].rx - tr.cx) * tr.s;
    double y = (matches[k].ry - tr.cy) * tr.s;
    double u = (matches[k].qx - tq.cx) * tq.s;
    double v = (matches[k].qy - tq.cy) * tq.s;
    a.row(2 * k) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * k + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Collinear/degenerate configurations leave more than one null direction.
  if (sv(7) < 1e-9 * std::max(sv(0), 1e-300))
    throw std::invalid_argument("fit_homography_dlt: degenerate configuration");
  Eigen::VectorXd hv = svd.matrixV().col(8);

  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Eigen::Matrix3d t_r, t_q_inv;
  t_r << tr.s, 0, -tr.s * tr.cx, 0, tr.s, -tr.s * tr.cy, 0, 0, 1;
  t_q_inv << 1.0 / tq.s, 0, tq.cx, 0, 1.0 / tq.s, tq.cy, 0, 0, 1;
  Eigen::Matrix3d hm = t_q_inv * hn * t_r;

  Homography h;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) h.m[i * 3 + j] = hm(i, j);
  if (std::abs(h.det()) < 1e-14)
    throw std::invalid_argument("fit_homography_dlt: singular result");
  return h.normalized();
}

namespace {

// Larger of the forward and backward transfer residuals.
double symmetric_residual(const Homography& h, const Homography& hinv,
                          const Match& m) {
  double fx, fy, bx, by;
  bool ok1, ok2;
  h.apply(m.rx, m.ry, fx, fy, ok1);
  hinv.apply(m.qx, m.qy, bx, by, ok2);
  if (!ok1 || !ok2) return std::numeric_limits<double>::infinity();
  double df = std::hypot(fx - m.qx, fy - m.qy);
  double db = std::hypot(bx - m.rx, by - m.ry);
  return std::max(df, db);
}

int count_inliers(const Homography& h, const MatchSet& ms, double thresh,
                  std::vector<uint8_t>* mask) {
  Homography hinv;
  try {
    hinv = h.inverse();
  } catch (const std::invalid_argument&) {
    if (mask) std::fill(mask->begin(), mask->end(), 0);
    return 0;
  }
  int n = 0;
  for (size_t k = 0; k < ms.size(); ++k) {
    bool in = symmetric_residual(h, hinv, ms[k]) <= thresh;
    if (mask) (*mask)[k] = in;
    n += in;
  }
  return n;
}

}  // namespace

RansacResult ransac_homography(const MatchSet& matches, double inlier_thresh_px,
                               int max_iters, uint64_t seed) {
  RansacResult res;
  const int n = static_cast<int>(matches.size());
  if (n < 4)
    throw std::invalid_argument("ransac_homography: needs >= 4 matches");
  res.inliers.assign(n, 0);

  Rng rng(seed);
  int best_count = 0;
  Homography best;
  bool have = false;
  int needed = max_iters;

  int it = 0;
  for (; it < max_iters && it < needed; ++it) {
    int idx[4];
    for (int k = 0; k < 4; ++k) {
      bool dup;
      do {
        idx[k] = uniform_int(rng, 0, n - 1);
        dup = false;
        for (int p = 0; p < k; ++p) dup |= idx[p] == idx[k];
      } while (dup);
    }
    MatchSet sample{matches[idx[0]], matches[idx[1]], matches[idx[2]],
                    matches[idx[3]]};
    Homography h;
    try {
      h = fit_homography_dlt(sample);
    } catch (const std::invalid_argument&) {
      continue;
    }
    int count = count_inliers(h, matches, inlier_thresh_px, nullptr);
    if (count > best_count) {
      best_count = count;
      best = h;
      have = true;
      // Standard adaptive stopping rule at 0.999 confidence.
      double w = static_cast<double>(count) / n;
      double denom = std::log(1.0 - std::min(std::pow(w, 4), 1.0 - 1e-12));
      if (denom < 0.0)
        needed = static_cast<int>(std::min<double>(
            max_iters, std::ceil(std::log(1e-3) / denom)));
    }
  }
  res.iterations = it;
  if (!have || best_count < 4) return res;

  // Least-squares refit on the consensus set.
  std::vector<uint8_t> mask(n, 0);
  count_inliers(best, matches, inlier_thresh_px, &mask);
  MatchSet consensus;
  for (int k = 0; k < n; ++k)
    if (mask[k]) consensus.push_back(matches[k]);
  Homography final_h = best;
  if (consensus.size() >= 4) {
    try {
      final_h = fit_homography_dlt(consensus);
    } catch (const std::invalid_argument&) {
      final_h = best;
    }
  }
  int final_count = count_inliers(final_h, matches, inlier_thresh_px, &mask);
  if (final_count < 4) {
    // Refit drifted; fall back to the sampled model.
    final_h = best;
    final_count = count_inliers(final_h, matches, inlier_thresh_px, &mask);
  }
  res.ok = final_count >= 4;
  res.h = final_h.normalized();
  res.inliers = std::move(mask);
  res.inlier_ratio = static_cast<double>(final_count) / n;
  return res;
}

FlowWithValidity flow_from_homography(const Homography& h, int height,
                                      int width) {
  FlowWithValidity out;
  out.flow = Field(height, width, 2);
  out.valid.assign(static_cast<size_t>(height) * width, 0);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      double x, y;
      bool ok;
      h.apply(j, i, x, y, ok);
      size_t px = static_cast<size_t>(i) * width + j;
      if (ok) {
        out.flow.v[px * 2 + 0] = x - j;
        out.flow.v[px * 2 + 1] = y - i;
        out.valid[px] = 1;
      }
    }
  return out;
}

FlowWithValidity compose_flows(const Homography& coarse, const Field& fine) {
  if (fine.c != 2) throw std::invalid_argument("compose_flows: flow channels");
  FlowWithValidity out;
  out.flow = Field(fine.h, fine.w, 2);
  out.valid.assign(static_cast<size_t>(fine.h) * fine.w, 0);
  for (int i = 0; i < fine.h; ++i)
    for (int j = 0; j < fine.w; ++j) {
      size_t px = static_cast<size_t>(i) * fine.w + j;
      double zx = j + fine.v[px * 2 + 0];
      double zy = i + fine.v[px * 2 + 1];
      double x, y;
      bool ok;
      coarse.apply(zx, zy, x, y, ok);
      if (ok) {
        out.flow.v[px * 2 + 0] = x - j;
        out.flow.v[px * 2 + 1] = y - i;
        out.valid[px] = 1;
      }
    }
  return out;
}

}  // namespace pdm
