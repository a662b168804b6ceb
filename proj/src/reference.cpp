#include "pdm/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pdm::ref {

Field local_correlation(const Field& rf, const Field& qf, int radius) {
  int d = 2 * radius + 1;
  Field out(rf.h, rf.w, d * d);
  for (int i = 0; i < rf.h; ++i)
    for (int j = 0; j < rf.w; ++j)
      for (int k = -radius; k <= radius; ++k)
        for (int l = -radius; l <= radius; ++l) {
          double s = 0.0;
          if (i + k >= 0 && i + k < rf.h && j + l >= 0 && j + l < rf.w)
            for (int c = 0; c < rf.c; ++c)
              s += rf.at(i, j, c) * qf.at(i + k, j + l, c);
          out.at(i, j, (k + radius) * d + (l + radius)) = s;
        }
  return out;
}

Field global_correlation(const Field& rf, const Field& qf) {
  Field out(rf.h, rf.w, rf.h * rf.w);
  for (int i = 0; i < rf.h; ++i)
    for (int j = 0; j < rf.w; ++j)
      for (int k = 0; k < rf.h; ++k)
        for (int l = 0; l < rf.w; ++l) {
          double s = 0.0;
          for (int c = 0; c < rf.c; ++c)
            s += rf.at(i, j, c) * qf.at(k, l, c);
          out.at(i, j, k * rf.w + l) = s;
        }
  return out;
}

Field conv2d(const ConvLayer& l, const Field& in) {
  auto [oh, ow] = l.output_extent(in.h, in.w);
  Field out(oh, ow, l.out_c);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int oc = 0; oc < l.out_c; ++oc) {
        double acc = l.b[oc];
        for (int ki = 0; ki < l.kh; ++ki)
          for (int kj = 0; kj < l.kw; ++kj)
            for (int ic = 0; ic < l.in_c; ++ic) {
              int y = i * l.stride - l.pad + ki;
              int x = j * l.stride - l.pad + kj;
              if (y < 0 || y >= in.h || x < 0 || x >= in.w) continue;
              acc += l.w[((static_cast<size_t>(oc) * l.kh + ki) * l.kw + kj) *
                             l.in_c +
                         ic] *
                     in.at(y, x, ic);
            }
        if (l.relu && acc < 0.0) acc *= kLeakySlope;
        out.at(i, j, oc) = acc;
      }
  return out;
}

Field stack_forward(const ConvStack& stack, const Field& in) {
  Field cur = in;
  for (const ConvLayer& l : stack.layers) {
    if (l.kind == ConvLayer::kConv) {
      cur = conv2d(l, cur);
    } else {
      auto [oh, ow] = l.output_extent(cur.h, cur.w);
      Field out(oh, ow, cur.c);
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          for (int c = 0; c < cur.c; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            for (int ki = 0; ki < l.kh; ++ki)
              for (int kj = 0; kj < l.kw; ++kj) {
                int y = i * l.stride - l.pad + ki;
                int x = j * l.stride - l.pad + kj;
                if (y < 0 || y >= cur.h || x < 0 || x >= cur.w) continue;
                best = std::max(best, cur.at(y, x, c));
              }
            out.at(i, j, c) = best;
          }
      cur = std::move(out);
    }
  }
  return cur;
}

double log_density_direct(double yu, double yv, double mu_u, double mu_v,
                          const std::vector<double>& alpha,
                          const std::vector<double>& sigma2) {
  long double sum = 0.0L;
  long double d1 = fabsl(static_cast<long double>(yu) - mu_u) +
                   fabsl(static_cast<long double>(yv) - mu_v);
  for (size_t m = 0; m < alpha.size(); ++m) {
    long double s2 = sigma2[m];
    sum += static_cast<long double>(alpha[m]) / (2.0L * s2) *
           expl(-sqrtl(2.0L / s2) * d1);
  }
  return static_cast<double>(logl(sum));
}

Field warp_bilinear(const Field& img, const Field& flow) {
  Field out(img.h, img.w, img.c);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      double x = j + flow.at(i, j, 0);
      double y = i + flow.at(i, j, 1);
      int x0 = static_cast<int>(std::floor(x));
      int y0 = static_cast<int>(std::floor(y));
      double dx = x - x0, dy = y - y0;
      for (int c = 0; c < img.c; ++c) {
        double acc = 0.0;
        for (int m = 0; m <= 1; ++m)
          for (int nn = 0; nn <= 1; ++nn) {
            int yy = y0 + m, xx = x0 + nn;
            if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
            acc += img.at(yy, xx, c) * std::abs(1.0 - m - dy) *
                   std::abs(1.0 - nn - dx);
          }
        out.at(i, j, c) = acc;
      }
    }
  return out;
}

double aepe(const Field& pred, const Field& gt,
            const std::vector<uint8_t>& valid) {
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < pred.h; ++i)
    for (int j = 0; j < pred.w; ++j) {
      if (!valid[static_cast<size_t>(i) * pred.w + j]) continue;
      double du = pred.at(i, j, 0) - gt.at(i, j, 0);
      double dv = pred.at(i, j, 1) - gt.at(i, j, 1);
      sum += std::sqrt(du * du + dv * dv);
      ++n;
    }
  return sum / n;
}

double pck(const Field& pred, const Field& gt,
           const std::vector<uint8_t>& valid, double threshold) {
  int good = 0, n = 0;
  for (int i = 0; i < pred.h; ++i)
    for (int j = 0; j < pred.w; ++j) {
      if (!valid[static_cast<size_t>(i) * pred.w + j]) continue;
      double du = pred.at(i, j, 0) - gt.at(i, j, 0);
      double dv = pred.at(i, j, 1) - gt.at(i, j, 1);
      if (std::sqrt(du * du + dv * dv) <= threshold) ++good;
      ++n;
    }
  return 100.0 * good / n;
}

double f1_outlier_rate(const Field& pred, const Field& gt,
                       const std::vector<uint8_t>& valid) {
  int out = 0, n = 0;
  for (int i = 0; i < pred.h; ++i)
    for (int j = 0; j < pred.w; ++j) {
      if (!valid[static_cast<size_t>(i) * pred.w + j]) continue;
      double du = pred.at(i, j, 0) - gt.at(i, j, 0);
      double dv = pred.at(i, j, 1) - gt.at(i, j, 1);
      double err = std::sqrt(du * du + dv * dv);
      double mag = std::sqrt(gt.at(i, j, 0) * gt.at(i, j, 0) +
                             gt.at(i, j, 1) * gt.at(i, j, 1));
      bool abs_bad = err > 3.0;
      bool rel_bad = mag == 0.0 ? abs_bad : err / mag > 0.05;
      if (abs_bad && rel_bad) ++out;
      ++n;
    }
  return 100.0 * out / n;
}

std::vector<double> sparsification_aepe(const std::vector<double>& errors,
                                        const std::vector<double>& confidence,
                                        const std::vector<double>& grid) {
  size_t n = errors.size();
  // Repeated scan-for-least-confident removal; ties resolved by index.
  std::vector<uint8_t> removed(n, 0);
  std::vector<size_t> removal_order;
  removal_order.reserve(n);
  for (size_t r = 0; r < n; ++r) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (removed[i]) continue;
      if (best == n || confidence[i] < confidence[best]) best = i;
    }
    removed[best] = 1;
    removal_order.push_back(best);
  }
  std::vector<double> out;
  for (double f : grid) {
    size_t k = static_cast<size_t>(std::floor(f * n));
    double sum = 0.0;
    std::fill(removed.begin(), removed.end(), 0);
    for (size_t r = 0; r < k; ++r) removed[removal_order[r]] = 1;
    size_t cnt = 0;
    for (size_t i = 0; i < n; ++i)
      if (!removed[i]) {
        sum += errors[i];
        ++cnt;
      }
    out.push_back(cnt ? sum / cnt : 0.0);
  }
  return out;
}

double trapezoid(const std::vector<double>& grid,
                 const std::vector<double>& y) {
  double a = 0.0;
  for (size_t i = 1; i < grid.size(); ++i)
    a += 0.5 * (y[i] + y[i - 1]) * (grid[i] - grid[i - 1]);
  return a;
}

std::vector<double> map_at(const std::vector<double>& max_err_deg) {
  auto acc = [&](double thr) {
    int c = 0;
    for (double e : max_err_deg) c += e < thr;
    return static_cast<double>(c) / max_err_deg.size();
  };
  double a5 = acc(5), a10 = acc(10), a15 = acc(15), a20 = acc(20);
  return {a5, (a5 + a10) / 2.0, (a5 + a10 + a15 + a20) / 4.0};
}

}  // namespace pdm::ref
