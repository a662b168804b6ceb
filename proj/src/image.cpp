#include "pdm/image.hpp"

#include <cmath>

namespace pdm {

namespace {
inline double lerp(double a, double b, double t) { return a + t * (b - a); }
}  // namespace

double sample_bilinear(const Field& img, double x, double y, int ch) {
  if (x <= -1.0 || y <= -1.0 || x >= img.w || y >= img.h) return 0.0;
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double dx = x - x0, dy = y - y0;
  if (x0 >= 0 && y0 >= 0 && x0 + 1 < img.w && y0 + 1 < img.h) {
    double top = lerp(img.at(y0, x0, ch), img.at(y0, x0 + 1, ch), dx);
    double bot = lerp(img.at(y0 + 1, x0, ch), img.at(y0 + 1, x0 + 1, ch), dx);
    return lerp(top, bot, dy);
  }
  auto tap = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.w || yy >= img.h) return 0.0;
    return img.at(yy, xx, ch);
  };
  return (1.0 - dy) * ((1.0 - dx) * tap(y0, x0) + dx * tap(y0, x0 + 1)) +
         dy * ((1.0 - dx) * tap(y0 + 1, x0) + dx * tap(y0 + 1, x0 + 1));
}

Field warp_bilinear(const Field& img, const Field& flow) {
  require_same_spatial(img, flow, "warp_bilinear");
  if (flow.c != 2) throw std::invalid_argument("warp_bilinear: flow needs 2 ch");
  Field out(img.h, img.w, img.c);
  const int64_t n = static_cast<int64_t>(img.h) * img.w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / img.w), j = static_cast<int>(px % img.w);
    double x = j + flow.v[px * 2 + 0];
    double y = i + flow.v[px * 2 + 1];
    for (int c = 0; c < img.c; ++c)
      out.v[px * img.c + c] = sample_bilinear(img, x, y, c);
  }
  return out;
}

void warp_bilinear_backward(const Field& img, const Field& flow,
                            const Field& gout, Field& gimg, Field& gflow) {
  const int64_t n = static_cast<int64_t>(img.h) * img.w;
  // Scatter into gimg is kept serial; callers parallelize at a higher level.
  for (int64_t px = 0; px < n; ++px) {
    int i = static_cast<int>(px / img.w), j = static_cast<int>(px % img.w);
    double x = j + flow.v[px * 2 + 0];
    double y = i + flow.v[px * 2 + 1];
    if (x <= -1.0 || y <= -1.0 || x >= img.w || y >= img.h) continue;
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double dx = x - x0, dy = y - y0;
    double gx = 0.0, gy = 0.0;
    auto tap = [&](int yy, int xx, int c) -> double {
      if (xx < 0 || yy < 0 || xx >= img.w || yy >= img.h) return 0.0;
      return img.at(yy, xx, c);
    };
    auto add = [&](int yy, int xx, int c, double g) {
      if (xx < 0 || yy < 0 || xx >= img.w || yy >= img.h) return;
      gimg.at(yy, xx, c) += g;
    };
    for (int c = 0; c < img.c; ++c) {
      double g = gout.v[px * img.c + c];
      if (g == 0.0) continue;
      add(y0, x0, c, g * (1.0 - dx) * (1.0 - dy));
      add(y0, x0 + 1, c, g * dx * (1.0 - dy));
      add(y0 + 1, x0, c, g * (1.0 - dx) * dy);
      add(y0 + 1, x0 + 1, c, g * dx * dy);
      double v00 = tap(y0, x0, c), v01 = tap(y0, x0 + 1, c);
      double v10 = tap(y0 + 1, x0, c), v11 = tap(y0 + 1, x0 + 1, c);
      gx += g * ((1.0 - dy) * (v01 - v00) + dy * (v11 - v10));
      gy += g * ((1.0 - dx) * (v10 - v00) + dx * (v11 - v01));
    }
    gflow.v[px * 2 + 0] += gx;
    gflow.v[px * 2 + 1] += gy;
  }
}

namespace {

struct Taps {
  int a, b;    // clamped source indices
  double t;    // blend toward b
};

Taps resize_taps(int dst, int dst_n, int src_n) {
  double scale = static_cast<double>(src_n) / dst_n;
  double s = (dst + 0.5) * scale - 0.5;
  double fl = std::floor(s);
  int a = static_cast<int>(fl);
  double t = s - fl;
  int b = a + 1;
  if (a < 0) a = 0;
  if (b < 0) b = 0;
  if (a > src_n - 1) a = src_n - 1;
  if (b > src_n - 1) b = src_n - 1;
  return {a, b, t};
}

}  // namespace

Field resize_bilinear(const Field& img, int oh, int ow) {
  if (oh < 1 || ow < 1) throw std::invalid_argument("resize_bilinear: extent");
  Field out(oh, ow, img.c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < oh; ++i) {
    Taps ty = resize_taps(i, oh, img.h);
    for (int j = 0; j < ow; ++j) {
      Taps tx = resize_taps(j, ow, img.w);
      for (int c = 0; c < img.c; ++c) {
        double top = lerp(img.at(ty.a, tx.a, c), img.at(ty.a, tx.b, c), tx.t);
        double bot = lerp(img.at(ty.b, tx.a, c), img.at(ty.b, tx.b, c), tx.t);
        out.at(i, j, c) = lerp(top, bot, ty.t);
      }
    }
  }
  return out;
}

Field resize_bilinear_backward(const Field& gout, int ih, int iw) {
  Field gin(ih, iw, gout.c);
  for (int i = 0; i < gout.h; ++i) {
    Taps ty = resize_taps(i, gout.h, ih);
    for (int j = 0; j < gout.w; ++j) {
      Taps tx = resize_taps(j, gout.w, iw);
      for (int c = 0; c < gout.c; ++c) {
        double g = gout.at(i, j, c);
        if (g == 0.0) continue;
        gin.at(ty.a, tx.a, c) += g * (1.0 - tx.t) * (1.0 - ty.t);
        gin.at(ty.a, tx.b, c) += g * tx.t * (1.0 - ty.t);
        gin.at(ty.b, tx.a, c) += g * (1.0 - tx.t) * ty.t;
        gin.at(ty.b, tx.b, c) += g * tx.t * ty.t;
      }
    }
  }
  return gin;
}

Field area_downsample2x(const Field& img) {
  if (img.h % 2 || img.w % 2)
    throw std::invalid_argument("area_downsample2x: odd extent");
  Field out(img.h / 2, img.w / 2, img.c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out.h; ++i)
    for (int j = 0; j < out.w; ++j)
      for (int c = 0; c < img.c; ++c)
        out.at(i, j, c) = 0.25 * (img.at(2 * i, 2 * j, c) +
                                  img.at(2 * i, 2 * j + 1, c) +
                                  img.at(2 * i + 1, 2 * j, c) +
                                  img.at(2 * i + 1, 2 * j + 1, c));
  return out;
}

Field gaussian_blur(const Field& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma <= 0");
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));

  Field tmp(img.h, img.w, img.c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < img.h; ++i) {
    for (int j = 0; j < img.w; ++j) {
      for (int c = 0; c < img.c; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          int x = j + t;
          if (x < 0 || x >= img.w) continue;
          acc += k[t + radius] * img.at(i, x, c);
          wsum += k[t + radius];
        }
        tmp.at(i, j, c) = acc / wsum;
      }
    }
  }
  Field out(img.h, img.w, img.c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < img.h; ++i) {
    for (int j = 0; j < img.w; ++j) {
      for (int c = 0; c < img.c; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          int y = i + t;
          if (y < 0 || y >= img.h) continue;
          acc += k[t + radius] * tmp.at(y, j, c);
          wsum += k[t + radius];
        }
        out.at(i, j, c) = acc / wsum;
      }
    }
  }
  return out;
}

}  // namespace pdm
