#include "pdm/datagen.hpp"

#include <algorithm>
#include <cmath>

#include "pdm/image.hpp"

namespace pdm {

void BaseTransform::flow_at(double x, double y, double& u, double& v) const {
  if (kind == kHomography) {
    double ox, oy;
    bool ok;
    h.apply(x, y, ox, oy, ok);
    if (!ok) {
      u = v = 0.0;
      return;
    }
    u = ox - x;
    v = oy - y;
    return;
  }
  // Control-grid displacement, bilinear over the image domain.
  double gx = x / (img_w - 1) * (grid_n - 1);
  double gy = y / (img_h - 1) * (grid_n - 1);
  gx = std::clamp(gx, 0.0, static_cast<double>(grid_n - 1));
  gy = std::clamp(gy, 0.0, static_cast<double>(grid_n - 1));
  int x0 = std::min(static_cast<int>(gx), grid_n - 2);
  int y0 = std::min(static_cast<int>(gy), grid_n - 2);
  double tx = gx - x0, ty = gy - y0;
  auto d = [&](int gy_, int gx_, int c) {
    return disp[(static_cast<size_t>(gy_) * grid_n + gx_) * 2 + c];
  };
  for (int c = 0; c < 2; ++c) {
    double top = d(y0, x0, c) + tx * (d(y0, x0 + 1, c) - d(y0, x0, c));
    double bot = d(y0 + 1, x0, c) + tx * (d(y0 + 1, x0 + 1, c) - d(y0 + 1, x0, c));
    double val = top + ty * (bot - top);
    (c == 0 ? u : v) = val;
  }
}

Field BaseTransform::dense_flow(int height, int width) const {
  Field f(height, width, 2);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      double u, v;
      flow_at(j, i, u, v);
      f.at(i, j, 0) = u;
      f.at(i, j, 1) = v;
    }
  return f;
}

namespace {

// Convex, consistently oriented quad (no fold-over).
bool quad_ok(const double q[4][2]) {
  double sign = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double* a = q[k];
    const double* b = q[(k + 1) % 4];
    const double* c = q[(k + 2) % 4];
    double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    if (k == 0)
      sign = cross;
    else if (sign * cross <= 0.0)
      return false;
  }
  return true;
}

}  // namespace

BaseTransform sample_homography(const HomographySpec& spec, int width,
                                int height, Rng& rng) {
  double src[4][2] = {{0, 0},
                      {static_cast<double>(width - 1), 0},
                      {static_cast<double>(width - 1),
                       static_cast<double>(height - 1)},
                      {0, static_cast<double>(height - 1)}};
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    double dst[4][2];
    for (int k = 0; k < 4; ++k) {
      dst[k][0] = src[k][0] + uniform(rng, -spec.corner_px, spec.corner_px);
      dst[k][1] = src[k][1] + uniform(rng, -spec.corner_px, spec.corner_px);
    }
    double tx = uniform(rng, -spec.translation_px, spec.translation_px);
    double ty = uniform(rng, -spec.translation_px, spec.translation_px);
    for (auto& p : dst) {
      p[0] += tx;
      p[1] += ty;
    }
    if (!quad_ok(dst)) continue;
    MatchSet ms;
    for (int k = 0; k < 4; ++k)
      ms.push_back({src[k][0], src[k][1], dst[k][0], dst[k][1]});
    try {
      BaseTransform t;
      t.kind = BaseTransform::kHomography;
      t.h = fit_homography_dlt(ms);
      t.h.inverse();  // must be invertible
      return t;
    } catch (const std::invalid_argument&) {
      continue;
    }
  }
  throw std::runtime_error("sample_homography: no valid draw within retries");
}

BaseTransform sample_grid_transform(const GridTransformSpec& spec, int width,
                                    int height, Rng& rng) {
  BaseTransform t;
  t.kind = BaseTransform::kGrid;
  t.grid_n = spec.grid_n;
  t.img_h = height;
  t.img_w = width;
  t.disp.resize(static_cast<size_t>(spec.grid_n) * spec.grid_n * 2);
  for (double& d : t.disp) d = uniform(rng, -spec.amp_px, spec.amp_px);
  return t;
}

Field elastic_field(const ElasticSpec& spec, int height, int width, Rng& rng) {
  Field noise(height, width, 2);
  for (double& x : noise.v) x = uniform(rng, -1.0, 1.0);
  if (spec.amplitude == 0.0) return Field(height, width, 2);
  Field smooth = gaussian_blur(noise, spec.sigma);
  double peak = 0.0;
  for (double x : smooth.v) peak = std::max(peak, std::abs(x));
  if (peak > 0.0) {
    double s = spec.amplitude / peak;
    for (double& x : smooth.v) x *= s;
  }
  return smooth;
}

std::vector<Field> perturbation_masks(const MaskSpec& spec, int height,
                                      int width, Rng& rng) {
  if (spec.count < 0)
    throw std::invalid_argument("perturbation_masks: negative count");
  std::vector<Field> masks;
  for (int n = 0; n < spec.count; ++n) {
    double cx = uniform(rng, 0.0, width - 1.0);
    double cy = uniform(rng, 0.0, height - 1.0);
    double sg = uniform(rng, spec.sigma_min, spec.sigma_max);
    Field s(height, width, 1);
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) {
        double r2 = (j - cx) * (j - cx) + (i - cy) * (i - cy);
        double g = std::exp(-0.5 * r2 / (sg * sg));
        s.at(i, j, 0) = std::min(2.0 * g, 1.0);
      }
    masks.push_back(std::move(s));
  }
  return masks;
}

SampleTriplet compose_perturbed(const BaseTransform& base, const Field& eps,
                                const Field& clean_ref,
                                const Field& clean_query) {
  require_same_spatial(eps, clean_ref, "compose_perturbed");
  if (eps.c != 2)
    throw std::invalid_argument("compose_perturbed: eps needs 2 channels");
  SampleTriplet t;
  t.query = clean_query;
  t.ref = warp_bilinear(clean_ref, eps);
  const int h = clean_ref.h, w = clean_ref.w;
  t.flow = Field(h, w, 2);
  t.valid.assign(static_cast<size_t>(h) * w, 0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      size_t px = static_cast<size_t>(i) * w + j;
      double eu = eps.v[px * 2 + 0], ev = eps.v[px * 2 + 1];
      double u, v;
      base.flow_at(j + eu, i + ev, u, v);
      double fu = u + eu, fv = v + ev;
      t.flow.v[px * 2 + 0] = fu;
      t.flow.v[px * 2 + 1] = fv;
      double qx = j + fu, qy = i + fv;
      t.valid[px] = qx >= 0.0 && qx <= w - 1.0 && qy >= 0.0 && qy <= h - 1.0;
    }
  return t;
}

namespace {

void affine_apply(const double a[6], double x, double y, double& ox,
                  double& oy) {
  ox = a[0] * x + a[1] * y + a[2];
  oy = a[3] * x + a[4] * y + a[5];
}

bool affine_invert(const double a[6], double inv[6]) {
  double det = a[0] * a[4] - a[1] * a[3];
  if (std::abs(det) < 1e-12) return false;
  inv[0] = a[4] / det;
  inv[1] = -a[1] / det;
  inv[3] = -a[3] / det;
  inv[4] = a[0] / det;
  inv[2] = -(inv[0] * a[2] + inv[1] * a[5]);
  inv[5] = -(inv[3] * a[2] + inv[4] * a[5]);
  return true;
}

// Largest singular value of the 2x2 linear part.
double affine_max_scale(const double a[6]) {
  double m00 = a[0], m01 = a[1], m10 = a[3], m11 = a[4];
  double t = m00 * m00 + m01 * m01 + m10 * m10 + m11 * m11;
  double d = m00 * m11 - m01 * m10;
  double disc = std::sqrt(std::max(t * t - 4.0 * d * d, 0.0));
  return std::sqrt(0.5 * (t + disc));
}

}  // namespace

void add_moving_object(SampleTriplet& triplet, const MovingObject& obj) {
  const int h = triplet.ref.h, w = triplet.ref.w, c = triplet.ref.c;
  double ocx, ocy;
  affine_apply(obj.affine, obj.cx, obj.cy, ocx, ocy);
  double mapped_r = obj.radius * affine_max_scale(obj.affine);
  if (obj.cx - obj.radius < 0 || obj.cx + obj.radius > w - 1 ||
      obj.cy - obj.radius < 0 || obj.cy + obj.radius > h - 1 ||
      ocx - mapped_r < 0 || ocx + mapped_r > w - 1 || ocy - mapped_r < 0 ||
      ocy + mapped_r > h - 1)
    throw std::invalid_argument("add_moving_object: footprint out of bounds");

  double inv[6];
  if (!affine_invert(obj.affine, inv))
    throw std::invalid_argument("add_moving_object: singular motion");

  const double r2 = obj.radius * obj.radius;
  const double toff = std::ceil(obj.radius);
  auto tex_at = [&](double x, double y, int ch) {
    return sample_bilinear(obj.texture, x - obj.cx + toff, y - obj.cy + toff,
                           ch);
  };

  // Reference side: paste at the footprint, overwrite flow with the object
  // motion.
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double dx = j - obj.cx, dy = i - obj.cy;
      if (dx * dx + dy * dy > r2) continue;
      for (int k = 0; k < c; ++k) triplet.ref.at(i, j, k) = tex_at(j, i, k);
      double tx, ty;
      affine_apply(obj.affine, j, i, tx, ty);
      triplet.flow.at(i, j, 0) = tx - j;
      triplet.flow.at(i, j, 1) = ty - i;
      triplet.valid[static_cast<size_t>(i) * w + j] = 1;
    }
  // Query side: the footprint moved by the affine motion.
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double px, py;
      affine_apply(inv, j, i, px, py);
      double dx = px - obj.cx, dy = py - obj.cy;
      if (dx * dx + dy * dy > r2) continue;
      for (int k = 0; k < c; ++k) triplet.query.at(i, j, k) = tex_at(px, py, k);
    }
}

MovingObject sample_moving_object(const ObjectSpec& spec, int width,
                                  int height, int channels, Rng& rng) {
  MovingObject obj;
  obj.radius = uniform(rng, spec.radius_min, spec.radius_max);
  // Keep both footprints inside with a margin covering the motion.
  double margin = obj.radius * (1.0 + spec.scale_jitter) + spec.translation_px +
                  2.0;
  obj.cx = uniform(rng, margin, width - 1.0 - margin);
  obj.cy = uniform(rng, margin, height - 1.0 - margin);
  double ang = uniform(rng, -spec.rot_deg, spec.rot_deg) * M_PI / 180.0;
  double sc = 1.0 + uniform(rng, -spec.scale_jitter, spec.scale_jitter);
  double tx = uniform(rng, -spec.translation_px, spec.translation_px);
  double ty = uniform(rng, -spec.translation_px, spec.translation_px);
  // Rotation/scale about the object center plus translation.
  double ca = sc * std::cos(ang), sa = sc * std::sin(ang);
  obj.affine[0] = ca;
  obj.affine[1] = -sa;
  obj.affine[3] = sa;
  obj.affine[4] = ca;
  obj.affine[2] = obj.cx - (ca * obj.cx - sa * obj.cy) + tx;
  obj.affine[5] = obj.cy - (sa * obj.cx + ca * obj.cy) + ty;
  int side = 2 * static_cast<int>(std::ceil(obj.radius)) + 1;
  obj.texture = make_texture(side, side, channels, rng);
  return obj;
}

Field make_texture(int height, int width, int channels, Rng& rng,
                   int flat_patches) {
  Field img(height, width, channels);
  for (int g : {4, 8, 16, 32}) {
    int gh = std::max(2, height / g), gw = std::max(2, width / g);
    Field coarse(gh, gw, channels);
    for (double& x : coarse.v) x = uniform(rng, 0.0, 1.0);
    Field up = resize_bilinear(coarse, height, width);
    double wgt = static_cast<double>(g) / (4 + 8 + 16 + 32);
    for (size_t k = 0; k < img.v.size(); ++k) img.v[k] += wgt * up.v[k];
  }
  for (int p = 0; p < flat_patches; ++p) {
    double cx = uniform(rng, 0.0, width - 1.0);
    double cy = uniform(rng, 0.0, height - 1.0);
    double ax = uniform(rng, width * 0.08, width * 0.25);
    double ay = uniform(rng, height * 0.08, height * 0.25);
    double color[8];
    for (int k = 0; k < channels && k < 8; ++k) color[k] = uniform(rng, 0.1, 0.9);
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) {
        double dx = (j - cx) / ax, dy = (i - cy) / ay;
        if (dx * dx + dy * dy <= 1.0)
          for (int k = 0; k < channels; ++k) img.at(i, j, k) = color[k % 8];
      }
  }
  for (double& x : img.v) x = std::clamp(x, 0.0, 1.0);
  return img;
}

SampleTriplet generate_triplet(const DatagenSpec& spec, uint64_t master_seed,
                               uint64_t index) {
  Rng rng(derive_seed(master_seed, index));
  Field query = make_texture(spec.height, spec.width, spec.channels, rng,
                             spec.flat_patches);
  BaseTransform base;
  if (uniform(rng, 0.0, 1.0) < spec.grid_prob)
    base = sample_grid_transform(spec.grid, spec.width, spec.height, rng);
  else
    base = sample_homography(spec.homography, spec.width, spec.height, rng);

  Field base_flow = base.dense_flow(spec.height, spec.width);
  Field clean_ref = warp_bilinear(query, base_flow);

  Field eps(spec.height, spec.width, 2);
  if (spec.perturbations) {
    Field e = elastic_field(spec.pert.elastic, spec.height, spec.width, rng);
    auto masks = perturbation_masks(spec.pert.masks, spec.height, spec.width,
                                    rng);
    Field msum(spec.height, spec.width, 1);
    for (const Field& s : masks)
      for (size_t k = 0; k < msum.v.size(); ++k) msum.v[k] += s.v[k];
    for (int i = 0; i < spec.height; ++i)
      for (int j = 0; j < spec.width; ++j)
        for (int c = 0; c < 2; ++c) {
          double val = e.at(i, j, c) * msum.at(i, j, 0);
          eps.at(i, j, c) =
              std::clamp(val, -spec.pert.clamp_abs, spec.pert.clamp_abs);
        }
  }
  SampleTriplet t = compose_perturbed(base, eps, clean_ref, query);

  if (spec.object.prob > 0.0 && uniform(rng, 0.0, 1.0) < spec.object.prob) {
    MovingObject obj = sample_moving_object(spec.object, spec.width,
                                            spec.height, spec.channels, rng);
    add_moving_object(t, obj);
  }
  return t;
}

}  // namespace pdm
