#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pdm/image.hpp"
#include "pdm/reference.hpp"
#include "pdm/rng.hpp"

using namespace pdm;

namespace {

Field random_field(int h, int w, int c, Rng& rng, double lo = 0.0,
                   double hi = 1.0) {
  Field f(h, w, c);
  for (auto& x : f.v) x = uniform(rng, lo, hi);
  return f;
}

}  // namespace

TEST_SUITE("image") {

TEST_CASE("bilinear sampling preserves constants exactly") {
  Field img(6, 7, 2, 0.73);
  Rng rng(401);
  for (int t = 0; t < 200; ++t) {
    double x = uniform(rng, 0.0, 6.0);
    double y = uniform(rng, 0.0, 5.0);
    CHECK(sample_bilinear(img, x, y, 0) == 0.73);
    CHECK(sample_bilinear(img, x, y, 1) == 0.73);
  }
  // Far outside: zero padding.
  CHECK(sample_bilinear(img, -5.0, 2.0, 0) == 0.0);
  CHECK(sample_bilinear(img, 2.0, 100.0, 0) == 0.0);
}

TEST_CASE("warp by zero flow is the identity bit-for-bit") {
  Rng rng(403);
  Field img = random_field(9, 11, 3, rng);
  Field flow(9, 11, 2);
  Field out = warp_bilinear(img, flow);
  for (size_t k = 0; k < img.v.size(); ++k) CHECK(out.v[k] == img.v[k]);
}

TEST_CASE("warp agrees with the scalar reference warp") {
  Rng rng(407);
  Field img = random_field(8, 8, 2, rng);
  Field flow = random_field(8, 8, 2, rng, -2.5, 2.5);
  Field a = warp_bilinear(img, flow);
  Field b = ref::warp_bilinear(img, flow);
  for (size_t k = 0; k < a.v.size(); ++k)
    CHECK(std::abs(a.v[k] - b.v[k]) < 1e-12);
}

TEST_CASE("warp gradients match finite differences") {
  Rng rng(409);
  Field img = random_field(6, 6, 2, rng);
  Field flow = random_field(6, 6, 2, rng, -1.3, 1.3);
  Field proj = random_field(6, 6, 2, rng, -1.0, 1.0);

  auto eval = [&] {
    Field out = warp_bilinear(img, flow);
    double s = 0.0;
    for (size_t k = 0; k < out.v.size(); ++k) s += out.v[k] * proj.v[k];
    return s;
  };
  Field gimg(6, 6, 2), gflow(6, 6, 2);
  warp_bilinear_backward(img, flow, proj, gimg, gflow);
  for (size_t k = 0; k < img.v.size(); ++k)
    CHECK(oracles::rel_err(gimg.v[k], oracles::central_diff(eval, &img.v[k])) <
          1e-4);
  for (size_t k = 0; k < flow.v.size(); ++k)
    CHECK(oracles::rel_err(gflow.v[k],
                           oracles::central_diff(eval, &flow.v[k])) < 1e-4);
}

TEST_CASE("resize preserves constants and hits exact 2x positions") {
  Field img(4, 4, 1, 0.4);
  Field up = resize_bilinear(img, 8, 8);
  for (double x : up.v) CHECK(x == doctest::Approx(0.4).epsilon(1e-15));

  Rng rng(411);
  Field r = random_field(4, 4, 1, rng);
  Field u2 = resize_bilinear(r, 8, 8);
  // With half-pixel centers, output (2i+.5, 2j+.5)/2-.5 = (i+0.25 - 0.5)...
  // check a known interior sample: out(3,3) blends in(1,1)..in(2,2) with
  // weights 0.25/0.75.
  double want = 0.75 * (0.75 * r.at(1, 1, 0) + 0.25 * r.at(2, 1, 0)) +
                0.25 * (0.75 * r.at(1, 2, 0) + 0.25 * r.at(2, 2, 0));
  CHECK(u2.at(3, 3, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("resize backward is the transpose of resize") {
  Rng rng(413);
  // Adjoint identity <A x, y> == <x, A^T y> for random x, y.
  Field x = random_field(5, 7, 2, rng, -1.0, 1.0);
  Field y = random_field(9, 11, 2, rng, -1.0, 1.0);
  Field ax = resize_bilinear(x, 9, 11);
  Field aty = resize_bilinear_backward(y, 5, 7);
  double lhs = 0.0, rhs = 0.0;
  for (size_t k = 0; k < ax.v.size(); ++k) lhs += ax.v[k] * y.v[k];
  for (size_t k = 0; k < x.v.size(); ++k) rhs += x.v[k] * aty.v[k];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("area downsample is the 2x2 block mean") {
  Rng rng(417);
  Field img = random_field(6, 4, 2, rng);
  Field d = area_downsample2x(img);
  CHECK(d.h == 3);
  CHECK(d.w == 2);
  CHECK(d.at(1, 1, 0) ==
        doctest::Approx(0.25 * (img.at(2, 2, 0) + img.at(2, 3, 0) +
                                img.at(3, 2, 0) + img.at(3, 3, 0))));
  CHECK_THROWS_AS(area_downsample2x(Field(5, 4, 1)), std::invalid_argument);
}

TEST_CASE("gaussian blur preserves constants and smooths") {
  Field img(16, 16, 1, 0.6);
  Field b = gaussian_blur(img, 2.0);
  for (double x : b.v) CHECK(x == doctest::Approx(0.6).epsilon(1e-12));

  Rng rng(419);
  Field noise = random_field(32, 32, 1, rng, -1.0, 1.0);
  auto grad_mag = [](const Field& f) {
    double s = 0.0;
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j + 1 < f.w; ++j)
        s += std::abs(f.at(i, j + 1, 0) - f.at(i, j, 0));
    return s;
  };
  Field b1 = gaussian_blur(noise, 1.0);
  Field b3 = gaussian_blur(noise, 3.0);
  CHECK(grad_mag(b1) < grad_mag(noise));
  CHECK(grad_mag(b3) < grad_mag(b1));
}

}  // TEST_SUITE
