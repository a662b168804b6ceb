#include <cmath>

#include "doctest.h"
#include "pdm/geometry.hpp"
#include "pdm/rng.hpp"

using namespace pdm;

namespace {

// Random projective transform close enough to affine to stay well-behaved
// on a [0, extent] domain.
Homography random_homography(Rng& rng, double extent = 100.0) {
  Homography h;
  h.m[0] = uniform(rng, 0.7, 1.3);
  h.m[1] = uniform(rng, -0.3, 0.3);
  h.m[2] = uniform(rng, -0.2, 0.2) * extent;
  h.m[3] = uniform(rng, -0.3, 0.3);
  h.m[4] = uniform(rng, 0.7, 1.3);
  h.m[5] = uniform(rng, -0.2, 0.2) * extent;
  h.m[6] = uniform(rng, -0.3, 0.3) / extent;
  h.m[7] = uniform(rng, -0.3, 0.3) / extent;
  h.m[8] = 1.0;
  return h;
}

MatchSet planted_matches(const Homography& h, int n, Rng& rng,
                         double extent = 100.0) {
  MatchSet ms;
  while (static_cast<int>(ms.size()) < n) {
    Match m;
    m.rx = uniform(rng, 0.0, extent);
    m.ry = uniform(rng, 0.0, extent);
    bool ok;
    h.apply(m.rx, m.ry, m.qx, m.qy, ok);
    if (ok) ms.push_back(m);
  }
  return ms;
}

double max_corner_error(const Homography& got, const Homography& want,
                        double extent = 100.0) {
  double corners[4][2] = {
      {0, 0}, {extent, 0}, {extent, extent}, {0, extent}};
  double worst = 0.0;
  for (auto& c : corners) {
    double gx, gy, wx, wy;
    bool ok1, ok2;
    got.apply(c[0], c[1], gx, gy, ok1);
    want.apply(c[0], c[1], wx, wy, ok2);
    if (!ok1 || !ok2) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::hypot(gx - wx, gy - wy));
  }
  return worst;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("DLT on identity corners returns the identity") {
  MatchSet ms{{0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 1, 1}, {0, 1, 0, 1}};
  Homography h = fit_homography_dlt(ms);
  Homography id;
  for (int k = 0; k < 9; ++k) CHECK(std::abs(h.m[k] - id.m[k]) < 1e-10);
}

TEST_CASE("DLT is exact on noise-free planted transforms") {
  Rng rng(301);
  for (int trial = 0; trial < 100; ++trial) {
    Homography want = random_homography(rng);
    int n = trial == 0 ? 12 : uniform_int(rng, 4, 30);
    MatchSet ms = planted_matches(want, n, rng);
    Homography got = fit_homography_dlt(ms);
    double worst = 0.0;
    for (const Match& m : ms) {
      double x, y;
      bool ok;
      got.apply(m.rx, m.ry, x, y, ok);
      REQUIRE(ok);
      worst = std::max(worst, std::hypot(x - m.qx, y - m.qy));
    }
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("DLT rejects too few and collinear points") {
  MatchSet three{{0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 1, 1}};
  CHECK_THROWS_AS(fit_homography_dlt(three), std::invalid_argument);
  // All points on one line.
  MatchSet line;
  for (int k = 0; k < 8; ++k)
    line.push_back({static_cast<double>(k), 2.0 * k, static_cast<double>(k),
                    2.0 * k});
  CHECK_THROWS_AS(fit_homography_dlt(line), std::invalid_argument);
}

TEST_CASE("RANSAC recovers a planted transform at 30% outliers") {
  int recovered = 0, recall_ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(400 + trial);
    Homography want = random_homography(rng);
    MatchSet ms = planted_matches(want, 700, rng);
    std::vector<uint8_t> truth(1000, 1);
    for (int k = 700; k < 1000; ++k) {
      Match m;
      m.rx = uniform(rng, 0.0, 100.0);
      m.ry = uniform(rng, 0.0, 100.0);
      m.qx = uniform(rng, 0.0, 100.0);
      m.qy = uniform(rng, 0.0, 100.0);
      ms.push_back(m);
      truth[k] = 0;
    }
    auto res = ransac_homography(ms, 1.0, 1000, 900 + trial);
    REQUIRE(res.ok);
    if (max_corner_error(res.h, want) < 0.5) ++recovered;
    int hits = 0;
    for (int k = 0; k < 700; ++k) hits += res.inliers[k];
    if (hits > 0.95 * 700) ++recall_ok;
  }
  CHECK(recovered >= 19);
  CHECK(recall_ok >= 19);
}

TEST_CASE("RANSAC is deterministic and self-consistent") {
  Rng rng(303);
  Homography want = random_homography(rng);
  MatchSet ms = planted_matches(want, 200, rng);
  for (int k = 0; k < 60; ++k) {
    Match m;
    m.rx = uniform(rng, 0.0, 100.0);
    m.ry = uniform(rng, 0.0, 100.0);
    m.qx = uniform(rng, 0.0, 100.0);
    m.qy = uniform(rng, 0.0, 100.0);
    ms.push_back(m);
  }
  auto a = ransac_homography(ms, 1.0, 500, 42);
  auto b = ransac_homography(ms, 1.0, 500, 42);
  REQUIRE(a.ok);
  for (int k = 0; k < 9; ++k) CHECK(a.h.m[k] == b.h.m[k]);
  CHECK(a.inliers == b.inliers);
  CHECK(a.inlier_ratio == b.inlier_ratio);

  // Mask consistency with the returned model at the stated threshold.
  Homography hinv = a.h.inverse();
  for (size_t k = 0; k < ms.size(); ++k) {
    double fx, fy, bx, by;
    bool ok1, ok2;
    a.h.apply(ms[k].rx, ms[k].ry, fx, fy, ok1);
    hinv.apply(ms[k].qx, ms[k].qy, bx, by, ok2);
    REQUIRE(ok1);
    REQUIRE(ok2);
    double r = std::max(std::hypot(fx - ms[k].qx, fy - ms[k].qy),
                        std::hypot(bx - ms[k].rx, by - ms[k].ry));
    CHECK(static_cast<bool>(a.inliers[k]) == (r <= 1.0));
  }
}

TEST_CASE("RANSAC on exact matches reports full consensus") {
  Rng rng(307);
  Homography want = random_homography(rng);
  MatchSet ms = planted_matches(want, 50, rng);
  auto res = ransac_homography(ms, 1.0, 200, 7);
  REQUIRE(res.ok);
  CHECK(res.inlier_ratio == 1.0);
  CHECK(max_corner_error(res.h, want) < 1e-6);
}

TEST_CASE("flow_from_homography basics") {
  SUBCASE("identity gives zero flow") {
    auto r = flow_from_homography(Homography::identity(), 6, 8);
    for (double x : r.flow.v) CHECK(x == 0.0);
    for (uint8_t b : r.valid) CHECK(b == 1);
  }
  SUBCASE("pure translation gives constant flow") {
    Homography h;
    h.m[2] = 3.5;
    h.m[5] = -1.25;
    auto r = flow_from_homography(h, 5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        CHECK(r.flow.at(i, j, 0) == doctest::Approx(3.5).epsilon(1e-15));
        CHECK(r.flow.at(i, j, 1) == doctest::Approx(-1.25).epsilon(1e-15));
      }
  }
  SUBCASE("points mapping to infinity are invalid") {
    Homography h;
    h.m[6] = 1.0;
    h.m[8] = -2.0;  // denominator x - 2 vanishes at x = 2
    auto r = flow_from_homography(h, 3, 5);
    for (int i = 0; i < 3; ++i) {
      CHECK(r.valid[i * 5 + 2] == 0);
      CHECK(r.valid[i * 5 + 0] == 1);
    }
  }
}

TEST_CASE("compose_flows with zero fine flow equals flow_from_homography") {
  Rng rng(311);
  Homography h = random_homography(rng, 10.0);
  auto direct = flow_from_homography(h, 8, 8);
  auto composed = compose_flows(h, Field(8, 8, 2));
  for (size_t k = 0; k < direct.flow.v.size(); ++k)
    CHECK(composed.flow.v[k] == direct.flow.v[k]);
}

TEST_CASE("composition round-trips through the inverse") {
  Rng rng(313);
  Homography h = random_homography(rng, 16.0);
  auto fine = flow_from_homography(h.inverse(), 16, 16);
  auto composed = compose_flows(h, fine.flow);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      size_t px = static_cast<size_t>(i) * 16 + j;
      if (!fine.valid[px] || !composed.valid[px]) continue;
      CHECK(std::abs(composed.flow.v[px * 2 + 0]) < 1e-6);
      CHECK(std::abs(composed.flow.v[px * 2 + 1]) < 1e-6);
    }

  // And against a second transform: fine = flow(H^-1 T) composes to flow(T).
  Homography t = random_homography(rng, 16.0);
  auto fine2 = flow_from_homography(h.inverse() * t, 16, 16);
  auto composed2 = compose_flows(h, fine2.flow);
  auto want = flow_from_homography(t, 16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      size_t px = static_cast<size_t>(i) * 16 + j;
      if (!fine2.valid[px] || !composed2.valid[px] || !want.valid[px]) continue;
      CHECK(std::abs(composed2.flow.v[px * 2 + 0] - want.flow.v[px * 2 + 0]) <
            1e-6);
      CHECK(std::abs(composed2.flow.v[px * 2 + 1] - want.flow.v[px * 2 + 1]) <
            1e-6);
    }
}

TEST_CASE("select_matches thresholds and scales") {
  Field flow(4, 4, 2), conf(4, 4, 1, 0.5);
  SUBCASE("threshold at or above 1 empties the set") {
    CHECK(select_matches(flow, conf, 1.0, 4, 4).empty());
  }
  SUBCASE("uniform confidence above threshold selects every pixel") {
    auto ms = select_matches(flow, conf, 0.4, 4, 4);
    CHECK(ms.size() == 16);
  }
  SUBCASE("coordinates are scaled to the requested resolution") {
    flow.at(1, 2, 0) = 0.5;  // query x = 2.5 at flow scale
    auto ms = select_matches(flow, conf, 0.4, 16, 8);
    bool found = false;
    for (const Match& m : ms)
      if (m.ry == doctest::Approx(2.0) && m.rx == doctest::Approx(8.0)) {
        CHECK(m.qx == doctest::Approx(10.0));  // (2 + 0.5) * 4
        found = true;
      }
    CHECK(found);
  }
  SUBCASE("out-of-bounds targets are dropped") {
    flow.at(0, 0, 0) = -5.0;
    auto ms = select_matches(flow, conf, 0.4, 4, 4);
    CHECK(ms.size() == 15);
  }
}

}  // TEST_SUITE
