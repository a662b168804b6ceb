#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pdm/errors.hpp"
#include "pdm/image.hpp"
#include "pdm/network.hpp"

using namespace pdm;

namespace {

MatcherConfig miniature_config() {
  MatcherConfig cfg;
  cfg.input_size = 8;
  cfg.in_channels = 2;
  cfg.feat_c1 = 3;
  cfg.feat_c2 = 4;
  cfg.unc_c = 4;
  cfg.unc_out = 3;
  cfg.local_radius = 1;
  cfg.constraint = ConstraintSpec::default_two(8.0);
  return cfg;
}

ImagePair random_pair(int size, int channels, Rng& rng) {
  ImagePair p;
  p.ref = Field(size, size, channels);
  p.query = Field(size, size, channels);
  for (auto& x : p.ref.v) x = uniform(rng, 0.0, 1.0);
  for (auto& x : p.query.v) x = uniform(rng, 0.0, 1.0);
  return p;
}

GroundTruthFlow random_gt(int size, Rng& rng) {
  Field f(size, size, 2);
  for (auto& x : f.v) x = uniform(rng, -2.0, 2.0);
  std::vector<uint8_t> valid(static_cast<size_t>(size) * size, 1);
  for (auto& b : valid) b = uniform(rng, 0.0, 1.0) < 0.9;
  valid[0] = 1;
  return {std::move(f), std::move(valid)};
}

// Zero every weight reading the given input-channel range of a stack's
// first conv layer.
void zero_input_channels(ConvStack& st, int from, int to) {
  ConvLayer& l = st.layers[0];
  for (int oc = 0; oc < l.out_c; ++oc)
    for (int ki = 0; ki < l.kh; ++ki)
      for (int kj = 0; kj < l.kw; ++kj)
        for (int ic = from; ic < to; ++ic)
          l.w[((static_cast<size_t>(oc) * l.kh + ki) * l.kw + kj) * l.in_c +
              ic] = 0.0;
}

void zero_stack(ConvStack& st) {
  for (auto& l : st.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("outputs satisfy mixture invariants for arbitrary weights") {
  Rng rng(701);
  for (auto arch : {UncertaintyArch::kFull, UncertaintyArch::kCorrOnly,
                    UncertaintyArch::kCommon}) {
    MatcherConfig cfg = miniature_config();
    cfg.arch = arch;
    MatcherNet net = MatcherNet::create(cfg, 7);
    ImagePair pair = random_pair(8, 2, rng);
    auto outs = net.forward(pair);
    REQUIRE(outs.size() == 2);
    CHECK(outs[0].flow.h == 2);
    CHECK(outs[1].flow.h == 4);
    for (const auto& out : outs) {
      REQUIRE(out.params.has_value());
      CHECK_NOTHROW(out.params->check_invariants(1e-9));
    }
  }
}

TEST_CASE("forward rejects wrong extents") {
  MatcherConfig cfg = miniature_config();
  MatcherNet net = MatcherNet::create(cfg, 3);
  Rng rng(703);
  ImagePair bad = random_pair(6, 2, rng);  // not divisible by 4
  CHECK_THROWS_AS(net.forward(bad), std::invalid_argument);
  ImagePair wrong = random_pair(12, 2, rng);  // divisible but not configured
  CHECK_THROWS_AS(net.forward(wrong), std::invalid_argument);
}

TEST_CASE("full network gradients match finite differences") {
  Rng rng(709);
  MatcherConfig cfg = miniature_config();
  MatcherNet net = MatcherNet::create(cfg, 11);
  ImagePair pair = random_pair(8, 2, rng);
  GroundTruthFlow gt = random_gt(8, rng);
  TrainConfig tc;
  tc.gamma = {0.32, 0.08};
  tc.weight_decay = 4e-4;

  auto eval = [&] {
    auto outs = net.forward(pair);
    return multiscale_loss(outs, gt, tc, cfg.kind, &net).total();
  };

  FwdTrace tr;
  auto outs = net.forward(pair, &tr);
  MultiscaleLoss ml = multiscale_loss(outs, gt, tc, cfg.kind, &net);
  MatcherNet grads = net.backward(tr, ml.level_grads);
  // Penalty gradient is eta * theta (decoupled in training, explicit here).
  grads.add_scaled(net, tc.weight_decay);

  auto prefs = net.param_refs();
  auto grefs = grads.param_refs();
  REQUIRE(prefs.size() == grefs.size());
  int checked = 0;
  double worst = 0.0;
  for (size_t p = 0; p < prefs.size(); ++p) {
    auto& w = *prefs[p].second;
    auto& g = *grefs[p].second;
    REQUIRE(w.size() == g.size());
    // Seeded subset per tensor keeps the run fast while covering every
    // parameter group.
    size_t stride = std::max<size_t>(1, w.size() / 25);
    size_t start = rng() % stride;
    for (size_t k = start; k < w.size(); k += stride) {
      double fd = oracles::central_diff(eval, &w[k]);
      worst = std::max(worst, oracles::rel_err(g[k], fd));
      ++checked;
    }
  }
  CHECK(checked > 300);
  CHECK(worst < 1e-3);
}

TEST_CASE("gradient check covers the common and corr-only decoders") {
  Rng rng(710);
  for (auto arch : {UncertaintyArch::kCommon, UncertaintyArch::kCorrOnly}) {
    MatcherConfig cfg = miniature_config();
    cfg.arch = arch;
    MatcherNet net = MatcherNet::create(cfg, 13);
    ImagePair pair = random_pair(8, 2, rng);
    GroundTruthFlow gt = random_gt(8, rng);
    TrainConfig tc;

    auto eval = [&] {
      auto outs = net.forward(pair);
      return multiscale_loss(outs, gt, tc, cfg.kind).data_loss;
    };
    FwdTrace tr;
    auto outs = net.forward(pair, &tr);
    MultiscaleLoss ml = multiscale_loss(outs, gt, tc, cfg.kind);
    MatcherNet grads = net.backward(tr, ml.level_grads);
    auto prefs = net.param_refs();
    auto grefs = grads.param_refs();
    double worst = 0.0;
    for (size_t p = 0; p < prefs.size(); ++p) {
      auto& w = *prefs[p].second;
      auto& g = *grefs[p].second;
      size_t stride = std::max<size_t>(1, w.size() / 10);
      for (size_t k = rng() % stride; k < w.size(); k += stride)
        worst = std::max(worst,
                         oracles::rel_err(g[k], oracles::central_diff(eval, &w[k])));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("planted shift through hand-set features wins the argmax") {
  MatcherConfig cfg;
  cfg.input_size = 64;
  cfg.in_channels = 3;
  cfg.feat_c1 = 3;
  cfg.feat_c2 = 3;
  cfg.unc_c = 4;
  cfg.unc_out = 3;
  MatcherNet net = MatcherNet::create(cfg, 17);

  // Identity-ish extractor: center-tap deltas per channel.
  for (int s = 0; s < 3; ++s) {
    ConvLayer& l = net.feat[s].layers[0];
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
    for (int c = 0; c < 3; ++c)
      l.w[((static_cast<size_t>(c) * 3 + 1) * 3 + 1) * 3 + c] = 1.0;
  }
  // Freeze the coarse flow to zero so the fine level sees unwarped features.
  zero_stack(net.dec1_head);

  // Unit-norm positive feature vectors survive the ReLU and make the self
  // product maximal.
  Rng rng(711);
  Field ref(64, 64, 3);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      double v[3], n = 0.0;
      for (auto& x : v) {
        x = uniform(rng, 0.05, 1.0);
      }
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      for (int c = 0; c < 3; ++c) ref.at(i, j, c) = v[c] / n;
    }
  // Query shifted right by 4 full-resolution pixels: matches displace +4.
  Field query(64, 64, 3);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int c = 0; c < 3; ++c)
        query.at(i, j, c) = ref.at(i, (j - 4 + 64) % 64, c);

  FwdTrace tr;
  net.forward({query, ref}, &tr);
  // At the fine level (stride 2) the planted displacement is (0, +2).
  const auto& cv = tr.corr2;
  int d = cv.dk;
  int hits = 0, total = 0;
  for (int i = 6; i < 26; ++i)
    for (int j = 6; j < 26; ++j) {
      int best = 0;
      for (int k = 1; k < d * d; ++k)
        if (cv.vals.at(i, j, k) > cv.vals.at(i, j, best)) best = k;
      int ky = best / d - cfg.local_radius;
      int kx = best % d - cfg.local_radius;
      hits += ky == 0 && kx == 2;
      ++total;
    }
  CHECK(hits == total);
}

TEST_CASE("propagation wiring can be severed") {
  MatcherConfig cfg = miniature_config();
  cfg.arch = UncertaintyArch::kFull;
  cfg.propagate_uncertainty = true;
  MatcherNet a = MatcherNet::create(cfg, 19);

  // Zero the coarse flow head so up_flow == 0 in both nets, and zero every
  // fine-level weight reading the propagated channels.
  zero_stack(a.dec1_head);
  int d = 2 * cfg.local_radius + 1;
  int m = cfg.m();
  // dec2 input: [corr (d*d), up_flow (2), up_alpha (m), up_h (m)].
  zero_input_channels(a.dec2_body, d * d + 2, d * d + 2 + 2 * m);
  // q2 input: [feats (16), u (n), up_flow (2), up_alpha (m), up_h (m)].
  zero_input_channels(a.q2, 16 + cfg.unc_out + 2, 16 + cfg.unc_out + 2 + 2 * m);

  // Net b differs only in the coarse-level uncertainty path.
  MatcherNet b = a;
  Rng rng(23);
  b.q1.init_uniform(rng);
  b.dec1_body.init_uniform(rng);

  Rng prng(713);
  ImagePair pair = random_pair(8, 2, prng);
  auto oa = a.forward(pair);
  auto ob = b.forward(pair);
  // Coarse outputs differ...
  double diff1 = 0.0;
  for (size_t k = 0; k < oa[0].alpha_raw.v.size(); ++k)
    diff1 += std::abs(oa[0].alpha_raw.v[k] - ob[0].alpha_raw.v[k]);
  CHECK(diff1 > 1e-6);
  // ...but the fine level is bitwise independent of them.
  CHECK(oa[1].flow.v == ob[1].flow.v);
  CHECK(oa[1].alpha_raw.v == ob[1].alpha_raw.v);
  CHECK(oa[1].h_raw.v == ob[1].h_raw.v);
}

TEST_CASE("multiscale loss reduces to the single-level objective") {
  Rng rng(719);
  MatcherConfig cfg = miniature_config();
  MatcherNet net = MatcherNet::create(cfg, 29);
  ImagePair pair = random_pair(8, 2, rng);
  GroundTruthFlow gt = random_gt(8, rng);
  auto outs = net.forward(pair);

  TrainConfig tc;
  tc.gamma = {1.0, 0.0};
  tc.weight_decay = 0.0;
  MultiscaleLoss ml = multiscale_loss(outs, gt, tc, cfg.kind);
  GroundTruthFlow gt1 = downsample_gt2x(downsample_gt2x(gt));
  NllResult direct = nll_loss(*outs[0].params, gt1, false);
  CHECK(ml.data_loss == doctest::Approx(direct.loss).epsilon(1e-14));
  CHECK(ml.penalty == 0.0);

  TrainConfig defaults;
  CHECK(defaults.gamma == std::vector<double>{0.32, 0.08});
  CHECK(defaults.weight_decay == doctest::Approx(4e-4));

  TrainConfig bad;
  bad.gamma = {0.0, 0.0};
  CHECK_THROWS_AS(multiscale_loss(outs, gt, bad, cfg.kind),
                  std::invalid_argument);
}

TEST_CASE("levels without valid pixels contribute zero with a count") {
  Rng rng(723);
  MatcherConfig cfg = miniature_config();
  MatcherNet net = MatcherNet::create(cfg, 31);
  ImagePair pair = random_pair(8, 2, rng);
  auto outs = net.forward(pair);
  GroundTruthFlow gt = random_gt(8, rng);
  std::fill(gt.valid.begin(), gt.valid.end(), 0);
  TrainConfig tc;
  MultiscaleLoss ml = multiscale_loss(outs, gt, tc, cfg.kind);
  CHECK(ml.data_loss == 0.0);
  CHECK(ml.skipped_levels == 2);
}

TEST_CASE("optimizer dynamics: zero lr and decay-only shrinkage") {
  MatcherConfig cfg = miniature_config();
  TrainConfig tc;
  tc.weight_decay = 0.01;

  SUBCASE("lr = 0 leaves weights unchanged bit-for-bit") {
    MatcherNet net = MatcherNet::create(cfg, 37);
    MatcherNet before = net;
    Optimizer opt(net, tc);
    Rng rng(41);
    MatcherNet grads = net.zeros_like();
    for (auto& [name, vec] : grads.param_refs())
      for (double& x : *vec) x = uniform(rng, -1.0, 1.0);
    opt.step(grads, 0.0);
    auto a = net.param_refs();
    auto b = before.param_refs();
    for (size_t p = 0; p < a.size(); ++p) CHECK(*a[p].second == *b[p].second);
  }

  SUBCASE("zero gradients shrink weights geometrically") {
    for (const char* optname : {"adamw", "sgd"}) {
      MatcherNet net = MatcherNet::create(cfg, 37);
      TrainConfig tco = tc;
      tco.optimizer = optname;
      double w0 = (*net.param_refs()[0].second)[0];
      Optimizer opt(net, tco);
      MatcherNet zeros = net.zeros_like();
      double lr = 0.1;
      for (int t = 1; t <= 5; ++t) {
        opt.step(zeros, lr);
        double expect = w0 * std::pow(1.0 - lr * tco.weight_decay, t);
        double got = (*net.param_refs()[0].second)[0];
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("training is deterministic and aborts on non-finite loss") {
  MatcherConfig cfg = miniature_config();
  cfg.input_size = 16;
  DatagenSpec ds;
  ds.height = ds.width = 16;
  ds.channels = 2;
  ds.homography.corner_px = 1.5;
  ds.homography.translation_px = 1.0;
  ds.pert.masks.count = 1;
  ds.pert.elastic.amplitude = 0.5;
  MemoryDataset data;
  for (int i = 0; i < 6; ++i) data.items.push_back(generate_triplet(ds, 5, i));

  TrainConfig tc;
  tc.iterations = 4;
  tc.batch = 2;
  tc.lr = 1e-3;
  tc.seed = 99;

  MatcherNet n1 = MatcherNet::create(cfg, 43);
  MatcherNet n2 = MatcherNet::create(cfg, 43);
  auto r1 = train(n1, data, tc);
  auto r2 = train(n2, data, tc);
  CHECK(r1.loss_curve == r2.loss_curve);
  auto a = n1.param_refs();
  auto b = n2.param_refs();
  for (size_t p = 0; p < a.size(); ++p) CHECK(*a[p].second == *b[p].second);

  // A poisoned sample produces the divergence diagnostic.
  MemoryDataset bad = data;
  bad.items[1].flow.at(0, 0, 0) = std::nan("");
  MatcherNet n3 = MatcherNet::create(cfg, 43);
  TrainConfig tc3 = tc;
  tc3.batch = 6;  // guarantees the poisoned sample appears in batch 0
  CHECK_THROWS_AS(train(n3, bad, tc3), NumericalError);
}

TEST_CASE("short training run halves the loss and fits identity pairs") {
  MatcherConfig cfg;  // full-size toy configuration
  cfg.constraint = ConstraintSpec::default_two(64.0);
  MatcherNet net = MatcherNet::create(cfg, 51);

  DatagenSpec ds;
  ds.homography.corner_px = 4.0;
  ds.homography.translation_px = 2.0;
  ds.pert.elastic.amplitude = 1.0;
  MemoryDataset data;
  for (int i = 0; i < 32; ++i) data.items.push_back(generate_triplet(ds, 11, i));

  TrainConfig tc;
  tc.iterations = 200;
  tc.batch = 4;
  tc.lr = 4e-3;
  tc.grad_clip = 5.0;
  tc.lr_drop_iters = {150};
  tc.seed = 3;

  auto res = train(net, data, tc);
  REQUIRE(res.loss_curve.size() == 200);
  double initial = res.loss_curve[0];
  double final_avg = 0.0;
  for (int k = 190; k < 200; ++k) final_avg += res.loss_curve[k];
  final_avg /= 10.0;
  CHECK(final_avg < 0.5 * initial);

  // A converged toy net maps identical pairs to (nearly) zero flow.
  Rng rng(53);
  std::vector<double> norms;
  for (int t = 0; t < 4; ++t) {
    Field img = make_texture(64, 64, 3, rng, 2);
    auto outs = net.forward({img, img});
    const Field& flow = outs[1].flow;
    for (int i = 4; i < 28; ++i)
      for (int j = 4; j < 28; ++j)
        norms.push_back(std::hypot(flow.at(i, j, 0), flow.at(i, j, 1)));
  }
  std::nth_element(norms.begin(), norms.begin() + norms.size() / 2,
                   norms.end());
  CHECK(norms[norms.size() / 2] < 0.5);
}

TEST_CASE("infer_flow upsamples to the pair resolution") {
  MatcherConfig cfg = miniature_config();
  MatcherNet net = MatcherNet::create(cfg, 57);
  Rng rng(729);
  ImagePair pair = random_pair(20, 2, rng);  // resized internally
  auto r = infer_flow(net, pair, 1.0);
  CHECK(r.flow.h == 20);
  CHECK(r.flow.w == 20);
  CHECK(r.confidence.h == 20);
  for (double c : r.confidence.v) {
    CHECK(c > 0.0);
    CHECK(c < 1.0);
  }
}

}  // TEST_SUITE
