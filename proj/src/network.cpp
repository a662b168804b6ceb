#include "pdm/network.hpp"

#include <algorithm>
#include <cmath>

#include "pdm/errors.hpp"
#include "pdm/image.hpp"

namespace pdm {

namespace {

int dec2_in_channels(const MatcherConfig& cfg) {
  int d = 2 * cfg.local_radius + 1;
  int c = d * d + 2;
  if (cfg.probabilistic() && cfg.propagate_uncertainty) c += 2 * cfg.m();
  return c;
}

// Centered pixel-coordinate channels. The global correlation indexes
// absolute query positions, so decoding it into a displacement needs the
// pixel's own position; two coordinate channels make that mapping
// representable by position-invariant convolutions.
Field coordinate_channels(int h, int w) {
  Field f(h, w, 2);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      f.at(i, j, 0) = j - 0.5 * (w - 1);
      f.at(i, j, 1) = i - 0.5 * (h - 1);
    }
  return f;
}

int q1_in_channels(const MatcherConfig& cfg) {
  return cfg.arch == UncertaintyArch::kFull ? 16 + cfg.unc_out : cfg.unc_out;
}

int q2_in_channels(const MatcherConfig& cfg) {
  int c = cfg.arch == UncertaintyArch::kFull ? 16 + cfg.unc_out : cfg.unc_out;
  if (cfg.arch == UncertaintyArch::kFull && cfg.propagate_uncertainty)
    c += 2 + 2 * cfg.m();
  return c;
}

ConvStack make_decoder_body(int in_c, Rng& rng) {
  ConvStack st;
  st.layers.push_back(ConvLayer::conv(in_c, 32, 3, 1, 1, true));
  st.layers.push_back(ConvLayer::conv(32, 16, 3, 1, 1, true));
  st.init_uniform(rng);
  return st;
}

ConvStack make_decoder_head(int out_c, Rng& rng) {
  ConvStack st;
  st.layers.push_back(ConvLayer::conv(16, out_c, 3, 1, 1, false));
  st.init_uniform(rng);
  return st;
}

Field scaled(const Field& f, double s) {
  Field out = f;
  for (double& x : out.v) x *= s;
  return out;
}

}  // namespace

MatcherNet MatcherNet::create(const MatcherConfig& cfg, uint64_t seed) {
  if (cfg.input_size % 4 != 0)
    throw std::invalid_argument("MatcherNet: input size must divide by 4");
  cfg.constraint.validate();
  MatcherNet net;
  net.cfg = cfg;
  Rng rng(seed);

  net.feat[0].layers.push_back(
      ConvLayer::conv(cfg.in_channels, cfg.feat_c1, 3, 1, 1, true));
  net.feat[0].init_uniform(rng);
  net.feat[1].layers.push_back(
      ConvLayer::conv(cfg.feat_c1, cfg.feat_c2, 3, 2, 1, true));
  net.feat[1].init_uniform(rng);
  net.feat[2].layers.push_back(
      ConvLayer::conv(cfg.feat_c2, cfg.feat_c2, 3, 2, 1, true));
  net.feat[2].init_uniform(rng);

  const int s1 = cfg.coarse_size();
  const bool common = cfg.arch == UncertaintyArch::kCommon;
  const int head1 =
      cfg.probabilistic() && common ? 2 + 2 * cfg.m() : 2;
  net.dec1_body = make_decoder_body(s1 * s1 + 2, rng);
  net.dec1_head = make_decoder_head(head1, rng);
  net.dec2_body = make_decoder_body(dec2_in_channels(cfg), rng);
  net.dec2_head = make_decoder_head(head1, rng);

  if (cfg.probabilistic() && !common) {
    int d = 2 * cfg.local_radius + 1;
    net.unc1 = make_correlation_uncertainty_stack(s1, s1, cfg.unc_c, cfg.unc_c,
                                                  cfg.unc_c, cfg.unc_out, rng);
    net.unc2 = make_correlation_uncertainty_stack(d, d, cfg.unc_c, cfg.unc_c,
                                                  cfg.unc_c, cfg.unc_out, rng);
    net.q1 = make_uncertainty_predictor_stack(q1_in_channels(cfg),
                                              2 * cfg.m(), rng);
    net.q2 = make_uncertainty_predictor_stack(q2_in_channels(cfg),
                                              2 * cfg.m(), rng);
  }
  return net;
}

std::vector<LevelOutput> MatcherNet::forward(const ImagePair& pair,
                                             FwdTrace* trace) const {
  require_same_extent(pair.ref, pair.query, "MatcherNet::forward");
  if (pair.ref.h % 4 != 0 || pair.ref.w % 4 != 0)
    throw std::invalid_argument("MatcherNet::forward: extents not divisible");
  if (pair.ref.h != cfg.input_size || pair.ref.w != cfg.input_size)
    throw std::invalid_argument(
        "MatcherNet::forward: extent differs from the working resolution");

  FwdTrace local;
  FwdTrace& tr = trace ? *trace : local;
  const bool common = cfg.arch == UncertaintyArch::kCommon;
  const bool prob = cfg.probabilistic();
  const int m = cfg.m();

  // Shared feature extractor on both images.
  Field fr = pair.ref, fq = pair.query;
  for (int k = 0; k < 3; ++k) {
    fr = feat[k].forward(fr, &tr.feat_r[k]);
    fq = feat[k].forward(fq, &tr.feat_q[k]);
  }
  const Field& f1r = tr.feat_r[2].x.back();
  const Field& f1q = tr.feat_q[2].x.back();
  const Field& f2r = tr.feat_r[1].x.back();
  const Field& f2q = tr.feat_q[1].x.back();

  std::vector<LevelOutput> outs(2);

  // Coarse level: global correlation + mapping decoder.
  tr.corr1 = global_correlation(f1r, f1q);
  {
    Field coords = coordinate_channels(f1r.h, f1r.w);
    tr.dec1_in = concat_channels({&tr.corr1.vals, &coords});
  }
  Field body1 = dec1_body.forward(tr.dec1_in, &tr.dec1_body);
  Field out1 = dec1_head.forward(body1, &tr.dec1_head);
  Field flow1(out1.h, out1.w, 2), ar1, hr1;
  if (prob) {
    ar1 = Field(out1.h, out1.w, m);
    hr1 = Field(out1.h, out1.w, m);
  }
  if (prob && common) {
    split_channels(out1, {&flow1, &ar1, &hr1});
  } else {
    flow1 = out1;
  }
  if (prob && !common) {
    Field u1 = correlation_uncertainty(tr.corr1, unc1, &tr.unc1);
    std::vector<const Field*> parts;
    if (cfg.arch == UncertaintyArch::kFull) parts.push_back(&body1);
    parts.push_back(&u1);
    tr.q1_in = concat_channels(parts);
    Field q1_out = q1.forward(tr.q1_in, &tr.q1);
    split_channels(q1_out, {&ar1, &hr1});
  }
  outs[0].flow = flow1;
  if (prob) {
    outs[0].alpha_raw = ar1;
    outs[0].h_raw = hr1;
    outs[0].params = MixtureParams::from_raw(flow1, ar1, hr1, cfg.constraint);
  }

  // Fine level: warp, local correlation, refinement.
  const int s2 = cfg.fine_size();
  tr.up_flow = scaled(resize_bilinear(flow1, s2, s2), 2.0);
  if (prob && cfg.propagate_uncertainty) {
    tr.up_alpha = resize_bilinear(ar1, s2, s2);
    tr.up_h = resize_bilinear(hr1, s2, s2);
  }
  tr.warped_q2 = warp_bilinear(f2q, tr.up_flow);
  tr.corr2 = local_correlation(f2r, tr.warped_q2, cfg.local_radius);
  {
    std::vector<const Field*> parts{&tr.corr2.vals, &tr.up_flow};
    if (prob && cfg.propagate_uncertainty) {
      parts.push_back(&tr.up_alpha);
      parts.push_back(&tr.up_h);
    }
    tr.dec2_in = concat_channels(parts);
  }
  Field body2 = dec2_body.forward(tr.dec2_in, &tr.dec2_body);
  Field out2 = dec2_head.forward(body2, &tr.dec2_head);
  Field dflow(out2.h, out2.w, 2), ar2, hr2;
  if (prob) {
    ar2 = Field(out2.h, out2.w, m);
    hr2 = Field(out2.h, out2.w, m);
  }
  if (prob && common) {
    split_channels(out2, {&dflow, &ar2, &hr2});
  } else {
    dflow = out2;
  }
  Field flow2 = tr.up_flow;
  for (size_t k = 0; k < flow2.v.size(); ++k) flow2.v[k] += dflow.v[k];
  if (prob && !common) {
    Field u2 = correlation_uncertainty(tr.corr2, unc2, &tr.unc2);
    std::vector<const Field*> parts;
    if (cfg.arch == UncertaintyArch::kFull) parts.push_back(&body2);
    parts.push_back(&u2);
    if (cfg.arch == UncertaintyArch::kFull && cfg.propagate_uncertainty) {
      parts.push_back(&tr.up_flow);
      parts.push_back(&tr.up_alpha);
      parts.push_back(&tr.up_h);
    }
    tr.q2_in = concat_channels(parts);
    Field q2_out = q2.forward(tr.q2_in, &tr.q2);
    split_channels(q2_out, {&ar2, &hr2});
  }
  outs[1].flow = flow2;
  if (prob) {
    outs[1].alpha_raw = ar2;
    outs[1].h_raw = hr2;
    outs[1].params = MixtureParams::from_raw(flow2, ar2, hr2, cfg.constraint);
  }
  return outs;
}

MatcherNet MatcherNet::backward(const FwdTrace& tr,
                                const std::vector<LevelGrads>& upstream) const {
  if (upstream.size() != 2)
    throw std::invalid_argument("MatcherNet::backward: needs 2 level grads");
  MatcherNet g = zeros_like();
  const bool common = cfg.arch == UncertaintyArch::kCommon;
  const bool prob = cfg.probabilistic();
  const int m = cfg.m();
  const int s1 = cfg.coarse_size(), s2 = cfg.fine_size();

  const Field& f1r = tr.feat_r[2].x.back();
  const Field& f1q = tr.feat_q[2].x.back();
  const Field& f2r = tr.feat_r[1].x.back();
  const Field& f2q = tr.feat_q[1].x.back();

  // ---- fine level ----
  Field g_flow2 = upstream[1].d_flow;
  Field g_up_flow(s2, s2, 2);
  Field g_body2(s2, s2, 16);
  Field g_up_alpha, g_up_h;
  if (prob && cfg.propagate_uncertainty) {
    g_up_alpha = Field(s2, s2, m);
    g_up_h = Field(s2, s2, m);
  }
  Field g_corr2(s2, s2, tr.corr2.dk * tr.corr2.dl);

  Field g_out2;
  if (prob && common) {
    g_out2 = concat_channels(
        {&g_flow2, &upstream[1].d_alpha_raw, &upstream[1].d_h_raw});
  } else {
    g_out2 = g_flow2;
  }
  // flow2 = up_flow + dflow.
  for (size_t k = 0; k < g_up_flow.v.size(); ++k)
    g_up_flow.v[k] += g_flow2.v[k];

  if (prob && !common) {
    Field gq = concat_channels(
        {&upstream[1].d_alpha_raw, &upstream[1].d_h_raw});
    Field gin = q2.backward(tr.q2, gq, g.q2);
    Field g_u2(s2, s2, cfg.unc_out);
    if (cfg.arch == UncertaintyArch::kFull) {
      if (cfg.propagate_uncertainty) {
        Field g_upf(s2, s2, 2);
        split_channels(gin, {&g_body2, &g_u2, &g_upf, &g_up_alpha, &g_up_h});
        for (size_t k = 0; k < g_up_flow.v.size(); ++k)
          g_up_flow.v[k] += g_upf.v[k];
      } else {
        split_channels(gin, {&g_body2, &g_u2});
      }
    } else {
      g_u2 = gin;
    }
    Field gc = correlation_uncertainty_backward(tr.corr2, unc2, tr.unc2, g_u2,
                                                g.unc2);
    for (size_t k = 0; k < g_corr2.v.size(); ++k) g_corr2.v[k] += gc.v[k];
  }

  {
    Field gb = dec2_head.backward(tr.dec2_head, g_out2, g.dec2_head);
    for (size_t k = 0; k < g_body2.v.size(); ++k) g_body2.v[k] += gb.v[k];
  }
  Field g_dec2_in = dec2_body.backward(tr.dec2_body, g_body2, g.dec2_body);
  {
    Field gc(s2, s2, tr.corr2.dk * tr.corr2.dl);
    Field guf(s2, s2, 2);
    std::vector<Field*> parts{&gc, &guf};
    Field ga, gh;
    if (prob && cfg.propagate_uncertainty) {
      ga = Field(s2, s2, m);
      gh = Field(s2, s2, m);
      parts.push_back(&ga);
      parts.push_back(&gh);
    }
    split_channels(g_dec2_in, parts);
    for (size_t k = 0; k < g_corr2.v.size(); ++k) g_corr2.v[k] += gc.v[k];
    for (size_t k = 0; k < g_up_flow.v.size(); ++k)
      g_up_flow.v[k] += guf.v[k];
    if (prob && cfg.propagate_uncertainty) {
      for (size_t k = 0; k < g_up_alpha.v.size(); ++k) {
        g_up_alpha.v[k] += ga.v[k];
        g_up_h.v[k] += gh.v[k];
      }
    }
  }

  Field g_f2r(s2, s2, cfg.feat_c2), g_warped(s2, s2, cfg.feat_c2);
  local_correlation_backward(f2r, tr.warped_q2, cfg.local_radius, g_corr2,
                             g_f2r, g_warped);
  Field g_f2q(s2, s2, cfg.feat_c2);
  warp_bilinear_backward(f2q, tr.up_flow, g_warped, g_f2q, g_up_flow);

  // ---- propagate into the coarse level ----
  Field g_flow1 = scaled(resize_bilinear_backward(g_up_flow, s1, s1), 2.0);
  Field g_ar1, g_hr1;
  if (prob) {
    g_ar1 = Field(s1, s1, m);
    g_hr1 = Field(s1, s1, m);
    if (cfg.propagate_uncertainty) {
      g_ar1 = resize_bilinear_backward(g_up_alpha, s1, s1);
      g_hr1 = resize_bilinear_backward(g_up_h, s1, s1);
    }
  }
  for (size_t k = 0; k < g_flow1.v.size(); ++k)
    g_flow1.v[k] += upstream[0].d_flow.v[k];
  if (prob) {
    for (size_t k = 0; k < g_ar1.v.size(); ++k) {
      g_ar1.v[k] += upstream[0].d_alpha_raw.v[k];
      g_hr1.v[k] += upstream[0].d_h_raw.v[k];
    }
  }

  Field g_body1(s1, s1, 16);
  Field g_corr1(s1, s1, tr.corr1.dk * tr.corr1.dl);
  Field g_out1;
  if (prob && common) {
    g_out1 = concat_channels({&g_flow1, &g_ar1, &g_hr1});
  } else {
    g_out1 = g_flow1;
  }
  if (prob && !common) {
    Field gq = concat_channels({&g_ar1, &g_hr1});
    Field gin = q1.backward(tr.q1, gq, g.q1);
    Field g_u1(s1, s1, cfg.unc_out);
    if (cfg.arch == UncertaintyArch::kFull) {
      split_channels(gin, {&g_body1, &g_u1});
    } else {
      g_u1 = gin;
    }
    Field gc = correlation_uncertainty_backward(tr.corr1, unc1, tr.unc1, g_u1,
                                                g.unc1);
    for (size_t k = 0; k < g_corr1.v.size(); ++k) g_corr1.v[k] += gc.v[k];
  }
  {
    Field gb = dec1_head.backward(tr.dec1_head, g_out1, g.dec1_head);
    for (size_t k = 0; k < g_body1.v.size(); ++k) g_body1.v[k] += gb.v[k];
  }
  {
    Field gin = dec1_body.backward(tr.dec1_body, g_body1, g.dec1_body);
    Field gc(s1, s1, tr.corr1.dk * tr.corr1.dl);
    Field gcoord(s1, s1, 2);  // constants, gradient discarded
    split_channels(gin, {&gc, &gcoord});
    for (size_t k = 0; k < g_corr1.v.size(); ++k) g_corr1.v[k] += gc.v[k];
  }

  Field g_f1r(s1, s1, cfg.feat_c2), g_f1q(s1, s1, cfg.feat_c2);
  global_correlation_backward(f1r, f1q, g_corr1, g_f1r, g_f1q);

  // ---- shared extractor ----
  {
    Field gr = feat[2].backward(tr.feat_r[2], g_f1r, g.feat[2]);
    Field gq = feat[2].backward(tr.feat_q[2], g_f1q, g.feat[2]);
    for (size_t k = 0; k < g_f2r.v.size(); ++k) {
      g_f2r.v[k] += gr.v[k];
      g_f2q.v[k] += gq.v[k];
    }
  }
  Field g_fullr = feat[1].backward(tr.feat_r[1], g_f2r, g.feat[1]);
  Field g_fullq = feat[1].backward(tr.feat_q[1], g_f2q, g.feat[1]);
  feat[0].backward(tr.feat_r[0], g_fullr, g.feat[0]);
  feat[0].backward(tr.feat_q[0], g_fullq, g.feat[0]);
  return g;
}

MatcherNet MatcherNet::zeros_like() const {
  MatcherNet g = *this;
  for (int k = 0; k < 3; ++k) g.feat[k] = feat[k].zeros_like();
  g.dec1_body = dec1_body.zeros_like();
  g.dec1_head = dec1_head.zeros_like();
  g.dec2_body = dec2_body.zeros_like();
  g.dec2_head = dec2_head.zeros_like();
  g.unc1 = unc1.zeros_like();
  g.unc2 = unc2.zeros_like();
  g.q1 = q1.zeros_like();
  g.q2 = q2.zeros_like();
  return g;
}

void MatcherNet::add_scaled(const MatcherNet& other, double s) {
  for (int k = 0; k < 3; ++k) feat[k].add_scaled(other.feat[k], s);
  dec1_body.add_scaled(other.dec1_body, s);
  dec1_head.add_scaled(other.dec1_head, s);
  dec2_body.add_scaled(other.dec2_body, s);
  dec2_head.add_scaled(other.dec2_head, s);
  unc1.add_scaled(other.unc1, s);
  unc2.add_scaled(other.unc2, s);
  q1.add_scaled(other.q1, s);
  q2.add_scaled(other.q2, s);
}

std::vector<std::pair<std::string, std::vector<double>*>>
MatcherNet::param_refs() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  auto cb = [&](const std::string& name, std::vector<double>* vec) {
    out.emplace_back(name, vec);
  };
  feat[0].for_each_param("feat0", cb);
  feat[1].for_each_param("feat1", cb);
  feat[2].for_each_param("feat2", cb);
  dec1_body.for_each_param("dec1.body", cb);
  dec1_head.for_each_param("dec1.head", cb);
  dec2_body.for_each_param("dec2.body", cb);
  dec2_head.for_each_param("dec2.head", cb);
  unc1.for_each_param("unc1", cb);
  unc2.for_each_param("unc2", cb);
  q1.for_each_param("q1", cb);
  q2.for_each_param("q2", cb);
  return out;
}

std::vector<std::pair<std::string, const std::vector<double>*>>
MatcherNet::param_refs() const {
  auto refs = const_cast<MatcherNet*>(this)->param_refs();
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  out.reserve(refs.size());
  for (auto& [n, p] : refs) out.emplace_back(n, p);
  return out;
}

size_t MatcherNet::param_count() const {
  size_t n = 0;
  for (const auto& [name, vec] : param_refs()) n += vec->size();
  return n;
}

double MatcherNet::l2_norm_sq() const {
  double s = 0.0;
  for (const auto& [name, vec] : param_refs())
    for (double x : *vec) s += x * x;
  return s;
}

GroundTruthFlow downsample_gt2x(const GroundTruthFlow& gt) {
  const int h = gt.flow.h, w = gt.flow.w;
  if (h % 2 || w % 2)
    throw std::invalid_argument("downsample_gt2x: odd extent");
  GroundTruthFlow out;
  out.flow = Field(h / 2, w / 2, 2);
  out.valid.assign(static_cast<size_t>(h / 2) * (w / 2), 0);
  for (int i = 0; i < h / 2; ++i)
    for (int j = 0; j < w / 2; ++j) {
      double su = 0, sv = 0;
      int n = 0;
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj) {
          int y = 2 * i + di, x = 2 * j + dj;
          if (!gt.valid[static_cast<size_t>(y) * w + x]) continue;
          su += gt.flow.at(y, x, 0);
          sv += gt.flow.at(y, x, 1);
          ++n;
        }
      if (n > 0) {
        // Area average with magnitude rescaling to the halved resolution.
        out.flow.at(i, j, 0) = 0.5 * su / n;
        out.flow.at(i, j, 1) = 0.5 * sv / n;
        out.valid[static_cast<size_t>(i) * (w / 2) + j] = 1;
      }
    }
  return out;
}

MultiscaleLoss multiscale_loss(const std::vector<LevelOutput>& outs,
                               const GroundTruthFlow& gt,
                               const TrainConfig& cfg, ModelKind kind,
                               const MatcherNet* theta) {
  if (outs.size() != cfg.gamma.size())
    throw std::invalid_argument("multiscale_loss: gamma/level count mismatch");
  bool any_gamma = false;
  for (double g : cfg.gamma) any_gamma |= g > 0.0;
  if (!any_gamma)
    throw std::invalid_argument("multiscale_loss: all level weights zero");

  // Ground-truth pyramid, fine to coarse.
  std::vector<GroundTruthFlow> pyr(outs.size());
  GroundTruthFlow cur = downsample_gt2x(gt);  // finest level at size/2
  for (int l = static_cast<int>(outs.size()) - 1; l >= 0; --l) {
    pyr[l] = cur;
    if (l > 0) cur = downsample_gt2x(cur);
  }

  MultiscaleLoss res;
  res.level_grads.resize(outs.size());
  for (size_t l = 0; l < outs.size(); ++l) {
    const LevelOutput& out = outs[l];
    const GroundTruthFlow& g = pyr[l];
    double gamma = cfg.gamma[l];
    auto& lg = res.level_grads[l];
    lg.d_flow = Field(out.flow.h, out.flow.w, 2);
    if (kind == ModelKind::kProbabilistic) {
      int m = out.params->components();
      lg.d_alpha_raw = Field(out.flow.h, out.flow.w, m);
      lg.d_h_raw = Field(out.flow.h, out.flow.w, m);
    }
    if (g.valid_count() == 0) {
      ++res.skipped_levels;
      continue;
    }
    if (kind == ModelKind::kProbabilistic) {
      NllResult r = nll_loss(*out.params, g, true);
      res.data_loss += gamma * r.loss;
      for (size_t k = 0; k < lg.d_flow.v.size(); ++k)
        lg.d_flow.v[k] = gamma * r.d_mu.v[k];
      for (size_t k = 0; k < lg.d_alpha_raw.v.size(); ++k) {
        lg.d_alpha_raw.v[k] = gamma * r.d_alpha_raw.v[k];
        lg.d_h_raw.v[k] = gamma * r.d_h_raw.v[k];
      }
    } else {
      // Plain L1 regression on the flow.
      double sum = 0.0;
      int n = 0;
      const int64_t total = static_cast<int64_t>(out.flow.h) * out.flow.w;
      for (int64_t px = 0; px < total; ++px) {
        if (!g.valid[px]) continue;
        ++n;
        for (int c = 0; c < 2; ++c) {
          double d = out.flow.v[px * 2 + c] - g.flow.v[px * 2 + c];
          sum += std::abs(d);
        }
      }
      for (int64_t px = 0; px < total; ++px) {
        if (!g.valid[px]) continue;
        for (int c = 0; c < 2; ++c) {
          double d = out.flow.v[px * 2 + c] - g.flow.v[px * 2 + c];
          lg.d_flow.v[px * 2 + c] =
              gamma * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
        }
      }
      res.data_loss += gamma * sum / n;
    }
  }
  if (theta) res.penalty = 0.5 * cfg.weight_decay * theta->l2_norm_sq();
  return res;
}

Optimizer::Optimizer(MatcherNet& n, const TrainConfig& c) : net(&n), cfg(c) {
  size_t total = net->param_count();
  m.assign(total, 0.0);
  v.assign(total, 0.0);
}

void Optimizer::step(const MatcherNet& grads, double lr) {
  ++t;
  auto prefs = net->param_refs();
  auto grefs = const_cast<MatcherNet&>(grads).param_refs();
  if (prefs.size() != grefs.size())
    throw std::invalid_argument("Optimizer: parameter layout mismatch");
  const double eta = cfg.weight_decay;
  size_t off = 0;
  if (cfg.optimizer == "sgd") {
    for (size_t p = 0; p < prefs.size(); ++p) {
      auto& w = *prefs[p].second;
      const auto& g = *grefs[p].second;
      for (size_t k = 0; k < w.size(); ++k)
        w[k] -= lr * (g[k] + eta * w[k]);
    }
    return;
  }
  // Adam moments over the data gradient, decay applied decoupled.
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (size_t p = 0; p < prefs.size(); ++p) {
    auto& w = *prefs[p].second;
    const auto& g = *grefs[p].second;
    for (size_t k = 0; k < w.size(); ++k) {
      size_t i = off + k;
      m[i] = b1 * m[i] + (1.0 - b1) * g[k];
      v[i] = b2 * v[i] + (1.0 - b2) * g[k] * g[k];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      w[k] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + eta * w[k]);
    }
    off += w.size();
  }
}

double eval_nll(const MatcherNet& net, const Dataset& data,
                const TrainConfig& cfg) {
  double sum = 0.0;
  for (int i = 0; i < data.size(); ++i) {
    SampleTriplet t = data.get(i);
    ImagePair pair{t.query, t.ref};
    auto outs = net.forward(pair);
    GroundTruthFlow gt{t.flow, t.valid};
    sum += multiscale_loss(outs, gt, cfg, net.cfg.kind).data_loss;
  }
  return sum / data.size();
}

TrainResult train(MatcherNet& net, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* val) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  TrainResult result;
  if (val) {
    result.has_val = true;
    result.initial_val_nll = eval_nll(net, *val, cfg);
  }

  Optimizer opt(net, cfg);
  Rng rng(cfg.seed);
  std::vector<int> perm;
  size_t cursor = 0;
  auto next_index = [&]() {
    if (cursor >= perm.size()) {
      perm.resize(data.size());
      for (int i = 0; i < data.size(); ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      cursor = 0;
    }
    return perm[cursor++];
  };

  double lr = cfg.lr;
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int drop : cfg.lr_drop_iters)
      if (it == drop) lr *= cfg.lr_drop_factor;

    MatcherNet grads = net.zeros_like();
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      int idx = next_index();
      SampleTriplet t = data.get(idx);
      if (t.ref.h != net.cfg.input_size || t.ref.w != net.cfg.input_size)
        throw ConfigError("train: sample extent differs from the network");
      ImagePair pair{t.query, t.ref};
      FwdTrace tr;
      auto outs = net.forward(pair, &tr);
      GroundTruthFlow gt{t.flow, t.valid};
      MultiscaleLoss ml = multiscale_loss(outs, gt, cfg, net.cfg.kind);
      if (!std::isfinite(ml.data_loss))
        throw NumericalError("train: non-finite loss at iteration " +
                             std::to_string(it) + ", dataset sample " +
                             std::to_string(idx));
      batch_loss += ml.data_loss;
      grads.add_scaled(net.backward(tr, ml.level_grads), 1.0);
    }
    batch_loss /= cfg.batch;
    // Average the accumulated gradients over the batch.
    {
      auto grefs = grads.param_refs();
      double inv = 1.0 / cfg.batch;
      for (auto& [name, vec] : grefs)
        for (double& x : *vec) x *= inv;
    }
    if (cfg.grad_clip > 0.0) {
      double norm = std::sqrt(grads.l2_norm_sq());
      if (norm > cfg.grad_clip) {
        double s = cfg.grad_clip / norm;
        auto grefs = grads.param_refs();
        for (auto& [name, vec] : grefs)
          for (double& x : *vec) x *= s;
      }
    }
    opt.step(grads, lr);
    result.loss_curve.push_back(batch_loss);
  }

  if (val) result.final_val_nll = eval_nll(net, *val, cfg);
  return result;
}

InferResult infer_flow(const MatcherNet& net, const ImagePair& pair,
                       double conf_radius, ConfidenceSource src) {
  require_same_extent(pair.ref, pair.query, "infer_flow");
  const int s = net.cfg.input_size;
  ImagePair work;
  work.ref = pair.ref.h == s && pair.ref.w == s ? pair.ref
                                                : resize_bilinear(pair.ref, s, s);
  work.query = pair.query.h == s && pair.query.w == s
                   ? pair.query
                   : resize_bilinear(pair.query, s, s);
  InferResult r;
  r.levels = net.forward(work);
  const LevelOutput& fine = r.levels.back();

  Field conf_level(fine.flow.h, fine.flow.w, 1, 1.0);
  if (net.cfg.probabilistic()) {
    if (src == ConfidenceSource::kPr) {
      conf_level = confidence_pr(*fine.params, conf_radius);
    } else if (src == ConfidenceSource::kInverseVariance) {
      conf_level = mixture_variance(*fine.params);
      for (double& x : conf_level.v) x = 1.0 / std::max(x, 1e-12);
    }
  }
  const int oh = pair.ref.h, ow = pair.ref.w;
  r.flow = resize_bilinear(fine.flow, oh, ow);
  double sx = static_cast<double>(ow) / fine.flow.w;
  double sy = static_cast<double>(oh) / fine.flow.h;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      r.flow.at(i, j, 0) *= sx;
      r.flow.at(i, j, 1) *= sy;
    }
  r.confidence = resize_bilinear(conf_level, oh, ow);
  return r;
}

}  // namespace pdm
