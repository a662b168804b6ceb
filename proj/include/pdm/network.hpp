#ifndef PDM_NETWORK_HPP
#define PDM_NETWORK_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdm/conv.hpp"
#include "pdm/correlation.hpp"
#include "pdm/datagen.hpp"
#include "pdm/mixture.hpp"

namespace pdm {

enum class ModelKind { kL1, kProbabilistic };
// kCommon: the flow decoder's extra channels carry the distribution
// parameters. kCorrOnly: parameters come from the correlation uncertainty
// module alone. kFull: correlation uncertainty plus decoder flow features
// (plus propagated parameters).
enum class UncertaintyArch { kCommon, kCorrOnly, kFull };

struct MatcherConfig {
  int input_size = 64;  // fixed square working resolution
  int in_channels = 3;
  int feat_c1 = 8;   // full-resolution extractor channels
  int feat_c2 = 16;  // pyramid feature channels
  int unc_c = 8;     // width of the correlation-uncertainty stacks
  int unc_out = 4;   // channels of the per-pixel uncertainty representation
  int local_radius = 4;
  ModelKind kind = ModelKind::kProbabilistic;
  UncertaintyArch arch = UncertaintyArch::kFull;
  bool propagate_uncertainty = true;
  ConstraintSpec constraint = ConstraintSpec::default_two(64.0);

  int levels() const { return 2; }
  int m() const { return constraint.count(); }
  int coarse_size() const { return input_size / 4; }
  int fine_size() const { return input_size / 2; }
  bool probabilistic() const { return kind == ModelKind::kProbabilistic; }
};

struct ImagePair {
  Field query, ref;
};

// Per-level network output. flow is in that level's pixel units; params is
// only populated for probabilistic models (params.mu == flow).
struct LevelOutput {
  Field flow;
  std::optional<MixtureParams> params;
  Field alpha_raw, h_raw;  // raw heads (empty for the L1 model)
};

// Forward activations retained for the backward pass and for structural
// tests (correlation volumes, warped features, propagated fields).
struct FwdTrace {
  StackTrace feat_r[3], feat_q[3];
  CorrelationVolume corr1, corr2;
  StackTrace dec1_body, dec1_head, dec2_body, dec2_head;
  CorrUncTrace unc1, unc2;
  StackTrace q1, q2;
  Field up_flow, up_alpha, up_h;
  Field warped_q2;
  Field dec1_in, dec2_in, q1_in, q2_in;
};

struct MatcherNet {
  MatcherConfig cfg;
  // Extractor layers are separate single-conv stacks so both pyramid levels
  // can read their features.
  ConvStack feat[3];
  ConvStack dec1_body, dec1_head;  // mapping decoder (global level)
  ConvStack dec2_body, dec2_head;  // refinement decoder (local level)
  ConvStack unc1, unc2;            // correlation uncertainty modules
  ConvStack q1, q2;                // uncertainty predictors

  static MatcherNet create(const MatcherConfig& cfg, uint64_t seed);

  // Input extents must be divisible by 2^K and equal the configured working
  // resolution (the global correlation fixes the coarse extent).
  std::vector<LevelOutput> forward(const ImagePair& pair,
                                   FwdTrace* trace = nullptr) const;

  struct LevelGrads {
    Field d_flow;       // d loss / d flow (all models)
    Field d_alpha_raw;  // probabilistic only
    Field d_h_raw;
  };
  // Exact gradients w.r.t. every weight, returned as a same-shaped net.
  MatcherNet backward(const FwdTrace& trace,
                      const std::vector<LevelGrads>& upstream) const;

  MatcherNet zeros_like() const;
  void add_scaled(const MatcherNet& other, double s);
  // Stable enumeration of named parameter vectors.
  std::vector<std::pair<std::string, std::vector<double>*>> param_refs();
  std::vector<std::pair<std::string, const std::vector<double>*>> param_refs()
      const;
  size_t param_count() const;
  double l2_norm_sq() const;
};

struct TrainConfig {
  std::vector<double> gamma{0.32, 0.08};  // coarse-to-fine level weights
  double weight_decay = 4e-4;             // decoupled decay coefficient
  double lr = 5e-3;
  std::vector<int> lr_drop_iters;
  double lr_drop_factor = 0.5;
  int iterations = 300;
  int batch = 4;
  uint64_t seed = 1;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::string optimizer = "adamw";  // adamw | sgd
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Weighted multi-scale objective: sum_l gamma_l * L_l (+ 0.5*eta*||theta||^2
// when theta is given). The ground truth is taken at the network input
// resolution and downsampled per level with flow-magnitude rescaling.
// Levels without a single valid pixel contribute zero and are counted in
// skipped_levels.
struct MultiscaleLoss {
  double data_loss = 0.0;
  double penalty = 0.0;
  double total() const { return data_loss + penalty; }
  std::vector<MatcherNet::LevelGrads> level_grads;
  int skipped_levels = 0;
};
MultiscaleLoss multiscale_loss(const std::vector<LevelOutput>& outs,
                               const GroundTruthFlow& gt,
                               const TrainConfig& cfg, ModelKind kind,
                               const MatcherNet* theta = nullptr);

// Ground-truth pyramid helper: one 2x downsampling step (area average of the
// flow over valid pixels, magnitudes halved; a block is valid when any of
// its pixels is).
GroundTruthFlow downsample_gt2x(const GroundTruthFlow& gt);

struct Dataset {
  virtual ~Dataset() = default;
  virtual int size() const = 0;
  virtual SampleTriplet get(int index) const = 0;
};
struct MemoryDataset : Dataset {
  std::vector<SampleTriplet> items;
  int size() const override { return static_cast<int>(items.size()); }
  SampleTriplet get(int index) const override { return items[index]; }
};

// Decoupled-decay optimizer state over the flattened parameter vector.
struct Optimizer {
  Optimizer(MatcherNet& net, const TrainConfig& cfg);
  // Applies one update from the gradient net; zero gradients leave only the
  // geometric decay theta *= (1 - lr*eta).
  void step(const MatcherNet& grads, double lr);

  MatcherNet* net;
  TrainConfig cfg;
  std::vector<double> m, v;
  int t = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;  // per-iteration batch data loss
  double initial_val_nll = 0.0;
  double final_val_nll = 0.0;
  bool has_val = false;
};

// Deterministic for a given seed. Throws NumericalError naming the batch
// index if the loss turns non-finite.
TrainResult train(MatcherNet& net, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* val = nullptr);

enum class ConfidenceSource { kPr, kInverseVariance, kNone };

// Resizes the pair to the working resolution, runs the network, and returns
// the finest-level flow and confidence upsampled back to the pair extent.
struct InferResult {
  Field flow;        // pair-resolution displacements
  Field confidence;  // P_R (or 1/V); all-ones for the L1 model
  std::vector<LevelOutput> levels;  // raw network outputs
};
InferResult infer_flow(const MatcherNet& net, const ImagePair& pair,
                       double conf_radius = 1.0,
                       ConfidenceSource src = ConfidenceSource::kPr);

// Mean multiscale data loss over a dataset (validation objective).
double eval_nll(const MatcherNet& net, const Dataset& data,
                const TrainConfig& cfg);

}  // namespace pdm

#endif
