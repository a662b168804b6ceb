#ifndef PDM_DATAGEN_HPP
#define PDM_DATAGEN_HPP

#include <cstdint>
#include <vector>

#include "pdm/field.hpp"
#include "pdm/geometry.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// Base geometric transform of a training pair: a homography, or a coarse
// control-grid displacement ("thin-plate" style) interpolated over the image.
struct BaseTransform {
  enum Kind { kHomography, kGrid };
  Kind kind = kHomography;
  Homography h;
  int grid_n = 0;             // control grid is grid_n x grid_n
  std::vector<double> disp;   // grid_n*grid_n*2 control displacements
  int img_h = 0, img_w = 0;

  // Displacement (u, v) from reference position (x, y) to its query match.
  void flow_at(double x, double y, double& u, double& v) const;
  Field dense_flow(int height, int width) const;
};

struct HomographySpec {
  double corner_px = 6.0;       // max per-corner displacement, each axis
  double translation_px = 2.0;  // extra global translation
  int max_retries = 100;
};

struct GridTransformSpec {
  int grid_n = 4;
  double amp_px = 4.0;
};

struct ElasticSpec {
  double amplitude = 1.5;  // peak displacement magnitude per axis
  double sigma = 8.0;      // Gaussian smoothing of the white-noise field
};

struct MaskSpec {
  int count = 3;
  double sigma_min = 4.0;
  double sigma_max = 12.0;
};

struct PerturbationSpec {
  ElasticSpec elastic;
  MaskSpec masks;
  double clamp_abs = 4.0;  // per-component bound on the summed residual flow
};

struct ObjectSpec {
  double prob = 0.0;  // probability a triplet receives a moving object
  double radius_min = 6.0;
  double radius_max = 12.0;
  double translation_px = 4.0;
  double rot_deg = 10.0;
  double scale_jitter = 0.1;
};

struct DatagenSpec {
  int height = 64, width = 64, channels = 3;
  HomographySpec homography;
  double grid_prob = 0.0;  // fraction of pairs drawn with a grid transform
  GridTransformSpec grid;
  bool perturbations = true;
  PerturbationSpec pert;
  ObjectSpec object;
  int flat_patches = 2;  // homogeneous regions painted into the query
};

// One self-supervised training sample. For pixels where the residual flow is
// zero and the base warp stays in-bounds, warping the query by `flow`
// reproduces the reference up to interpolation error.
struct SampleTriplet {
  Field ref, query;            // h x w x c, values in [0, 1]
  Field flow;                  // h x w x 2 displacement ref -> query
  std::vector<uint8_t> valid;  // composed target lands in-bounds
};

// Random homography from perturbed image corners; retries degenerate draws
// up to spec.max_retries and throws std::runtime_error after that.
BaseTransform sample_homography(const HomographySpec& spec, int width,
                                int height, Rng& rng);
BaseTransform sample_grid_transform(const GridTransformSpec& spec, int width,
                                    int height, Rng& rng);

// Zero-mean band-limited random field: white noise blurred at spec.sigma
// and rescaled so the largest component magnitude equals spec.amplitude.
Field elastic_field(const ElasticSpec& spec, int height, int width, Rng& rng);

// Clipped Gaussian bumps S_i = min(2 G_i, 1) with unit-peak G_i at random
// centers; each mask has an interior plateau of exactly 1.
std::vector<Field> perturbation_masks(const MaskSpec& spec, int height,
                                      int width, Rng& rng);

// Applies the residual flow: the query stays untouched, the reference is
// warped by eps, and the flow is composed as base(x + eps(x)) + eps(x).
// Validity marks pixels whose composed target lands inside the query.
SampleTriplet compose_perturbed(const BaseTransform& base, const Field& eps,
                                const Field& clean_ref,
                                const Field& clean_query);

// Textured disk moving under its own affine motion, pasted into both images;
// the flow inside the reference footprint becomes the object motion.
struct MovingObject {
  double cx = 0, cy = 0, radius = 8;
  double affine[6] = {1, 0, 0, 0, 1, 0};  // row-major 2x3, maps (x, y, 1)
  Field texture;                          // (2*ceil(radius)+1)^2 x c
};
void add_moving_object(SampleTriplet& triplet, const MovingObject& obj);

MovingObject sample_moving_object(const ObjectSpec& spec, int width,
                                  int height, int channels, Rng& rng);

// Multi-octave value noise with optional flat elliptical patches; [0, 1].
Field make_texture(int height, int width, int channels, Rng& rng,
                   int flat_patches = 0);

// Full generator: pure function of (spec, master_seed, index).
SampleTriplet generate_triplet(const DatagenSpec& spec, uint64_t master_seed,
                               uint64_t index);

}  // namespace pdm

#endif
