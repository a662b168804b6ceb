#ifndef PDM_REFERENCE_HPP
#define PDM_REFERENCE_HPP

#include <vector>

#include "pdm/conv.hpp"
#include "pdm/field.hpp"
#include "pdm/mixture.hpp"

// Serial reference implementations: straightforward scalar loops, written
// independently of the parallel kernels. Tests compare the two and the
// benchmark tool times them against each other.
namespace pdm::ref {

// Quadruple-loop correlation volumes.
Field local_correlation(const Field& ref, const Field& query, int radius);
Field global_correlation(const Field& ref, const Field& query);

// Direct 2D convolution of one layer (zero padding, optional ReLU).
Field conv2d(const ConvLayer& l, const Field& in);
// Layer-by-layer stack application using conv2d / a scalar max-pool loop.
Field stack_forward(const ConvStack& stack, const Field& in);

// Density of the shared-variance Laplace mixture by direct summation in
// extended precision; returns log of the sum.
double log_density_direct(double yu, double yv, double mu_u, double mu_v,
                          const std::vector<double>& alpha,
                          const std::vector<double>& sigma2);

// Scalar backward warp (accumulation form of the bilinear weights).
Field warp_bilinear(const Field& img, const Field& flow);

// Metric loops.
double aepe(const Field& pred, const Field& gt,
            const std::vector<uint8_t>& valid);
double pck(const Field& pred, const Field& gt,
           const std::vector<uint8_t>& valid, double threshold);
double f1_outlier_rate(const Field& pred, const Field& gt,
                       const std::vector<uint8_t>& valid);
// Sparsification by repeated scan-for-minimum removal; returns the metric
// value at each removal fraction of `grid`.
std::vector<double> sparsification_aepe(const std::vector<double>& errors,
                                        const std::vector<double>& confidence,
                                        const std::vector<double>& grid);
double trapezoid(const std::vector<double>& grid,
                 const std::vector<double>& y);
std::vector<double> map_at(const std::vector<double>& max_err_deg);

}  // namespace pdm::ref

#endif
