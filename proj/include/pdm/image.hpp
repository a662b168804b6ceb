#ifndef PDM_IMAGE_HPP
#define PDM_IMAGE_HPP

#include "pdm/field.hpp"

namespace pdm {

// Bilinear sample at (x, y) in pixel units, channel ch. Taps outside the
// image contribute zero. Uses the factorized lerp form, which reproduces
// constant regions exactly when all four taps are inside.
double sample_bilinear(const Field& img, double x, double y, int ch);

// Backward warp: out(i,j) = img sampled at (j + flow_u, i + flow_v).
// flow has two channels (u = x displacement, v = y displacement).
Field warp_bilinear(const Field& img, const Field& flow);

// Gradients of warp_bilinear w.r.t. the image (accumulated, scatter) and the
// flow (accumulated, per pixel).
void warp_bilinear_backward(const Field& img, const Field& flow,
                            const Field& gout, Field& gimg, Field& gflow);

// Bilinear resize with clamp-to-edge sampling and half-pixel centers.
// Values are interpolated only; flow magnitude rescaling is the caller's job.
Field resize_bilinear(const Field& img, int oh, int ow);
// Transpose of resize_bilinear as a linear map: scatters gout back to the
// input extent (ih, iw).
Field resize_bilinear_backward(const Field& gout, int ih, int iw);

// 2x2 block average; extents must be even.
Field area_downsample2x(const Field& img);

// Separable Gaussian blur, kernel radius ceil(3*sigma), border taps dropped
// and the kernel renormalized there.
Field gaussian_blur(const Field& img, double sigma);

}  // namespace pdm

#endif
