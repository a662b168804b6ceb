#ifndef PDM_FIELD_HPP
#define PDM_FIELD_HPP

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pdm {

// Dense row-major H x W x C tensor of doubles, channel-last.
// Index layout: v[(i*w + j)*c + k], i = row, j = column, k = channel.
struct Field {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  Field() = default;
  Field(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {
    if (h_ < 0 || w_ < 0 || c_ < 0)
      throw std::invalid_argument("Field: negative extent");
  }

  double& at(int i, int j, int k) {
    assert(i >= 0 && i < h && j >= 0 && j < w && k >= 0 && k < c);
    return v[(static_cast<size_t>(i) * w + j) * c + k];
  }
  double at(int i, int j, int k) const {
    assert(i >= 0 && i < h && j >= 0 && j < w && k >= 0 && k < c);
    return v[(static_cast<size_t>(i) * w + j) * c + k];
  }
  // Pointer to the channel vector of pixel (i, j).
  double* px(int i, int j) { return &v[(static_cast<size_t>(i) * w + j) * c]; }
  const double* px(int i, int j) const {
    return &v[(static_cast<size_t>(i) * w + j) * c];
  }

  size_t size() const { return v.size(); }
  bool same_extent(const Field& o) const {
    return h == o.h && w == o.w && c == o.c;
  }
  bool same_spatial(const Field& o) const { return h == o.h && w == o.w; }
  void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

inline void require_same_extent(const Field& a, const Field& b,
                                const char* what) {
  if (!a.same_extent(b))
    throw std::invalid_argument(std::string(what) + ": extent mismatch");
}

inline void require_same_spatial(const Field& a, const Field& b,
                                 const char* what) {
  if (!a.same_spatial(b))
    throw std::invalid_argument(std::string(what) +
                                ": spatial extent mismatch");
}

// Channel-wise concatenation, all inputs sharing one spatial extent.
Field concat_channels(const std::vector<const Field*>& parts);

// Splits gradient of a concatenation back into per-part gradients.
void split_channels(const Field& g, const std::vector<Field*>& parts);

}  // namespace pdm

#endif
