#include "pdm/field.hpp"

namespace pdm {

Field concat_channels(const std::vector<const Field*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
  int h = parts[0]->h, w = parts[0]->w, c = 0;
  for (const Field* p : parts) {
    if (p->h != h || p->w != w)
      throw std::invalid_argument("concat_channels: spatial mismatch");
    c += p->c;
  }
  Field out(h, w, c);
  const int64_t n = static_cast<int64_t>(h) * w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    double* dst = &out.v[px * c];
    for (const Field* p : parts) {
      const double* src = &p->v[px * p->c];
      for (int k = 0; k < p->c; ++k) *dst++ = src[k];
    }
  }
  return out;
}

void split_channels(const Field& g, const std::vector<Field*>& parts) {
  int c = 0;
  for (Field* p : parts) {
    if (p->h != g.h || p->w != g.w)
      throw std::invalid_argument("split_channels: spatial mismatch");
    c += p->c;
  }
  if (c != g.c) throw std::invalid_argument("split_channels: channel mismatch");
  const int64_t n = static_cast<int64_t>(g.h) * g.w;
#pragma omp parallel for schedule(static)
  for (int64_t px = 0; px < n; ++px) {
    const double* src = &g.v[px * c];
    for (Field* p : parts) {
      double* dst = &p->v[px * p->c];
      for (int k = 0; k < p->c; ++k) *dst++ = *src++;
    }
  }
}

}  // namespace pdm
