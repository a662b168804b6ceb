#ifndef PDM_TESTS_ORACLES_HPP
#define PDM_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <vector>

// Independent numerical oracles used by the test suites. These deliberately
// avoid the library's own code paths.
namespace oracles {

inline long double sigmoid_ld(long double x) {
  return 1.0L / (1.0L + expl(-x));
}

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
inline const double kGlNodes[16] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
inline const double kGlWeights[16] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
    0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
    0.1826034150449236, 0.1894506104550685, 0.1894506104550685,
    0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479,
    0.0271524594117541};

// Composite 16-point Gauss-Legendre over [a, b] with n panels.
inline long double integrate_gl(const std::function<long double(long double)>& f,
                                long double a, long double b, int panels) {
  long double total = 0.0L;
  for (int p = 0; p < panels; ++p) {
    long double pa = a + (b - a) * p / panels;
    long double pb = a + (b - a) * (p + 1) / panels;
    long double mid = 0.5L * (pa + pb), half = 0.5L * (pb - pa);
    long double s = 0.0L;
    for (int i = 0; i < 16; ++i)
      s += kGlWeights[i] * f(mid + half * kGlNodes[i]);
    total += s * half;
  }
  return total;
}

// Shared-variance Laplace mixture density, direct formula.
inline long double mixture_density(long double du, long double dv,
                                   const std::vector<double>& alpha,
                                   const std::vector<double>& sigma2) {
  long double p = 0.0L;
  for (size_t m = 0; m < alpha.size(); ++m) {
    long double s2 = sigma2[m];
    p += (long double)alpha[m] / (2.0L * s2) *
         expl(-sqrtl(2.0L / s2) * (fabsl(du) + fabsl(dv)));
  }
  return p;
}

// Probability mass of the mixture inside the inf-norm ball of radius R around
// the mean, by 2D composite quadrature. Each axis is split at the mean (the
// density kink) and paneled finely enough for the smallest component scale.
inline double integrate_density_box(const std::vector<double>& alpha,
                                    const std::vector<double>& sigma2,
                                    double radius) {
  double smin = sigma2[0];
  for (double s : sigma2) smin = std::min(smin, s);
  int panels = std::max(
      1, std::min(256, (int)std::ceil(std::sqrt(2.0 / smin) * radius / 4.0)));

  // Integrate over one quadrant [0,R]^2 per axis-sign combination; the
  // density is even in each axis so the four quadrants are equal.
  auto inner = [&](long double u) {
    return integrate_gl(
        [&](long double v) { return mixture_density(u, v, alpha, sigma2); },
        0.0L, (long double)radius, panels);
  };
  long double q = integrate_gl(inner, 0.0L, (long double)radius, panels);
  return (double)(4.0L * q);
}

// Central finite difference with parameter mutation through a setter.
inline double central_diff(const std::function<double()>& eval,
                           double* param, double step = 1e-4) {
  double saved = *param;
  *param = saved + step;
  double fp = eval();
  *param = saved - step;
  double fm = eval();
  *param = saved;
  return (fp - fm) / (2.0 * step);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  double d = std::abs(a - b);
  double m = std::max(std::max(std::abs(a), std::abs(b)), floor);
  return d / m;
}

}  // namespace oracles

#endif
