#pragma once

// Brute-force reference formulas written directly from the definitions, on
// plain nested vectors. They sum in a different order from the library so
// agreement is not an artifact of shared code.

#include <cmath>
#include <vector>

#include "drpo/core_model.hpp"

namespace naive {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct Env {
  Vec f;
  Mat ref;
  std::vector<Mat> g;  // g[x][a][b]
};

inline Env from(const drpo::Environment& env) {
  Env e;
  e.f = env.prompt_weights();
  for (std::size_t x = 0; x < env.shape().prompts(); ++x) {
    const auto p = env.ref_policy().probs(x);
    e.ref.emplace_back(p.begin(), p.end());
    Mat gx(p.size(), Vec(p.size()));
    for (std::size_t a = 0; a < p.size(); ++a)
      for (std::size_t b = 0; b < p.size(); ++b) gx[a][b] = env.preference()(x, a, b);
    e.g.push_back(std::move(gx));
  }
  return e;
}

inline Mat probs(const drpo::Policy& p) { return p.all_probs(); }

// p*(pi), summed with y' outermost and prompts last.
inline double p_star(const Env& e, const Mat& pi) {
  double total = 0.0;
  for (std::size_t x = e.f.size(); x-- > 0;) {
    double s = 0.0;
    for (std::size_t yp = e.ref[x].size(); yp-- > 0;)
      for (std::size_t y = e.ref[x].size(); y-- > 0;) s += pi[x][y] * e.ref[x][yp] * e.g[x][y][yp];
    total += e.f[x] * s;
  }
  return total;
}

// psi for one tuple, with explicit ratios and no clipping.
inline double psi(const Mat& pi, const Mat& ref_hat, const std::vector<Mat>& g, std::size_t x,
                  std::size_t y1, std::size_t y2, int z) {
  double dm = 0.0;
  for (std::size_t y = 0; y < pi[x].size(); ++y) dm += pi[x][y] * (g[x][y][y1] + g[x][y][y2]);
  dm *= 0.5;
  const double w1 = pi[x][y1] / ref_hat[x][y1];
  const double w2 = pi[x][y2] / ref_hat[x][y2];
  return dm + 0.5 * (w1 - w2) * (z - g[x][y1][y2]);
}

// Exact mean and variance of psi over every (x, y1, y2, z) outcome.
inline std::pair<double, double> psi_moments(const Env& e, const Mat& pi, const Mat& ref_hat,
                                             const std::vector<Mat>& g) {
  std::vector<std::pair<double, double>> atoms;  // (probability, value)
  for (std::size_t x = 0; x < e.f.size(); ++x)
    for (std::size_t a = 0; a < e.ref[x].size(); ++a)
      for (std::size_t b = 0; b < e.ref[x].size(); ++b) {
        const double pr = e.f[x] * e.ref[x][a] * e.ref[x][b];
        atoms.emplace_back(pr * e.g[x][a][b], psi(pi, ref_hat, g, x, a, b, 1));
        atoms.emplace_back(pr * (1.0 - e.g[x][a][b]), psi(pi, ref_hat, g, x, a, b, 0));
      }
  double m = 0.0, m2 = 0.0;
  for (const auto& [p, v] : atoms) {
    m += p * v;
    m2 += p * v * v;
  }
  return {m, m2 - m * m};
}

inline double kl(const Vec& f, const Mat& p, const Mat& q) {
  double total = 0.0;
  for (std::size_t x = 0; x < f.size(); ++x)
    for (std::size_t y = 0; y < p[x].size(); ++y)
      if (p[x][y] > 0.0) total += f[x] * p[x][y] * std::log(p[x][y] / q[x][y]);
  return total;
}

}  // namespace naive
