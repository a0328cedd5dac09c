#pragma once

#include <utility>
#include <vector>

#include "lastshot/matrix.hpp"
#include "lastshot/rng.hpp"

namespace lastshot {

/// One sine regression task: y = a*sin(v*x + b) + eps, eps ~ sigma*N(0,1).
struct SineTaskParams {
  double amplitude = 1.0;   // a in [0, 2]
  double frequency = 3.0;   // v in [2, 4]
  double phase = 0.0;       // b in [0, 2*pi]
  double noise_sigma = 0.3;

  void validate() const {
    if (amplitude < 0.0 || amplitude > 2.0 || frequency < 2.0 ||
        frequency > 4.0 || phase < 0.0 || phase > 6.283185307179587 ||
        noise_sigma < 0.0)
      throw ConfigError("SineTaskParams out of range");
  }
};

inline constexpr double kSineXLo = -5.0;
inline constexpr double kSineXHi = 5.0;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

inline SineTaskParams sample_sine_task(RngStream& rng) {
  SineTaskParams p;
  p.amplitude = rng.uniform(0.0, 2.0);
  p.frequency = rng.uniform(2.0, 4.0);
  p.phase = rng.uniform(0.0, kTwoPi);
  return p;
}

/// Noise-free when `noise` is null.
inline double eval_sine(const SineTaskParams& p, double x,
                        RngStream* noise = nullptr) {
  double y = p.amplitude * std::sin(p.frequency * x + p.phase);
  if (noise != nullptr) y += p.noise_sigma * noise->normal();
  return y;
}

struct RegressionEpisode {
  SineTaskParams params;
  std::vector<std::pair<double, double>> support;
  std::vector<std::pair<double, double>> query;
};

inline RegressionEpisode sample_regression_episode(const SineTaskParams& p,
                                                   std::size_t shots,
                                                   std::size_t queries,
                                                   RngStream& rng,
                                                   bool noise_free = false) {
  if (shots < 1 || queries < 1)
    throw ConfigError("sample_regression_episode: K and Q must be >= 1");
  RegressionEpisode ep;
  ep.params = p;
  RngStream* noise = noise_free ? nullptr : &rng;
  ep.support.reserve(shots);
  for (std::size_t i = 0; i < shots; ++i) {
    double x = rng.uniform(kSineXLo, kSineXHi);
    ep.support.emplace_back(x, eval_sine(p, x, noise));
  }
  ep.query.reserve(queries);
  for (std::size_t i = 0; i < queries; ++i) {
    double x = rng.uniform(kSineXLo, kSineXHi);
    bool clash = false;
    for (const auto& [sx, sy] : ep.support) clash |= (sx == x);
    if (clash) {
      --i;  // keep support and query x sets disjoint
      continue;
    }
    ep.query.emplace_back(x, eval_sine(p, x, noise));
  }
  return ep;
}

inline Matrix xs_matrix(const std::vector<std::pair<double, double>>& pts) {
  Matrix x(pts.size(), 1);
  for (std::size_t i = 0; i < pts.size(); ++i) x.at(i, 0) = pts[i].first;
  return x;
}

inline Matrix ys_matrix(const std::vector<std::pair<double, double>>& pts) {
  Matrix y(pts.size(), 1);
  for (std::size_t i = 0; i < pts.size(); ++i) y.at(i, 0) = pts[i].second;
  return y;
}

}  // namespace lastshot
