#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lastshot/matrix.hpp"

namespace lastshot {

/// Softmax with max subtraction; entries positive, sum 1.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  double m = p[0];
  for (double v : p) m = std::max(m, v);
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

/// KL(p || q) = sum p_i ln(p_i/q_i) with 0 ln 0 := 0.
inline double kl_divergence(std::span<const double> p,
                            std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] <= 0.0)
      throw NumericError("kl_divergence: q has a zero where p is nonzero");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double logsumexp(std::span<const double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  return m + std::log(z);
}

/// -log softmax(logits)[label].
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size())
    throw ShapeError("cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(logits.size()) +
                     " logits");
  return logsumexp(logits) - logits[label];
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;  // ties resolve to the lower index
  return best;
}

}  // namespace lastshot
