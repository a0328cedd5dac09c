#pragma once

#include <string>
#include <vector>

#include "lastshot/matrix.hpp"

namespace lastshot {

/// Heavy-ball SGD: v <- momentum*v + g; p <- p - lr*v.
struct SgdMomentumState {
  std::vector<double> velocity;
  double learning_rate;
  double momentum;

  SgdMomentumState(std::size_t param_count, double lr, double mom)
      : velocity(param_count, 0.0), learning_rate(lr), momentum(mom) {
    if (lr <= 0.0) throw ConfigError("sgd: learning rate must be > 0");
    if (mom < 0.0 || mom >= 1.0)
      throw ConfigError("sgd: momentum must be in [0, 1)");
  }

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != velocity.size() || grad.size() != velocity.size())
      throw ShapeError("sgd step: params " + std::to_string(params.size()) +
                       ", grad " + std::to_string(grad.size()) +
                       ", velocity " + std::to_string(velocity.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = momentum * velocity[i] + grad[i];
      params[i] -= learning_rate * velocity[i];
    }
  }
};

}  // namespace lastshot
