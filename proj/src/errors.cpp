// SPDX-License-Identifier: Apache-2.0
#include "deer/errors.hpp"

namespace deer {

DivergenceError::DivergenceError(std::size_t iteration, const std::string& reason)
    : std::runtime_error("DEER iteration " + std::to_string(iteration) + " diverged: " + reason),
      iteration_(iteration) {}

}  // namespace deer
