#pragma once

// Control-affine nominal dynamics: s_next ~= f(s) + g(s) a. The true plant
// deviates from this by a state-dependent residual d(s) that the GP learns.

#include <rlcbf/common.hpp>

#include <functional>

namespace rlcbf {

struct NominalModel {
    std::function<Vec(const Vec&)> f;  // drift: state -> state
    std::function<Mat(const Vec&)> g;  // actuation: state -> state x action
};

}  // namespace rlcbf
