// A fixed battery of gradient checks over the building blocks, from single
// ops up to an end-to-end probe of a reduced network. Each case compares
// the analytic backward pass against central differences on a deterministic
// input.
#pragma once

#include <string>
#include <vector>

#include "stdnet/gradcheck.hpp"

namespace stdnet {

struct GradCase {
    std::string name;
    GradCheckResult (*run)();
};

// All cases, in a stable order. The "model.params" case perturbs every
// parameter of a reduced end-to-end network and is the slowest by far.
const std::vector<GradCase>& gradcheck_cases();

// nullptr when no case has that name.
const GradCase* find_gradcheck_case(const std::string& name);

}  // namespace stdnet
