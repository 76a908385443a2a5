#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mgssl/tensor.hpp"

namespace mgssl {

// Central finite-difference verification of reverse-mode gradients.
//
// `build` receives a fresh tape plus one watched leaf tensor per entry of
// `leaves` (in order, copied from the current Mat values) and returns a 1x1
// loss. The computation must be deterministic: anything stochastic has to be
// frozen in the closure before checking.

struct GradCheckLeaf {
    std::string name;
    double max_rel_err = 0.0;
    int entries_checked = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    double tol = 0.0;
    std::vector<GradCheckLeaf> leaves;
};

using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

GradCheckReport grad_check(const std::vector<std::pair<std::string, Mat*>>& leaves,
                           const LossBuilder& build, double h = 1e-5, double tol = 1e-4,
                           int max_entries_per_leaf = -1, uint64_t sample_seed = 1);

}  // namespace mgssl
