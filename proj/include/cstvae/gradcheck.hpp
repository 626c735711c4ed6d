#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cstvae/tensor.hpp"

namespace cstvae {

// Central finite differences against the recorded backward rules. The check
// only ever runs forward evaluations, so it stays independent of the
// backward implementation it verifies.
struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    i64 coords_checked = 0;
    double tolerance = 0.0;
    bool pass = false;
};

// loss_fn must rebuild the loss from the leaves' current values on the given
// tape, deterministically. Every coordinate of every leaf is perturbed by
// +/-h unless max_coords_per_leaf limits it (deterministic subsample).
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor(Tape&)>& loss_fn,
                                const std::vector<Tensor>& leaves, double h = 1e-5, double tol = 1e-4,
                                i64 max_coords_per_leaf = -1);

// Prebuilt suites per module: "tensor", "stn", "vae", "stvae", "cstvae",
// or "all".
std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module);

}  // namespace cstvae
