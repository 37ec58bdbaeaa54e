#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bev/ops.hpp"

// Central finite-difference gradient checking, always in 64-bit: finite
// differences are too noisy in float to verify a 1e-4 tolerance.

namespace bev {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = true;
};

/// Relative error with a small-magnitude floor: entries whose analytic and
/// numeric gradients are both below the floor compare absolutely against it.
inline double grad_rel_err(double analytic, double numeric) {
    const double scale = std::max({1e-3, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / scale;
}

/// fn(tape, inputs) must evaluate the function under test and return a scalar
/// tensor. `inputs` arrive tape-bound for the analytic pass and as plain
/// constants for the finite-difference probes.
using GradFn = std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

inline GradCheckResult check_gradients(const std::string& name, const GradFn& fn,
                                       std::vector<Tensor<double>> inputs, double tol = 1e-4,
                                       double step = 1e-5) {
    GradCheckResult res;
    res.name = name;
    res.tol = tol;

    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Tensor<double>> bound;
        bound.reserve(inputs.size());
        for (const auto& t : inputs) bound.push_back(tape.leaf(t));
        Tensor<double> loss = fn(tape, bound);
        BEV_CHECK(loss.numel() == 1, "gradcheck ", name, ": function under test is not scalar");
        tape.backward(loss);
        for (const auto& b : bound) analytic.push_back(tape.grad(b));
    }
    Tape<double> probe_tape;  // never recorded into: probe inputs stay constant
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor<double>& t = inputs[k];
        for (long long j = 0; j < t.numel(); ++j) {
            const double saved = t.data()[j];
            t.data()[j] = saved + step;
            const double up = fn(probe_tape, inputs).value();
            t.data()[j] = saved - step;
            const double dn = fn(probe_tape, inputs).value();
            t.data()[j] = saved;
            const double numeric = (up - dn) / (2.0 * step);
            const double err = grad_rel_err(analytic[k][static_cast<size_t>(j)], numeric);
            if (err > res.max_rel_err) res.max_rel_err = err;
        }
    }
    res.pass = res.max_rel_err <= tol;
    return res;
}

/// Fills a tensor with uniform values in [lo, hi).
template <class S>
Tensor<S> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<S> t(std::move(shape));
    for (long long i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace bev
