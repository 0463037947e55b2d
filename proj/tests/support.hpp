#pragma once

// Shared helpers for the test suites: finite-difference gradient checking
// and straight-line reference math kept independent of the Tensor tape.

#include <cmath>
#include <functional>
#include <vector>

#include "chemtyper/tensor.hpp"

namespace testsupport {

inline double rel_err(double a, double b, double floor = 1e-6) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

// Central finite differences against the tape. `make_loss` must rebuild the
// forward pass from the current parameter values on every call. Returns the
// maximum relative error over every element of every parameter.
inline double grad_check(const std::function<chemtyper::Tensor()>& make_loss,
                         std::vector<chemtyper::Tensor> params, double h = 1e-5) {
    using chemtyper::Tensor;
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = make_loss();
    chemtyper::backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = make_loss().item();
            data[i] = saved - h;
            const double down = make_loss().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic[pi][i], numeric));
        }
    }
    return worst;
}

inline std::vector<double> random_values(chemtyper::RandomSource& rng, std::size_t n,
                                         double scale = 1.0) {
    std::vector<double> out(n);
    for (double& x : out) x = rng.gaussian(0.0, scale);
    return out;
}

}  // namespace testsupport
