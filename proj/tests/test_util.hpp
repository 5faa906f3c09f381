#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dhm::test {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

// Central finite differences against the tape's analytic gradients. The
// builder receives input node ids (in order) and returns the scalar node.
using GraphBuilder = std::function<int(ad::Graph&, const std::vector<int>&)>;

inline void gradcheck(const std::vector<Tensor>& inputs, const GraphBuilder& build,
                      double tol = 1e-6, double h = 1e-6) {
    ad::Graph g;
    std::vector<int> ids;
    for (const auto& t : inputs) ids.push_back(g.input(t, true));
    int loss = build(g, ids);
    g.backward(loss);
    std::vector<Tensor> analytic;
    for (int id : ids) {
        REQUIRE(g.grad_ready(id));
        analytic.push_back(g.grad(id));
    }

    auto eval = [&](const std::vector<Tensor>& xs) {
        ad::Graph gg;
        std::vector<int> xids;
        for (const auto& t : xs) xids.push_back(gg.input(t, true));
        return gg.value(build(gg, xids))[0];
    };

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            double step = h * std::max(1.0, std::fabs(inputs[i][j]));
            plus[i][j] += step;
            minus[i][j] -= step;
            double fd = (eval(plus) - eval(minus)) / (2.0 * step);
            double an = analytic[i][j];
            double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
            INFO("input ", i, " coord ", j, " fd=", fd, " analytic=", an);
            CHECK(std::fabs(fd - an) / denom < tol);
        }
    }
}

// Relative comparison used by the derivative suites.
inline bool close_rel(double a, double b, double rel, double floor_abs = 1e-10) {
    double denom = std::max({std::fabs(a), std::fabs(b), floor_abs});
    return std::fabs(a - b) / denom <= rel || std::fabs(a - b) <= floor_abs;
}

}  // namespace dhm::test
