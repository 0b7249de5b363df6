#pragma once

#include <functional>
#include <string>
#include <vector>

#include "microcustom/tape.hpp"

namespace mc::testing {

struct GradCheckResult {
    int violations = 0;  // elements failing both the relative and absolute test
    double max_rel = 0.0;
    double max_abs = 0.0;
    std::string where;
    bool ok() const { return violations == 0; }
};

// Central finite differences against the tape's analytic gradients.
// `build` must construct the graph from the given leaf ids on the given tape
// and return the scalar loss node. An element passes if its relative error is
// within tol_rel or its absolute error within tol_abs.
template <typename T>
GradCheckResult gradcheck(const std::vector<Tensor<T>>& inits,
                          const std::function<int(Tape<T>&, const std::vector<int>&)>& build,
                          double h, double tol_rel, double tol_abs) {
    GradCheckResult res;
    Tape<T> tape;
    std::vector<int> leaves;
    for (const auto& t : inits) leaves.push_back(tape.leaf(t));
    const int loss = build(tape, leaves);
    if (tape.val(loss).numel() != 1) throw std::runtime_error("gradcheck: loss not scalar");
    tape.backward(loss);
    std::vector<Tensor<T>> grads;
    for (int id : leaves) grads.push_back(tape.grad(id));

    auto eval = [&](const std::vector<Tensor<T>>& xs) {
        Tape<T> tp;
        tp.grad_enabled = false;
        std::vector<int> ls;
        for (const auto& t : xs) ls.push_back(tp.leaf(t));
        return static_cast<double>(tp.val(build(tp, ls)).data[0]);
    };

    std::vector<Tensor<T>> xs = inits;
    for (size_t k = 0; k < xs.size(); ++k) {
        for (int64_t i = 0; i < xs[k].numel(); ++i) {
            const T keep = xs[k].data[static_cast<size_t>(i)];
            xs[k].data[static_cast<size_t>(i)] = keep + static_cast<T>(h);
            const double fp = eval(xs);
            xs[k].data[static_cast<size_t>(i)] = keep - static_cast<T>(h);
            const double fm = eval(xs);
            xs[k].data[static_cast<size_t>(i)] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double an =
                grads[k].numel() ? static_cast<double>(grads[k].data[static_cast<size_t>(i)]) : 0.0;
            const double abs_err = std::abs(fd - an);
            const double rel = abs_err / std::max({std::abs(fd), std::abs(an), 1e-12});
            res.max_abs = std::max(res.max_abs, abs_err);
            if (rel > tol_rel && abs_err > tol_abs) {
                ++res.violations;
                if (rel > res.max_rel) {
                    res.max_rel = rel;
                    res.where = "leaf " + std::to_string(k) + " elem " + std::to_string(i);
                }
            }
        }
    }
    return res;
}

// convenience presets: the shadow-precision contract
template <typename T>
GradCheckResult gradcheck_auto(const std::vector<Tensor<T>>& inits,
                               const std::function<int(Tape<T>&, const std::vector<int>&)>& build) {
    if constexpr (std::is_same_v<T, double>)
        return gradcheck<double>(inits, build, 1e-5, 1e-6, 1e-9);
    else
        // abs floor 1e-3: f32 forward evaluation quantizes the loss at ~1e-7,
        // so the FD quotient carries ~1e-4 absolute noise at h=1e-3
        return gradcheck<float>(inits, build, 1e-3, 1e-3, 1e-3);
}

template <typename T>
Tensor<T> random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * scale);
    return t;
}

}  // namespace mc::testing
