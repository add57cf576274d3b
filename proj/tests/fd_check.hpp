#pragma once

// Central finite-difference gradient checking in double precision. The
// probe loss is dot(projection, forward_output) for a fixed random
// projection; forward closures must be deterministic so stochastic layers
// (dropout) re-draw identical masks on every evaluation.

#include <cmath>
#include <functional>
#include <vector>

#include "dwic/layers.hpp"
#include "dwic/rng.hpp"
#include "dwic/tensor.hpp"

namespace fdcheck {

inline constexpr double kEps = 1e-5;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b));
}

inline double dot(const dwic::Tensor64& a, const dwic::Tensor64& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline dwic::Tensor64 random_tensor(std::vector<std::size_t> shape, dwic::Rng& rng,
                                    double scale = 1.0) {
    dwic::Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

// values pushed away from zero so ReLU-style kinks sit far from the probe
inline dwic::Tensor64 random_tensor_off_kink(std::vector<std::size_t> shape, dwic::Rng& rng,
                                             double scale = 1.0, double margin = 0.01) {
    dwic::Tensor64 t = random_tensor(std::move(shape), rng, scale);
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::abs(t[i]) < margin) t[i] += (t[i] >= 0.0 ? margin : -margin);
    return t;
}

// Max relative error between analytic gradients and central differences
// over the given slots; `loss` must re-evaluate the full forward pass.
// Slots where the two probe scales disagree with each other sit on a kink
// (ReLU zero, pooling argmax flip) and carry no derivative to verify; they
// are skipped as long as they stay rare. A wrong analytic gradient still
// fails: its finite differences agree across scales but not with it.
inline double max_rel_err(const std::function<double()>& loss,
                          const std::vector<double*>& slots,
                          const std::vector<double>& analytic, double eps = kEps) {
    auto central = [&](double* slot, double h) {
        const double orig = *slot;
        *slot = orig + h;
        const double lp = loss();
        *slot = orig - h;
        const double lm = loss();
        *slot = orig;
        return (lp - lm) / (2.0 * h);
    };

    // Components whose true gradient is zero by cancellation (a conv bias
    // feeding a batch norm, a dropped activation) see pure roundoff in the
    // difference quotient; the error denominator is floored at a fraction
    // of the case's gradient scale so they are judged against it.
    double gscale = 0.0;
    for (double a : analytic) gscale = std::max(gscale, std::abs(a));
    const double floor = std::max(1e-6, 1e-4 * gscale);
    auto scaled_err = [&](double a, double b) {
        return std::abs(a - b) / std::max(floor, std::abs(a) + std::abs(b));
    };

    double worst = 0.0;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double fd1 = central(slots[i], eps);
        const double err1 = scaled_err(analytic[i], fd1);
        if (err1 < 1e-6) {
            worst = std::max(worst, err1);
            continue;
        }
        const double fd2 = central(slots[i], eps / 2.0);
        const double err = std::min(err1, scaled_err(analytic[i], fd2));
        if (err > 1e-4 && rel_err(fd1, fd2) > 0.01) {
            ++skipped;  // locally non-smooth
            continue;
        }
        worst = std::max(worst, err);
    }
    if (skipped > slots.size() / 3 + 1) return 1.0;  // too many kinks to certify
    return worst;
}

// Checks d(loss)/d(input) and d(loss)/d(params) of a single layer.
// A fresh rng seeded with `mask_seed` is passed to every forward call.
inline double check_layer(dwic::Layer<double>& layer, const dwic::Tensor64& input,
                          dwic::Mode mode, std::uint64_t mask_seed, dwic::Rng& proj_rng,
                          std::size_t max_slots = 64) {
    dwic::Tensor64 x = input;

    auto forward = [&]() {
        dwic::Rng mask_rng(mask_seed);
        return layer.forward(x, mode, &mask_rng);
    };
    const dwic::Tensor64 y0 = forward();
    const dwic::Tensor64 proj = random_tensor(y0.shape(), proj_rng);
    auto loss = [&]() { return dot(proj, forward()); };

    // analytic gradients: one forward (cached) + backward
    std::vector<dwic::ParamRef<double>> params;
    layer.collect_params("p", params);
    for (auto& p : params)
        if (p.grad) std::fill(p.grad->data(), p.grad->data() + p.grad->size(), 0.0);
    forward();
    const dwic::Tensor64 grad_x = layer.backward(proj);

    std::vector<double*> slots;
    std::vector<double> analytic;
    auto add_slots = [&](dwic::Tensor64& values, const dwic::Tensor64& grads) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            slots.push_back(&values[i]);
            analytic.push_back(grads[i]);
        }
    };
    add_slots(x, grad_x);
    for (auto& p : params)
        if (p.grad) add_slots(*p.value, *p.grad);

    // subsample large configurations deterministically
    if (slots.size() > max_slots) {
        std::vector<double*> s2;
        std::vector<double> a2;
        dwic::Rng pick(proj_rng.next_u64());
        for (std::size_t i = 0; i < max_slots; ++i) {
            const std::size_t j = pick.uniform_index(slots.size());
            s2.push_back(slots[j]);
            a2.push_back(analytic[j]);
        }
        slots.swap(s2);
        analytic.swap(a2);
    }
    return max_rel_err(loss, slots, analytic);
}

}  // namespace fdcheck
