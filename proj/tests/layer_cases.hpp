#pragma once

// One random finite-difference configuration per layer kind; shared by the
// unit tests (few repetitions) and the acceptance suite (>= 20 each).

#include "fd_check.hpp"

namespace fdcases {

using dwic::Layer;
using dwic::Mode;
using dwic::Rng;
using dwic::Tensor64;

inline double conv_case(Rng& rng) {
    const std::size_t in_c = 1 + rng.uniform_index(3);
    const std::size_t out_c = 1 + rng.uniform_index(4);
    const std::size_t k = 1 + rng.uniform_index(3);
    const std::size_t stride = 1 + rng.uniform_index(2);
    const std::size_t pad = rng.uniform_index(k);
    const std::size_t h = k + stride + rng.uniform_index(6);
    const std::size_t w = k + stride + rng.uniform_index(6);
    const std::size_t n = 1 + rng.uniform_index(2);

    dwic::Conv2d<double> conv(in_c, out_c, k, stride, pad);
    conv.init_weights(rng);
    const Tensor64 x = fdcheck::random_tensor({n, in_c, h, w}, rng);
    return fdcheck::check_layer(conv, x, Mode::kEval, 0, rng);
}

inline double bn_case(Rng& rng, Mode mode) {
    const std::size_t c = 1 + rng.uniform_index(3);
    const std::size_t n = 2 + rng.uniform_index(3);
    const std::size_t h = 1 + rng.uniform_index(4);
    const std::size_t w = 1 + rng.uniform_index(4);

    dwic::BatchNorm2d<double> bn(c);
    for (std::size_t i = 0; i < c; ++i) {
        bn.gamma[i] = rng.uniform(0.5, 1.5);
        bn.beta[i] = rng.normal(0.0, 0.5);
        bn.running_mean[i] = rng.normal(0.0, 0.5);
        bn.running_var[i] = rng.uniform(0.5, 2.0);
    }
    const Tensor64 x = fdcheck::random_tensor({n, c, h, w}, rng);
    // freeze running stats so every re-evaluation sees the same state
    const Tensor64 rm = bn.running_mean, rv = bn.running_var;
    dwic::Tensor64* rm_slot = &bn.running_mean;
    dwic::Tensor64* rv_slot = &bn.running_var;
    auto reset = [&]() {
        *rm_slot = rm;
        *rv_slot = rv;
    };
    struct ResetWrapper final : Layer<double> {
        dwic::BatchNorm2d<double>& bn;
        std::function<void()> reset;
        ResetWrapper(dwic::BatchNorm2d<double>& b, std::function<void()> r)
            : bn(b), reset(std::move(r)) {}
        Tensor64 forward(const Tensor64& x, Mode mode, Rng* rng) override {
            reset();
            return bn.forward(x, mode, rng);
        }
        Tensor64 backward(const Tensor64& g) override { return bn.backward(g); }
        const char* kind() const override { return "bn-wrap"; }
        void collect_params(const std::string& p, std::vector<dwic::ParamRef<double>>& o) override {
            bn.collect_params(p, o);
        }
    } wrapper(bn, reset);
    return fdcheck::check_layer(wrapper, x, mode, 0, rng);
}

inline double relu_case(Rng& rng) {
    const std::size_t n = 1 + rng.uniform_index(4);
    const std::size_t m = 1 + rng.uniform_index(24);
    dwic::ReLU<double> relu;
    const Tensor64 x = fdcheck::random_tensor_off_kink({n, m}, rng);
    return fdcheck::check_layer(relu, x, Mode::kEval, 0, rng);
}

inline double maxpool_case(Rng& rng) {
    const std::size_t k = 2 + rng.uniform_index(2);
    const std::size_t stride = 1 + rng.uniform_index(2);
    const std::size_t pad = rng.uniform_index(k);
    const std::size_t h = k + rng.uniform_index(8);
    const std::size_t w = k + rng.uniform_index(8);
    dwic::MaxPool2d<double> pool(k, stride, pad);
    const Tensor64 x = fdcheck::random_tensor({1 + rng.uniform_index(2), 1 + rng.uniform_index(2), h, w}, rng);
    return fdcheck::check_layer(pool, x, Mode::kEval, 0, rng);
}

inline double avgpool_case(Rng& rng) {
    const std::size_t k = 2 + rng.uniform_index(3);
    const std::size_t stride = 1 + rng.uniform_index(2);
    const std::size_t h = k + rng.uniform_index(6);
    const std::size_t w = k + rng.uniform_index(6);
    dwic::AvgPool2d<double> pool(k, stride);
    const Tensor64 x = fdcheck::random_tensor({1 + rng.uniform_index(2), 1 + rng.uniform_index(2), h, w}, rng);
    return fdcheck::check_layer(pool, x, Mode::kEval, 0, rng);
}

inline double dropout_case(Rng& rng) {
    const double probs[] = {0.0, 0.3, 0.9};
    dwic::Dropout<double> drop(probs[rng.uniform_index(3)]);
    const Tensor64 x = fdcheck::random_tensor({2 + rng.uniform_index(3), 8}, rng);
    return fdcheck::check_layer(drop, x, Mode::kTrain, 17 + rng.uniform_index(100), rng);
}

inline double linear_case(Rng& rng) {
    const std::size_t in = 1 + rng.uniform_index(10);
    const std::size_t out = 1 + rng.uniform_index(5);
    dwic::Linear<double> fc(in, out);
    fc.init_weights(rng);
    const Tensor64 x = fdcheck::random_tensor({1 + rng.uniform_index(3), in}, rng);
    return fdcheck::check_layer(fc, x, Mode::kEval, 0, rng);
}

inline double softmax_case(Rng& rng) {
    dwic::Softmax<double> sm;
    const Tensor64 x = fdcheck::random_tensor({1 + rng.uniform_index(3), 2 + rng.uniform_index(3)}, rng);
    return fdcheck::check_layer(sm, x, Mode::kEval, 0, rng);
}

inline double bottleneck_case(Rng& rng) {
    const std::size_t in_c = 1 + rng.uniform_index(3);
    const std::size_t mid = 1 + rng.uniform_index(3);
    const bool projected = rng.bernoulli(0.5);
    const std::size_t out_c = projected ? in_c + 1 + rng.uniform_index(3) : in_c;
    const std::size_t stride = (projected && rng.bernoulli(0.5)) ? 2 : 1;
    const std::size_t h = 4 + rng.uniform_index(5);
    const std::size_t w = 4 + rng.uniform_index(5);
    const std::size_t n = 2 + rng.uniform_index(2);  // batch norm needs >= 2 in train

    dwic::BottleneckBlock<double> block(in_c, mid, out_c, stride);
    block.init_weights(rng);
    const Tensor64 x = fdcheck::random_tensor({n, in_c, h, w}, rng);
    return fdcheck::check_layer(block, x, Mode::kTrain, 0, rng);
}

// the composed training loss: softmax probabilities into clamped BCE
inline double softmax_bce_case(Rng& rng) {
    const std::size_t n = 1 + rng.uniform_index(4);
    dwic::Softmax<double> sm;
    Tensor64 x = fdcheck::random_tensor({n, 2}, rng);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_index(2));

    auto loss = [&]() {
        dwic::Softmax<double> local;
        const Tensor64 probs = local.forward(x, Mode::kEval, nullptr);
        return static_cast<double>(dwic::bce_loss(probs, labels).loss);
    };

    const Tensor64 probs = sm.forward(x, Mode::kEval, nullptr);
    const auto bce = dwic::bce_loss(probs, labels);
    const Tensor64 grad_x = sm.backward(bce.grad_probs);

    std::vector<double*> slots;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < x.size(); ++i) {
        slots.push_back(&x[i]);
        analytic.push_back(grad_x[i]);
    }
    return fdcheck::max_rel_err(loss, slots, analytic);
}

}  // namespace fdcases
