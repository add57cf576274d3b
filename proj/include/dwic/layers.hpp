#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dwic/rng.hpp"
#include "dwic/tensor.hpp"

namespace dwic {

enum class Mode { kTrain, kEval };

template <typename T>
struct ParamRef {
    std::string name;
    TensorT<T>* value;
    TensorT<T>* grad;  // null for non-learnable state (BN running stats)
};

// Differentiable layer with an explicit cache between forward and the
// matching backward call. Activations flow as [N,C,H,W] or [N,F].
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) = 0;
    virtual TensorT<T> backward(const TensorT<T>& grad_out) = 0;
    virtual const char* kind() const = 0;
    // learnable parameters and, separately, all checkpointed state
    virtual void collect_params(const std::string&, std::vector<ParamRef<T>>&) {}
    virtual void collect_state(const std::string& prefix, std::vector<ParamRef<T>>& out) {
        collect_params(prefix, out);
    }
    virtual void init_weights(Rng&) {}
};

template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride, std::size_t pad);

    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "conv2d"; }
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
    void init_weights(Rng& rng) override;  // He-normal

    static std::size_t out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad) {
        return (in + 2 * pad - kernel) / stride + 1;
    }

    TensorT<T> weight;  // [out_c, in_c, k, k]
    TensorT<T> bias;    // [out_c]
    TensorT<T> grad_weight;
    TensorT<T> grad_bias;

private:
    std::size_t in_c_, out_c_, k_, stride_, pad_;
    std::vector<std::size_t> in_shape_;
    std::vector<T> cols_;  // cached im2col buffer, all samples
    std::size_t oh_ = 0, ow_ = 0;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
public:
    explicit BatchNorm2d(std::size_t channels, T eps = T(1e-5), T momentum = T(0.1));

    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "batchnorm2d"; }
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
    void collect_state(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

    TensorT<T> gamma, beta, running_mean, running_var;
    TensorT<T> grad_gamma, grad_beta;

private:
    std::size_t channels_;
    T eps_, momentum_;
    Mode cached_mode_ = Mode::kTrain;
    TensorT<T> xhat_;
    std::vector<T> inv_std_;
    std::vector<std::size_t> in_shape_;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "relu"; }

private:
    std::vector<bool> mask_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
public:
    MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad = 0);
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "maxpool"; }

private:
    std::size_t k_, stride_, pad_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_shape_;
};

template <typename T>
class AvgPool2d final : public Layer<T> {
public:
    AvgPool2d(std::size_t kernel, std::size_t stride);
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "avgpool"; }

private:
    std::size_t k_, stride_;
    std::vector<std::size_t> in_shape_;
};

// Inverted dropout: kept activations scaled by 1/(1-p) at train time,
// identity at eval time.
template <typename T>
class Dropout final : public Layer<T> {
public:
    explicit Dropout(T drop_prob);
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "dropout"; }

private:
    T p_;
    Mode cached_mode_ = Mode::kEval;
    std::vector<T> mask_;  // 0 or 1/(1-p)
};

template <typename T>
class Linear final : public Layer<T> {
public:
    Linear(std::size_t in_features, std::size_t out_features);
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "linear"; }
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
    void init_weights(Rng& rng) override;

    TensorT<T> weight;  // [out, in]
    TensorT<T> bias;    // [out]
    TensorT<T> grad_weight;
    TensorT<T> grad_bias;

private:
    std::size_t in_f_, out_f_;
    TensorT<T> cached_input_;        // flattened [N, in]
    std::vector<std::size_t> in_shape_;
};

template <typename T>
class Softmax final : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "softmax"; }

private:
    TensorT<T> cached_out_;
};

// Pre-activation bottleneck: BN-ReLU-conv1x1(mid) -> BN-ReLU-conv3x3(mid,stride)
// -> BN-ReLU-conv1x1(out), added to the shortcut. The shortcut is the raw
// input when dimensions match and a strided 1x1 projection otherwise.
template <typename T>
class BottleneckBlock final : public Layer<T> {
public:
    BottleneckBlock(std::size_t in_channels, std::size_t mid_channels,
                    std::size_t out_channels, std::size_t stride);

    TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng) override;
    TensorT<T> backward(const TensorT<T>& grad_out) override;
    const char* kind() const override { return "bottleneck"; }
    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
    void collect_state(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
    void init_weights(Rng& rng) override;

    bool has_projection() const { return projection_ != nullptr; }
    Conv2d<T>* branch_conv(std::size_t i) { return convs_[i].get(); }
    Conv2d<T>* projection() { return projection_.get(); }

private:
    std::array<std::unique_ptr<BatchNorm2d<T>>, 3> bns_;
    std::array<std::unique_ptr<ReLU<T>>, 3> relus_;
    std::array<std::unique_ptr<Conv2d<T>>, 3> convs_;
    std::unique_ptr<Conv2d<T>> projection_;  // null for identity shortcut
};

// mean over the batch of -log(probability assigned to the true class);
// probabilities clamped to [eps, 1-eps] before the log
template <typename T>
struct BceResult {
    T loss;
    TensorT<T> grad_probs;  // dL/dprobs, same shape as probs
};

template <typename T>
BceResult<T> bce_loss(const TensorT<T>& probs, const std::vector<int>& labels,
                      T pos_weight = T(1));

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class BatchNorm2d<float>;
extern template class BatchNorm2d<double>;
extern template class ReLU<float>;
extern template class ReLU<double>;
extern template class MaxPool2d<float>;
extern template class MaxPool2d<double>;
extern template class AvgPool2d<float>;
extern template class AvgPool2d<double>;
extern template class Dropout<float>;
extern template class Dropout<double>;
extern template class Linear<float>;
extern template class Linear<double>;
extern template class Softmax<float>;
extern template class Softmax<double>;
extern template class BottleneckBlock<float>;
extern template class BottleneckBlock<double>;
extern template BceResult<float> bce_loss(const TensorT<float>&, const std::vector<int>&, float);
extern template BceResult<double> bce_loss(const TensorT<double>&, const std::vector<int>&, double);

}  // namespace dwic
