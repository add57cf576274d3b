#include "dwic/model.hpp"

#include <sstream>
#include <stdexcept>

namespace dwic {

ModelSpec ModelSpec::table3() {
    ModelSpec s;
    s.groups = {{64, 256, 4, 1}, {128, 512, 9, 2}};
    return s;
}

ModelSpec ModelSpec::toy() {
    ModelSpec s;
    s.stem_channels = 8;
    s.groups = {{8, 16, 1, 1}, {16, 32, 1, 2}};
    s.dropout_p = 0.3;
    return s;
}

std::size_t ModelSpec::weighted_layer_count() const {
    std::size_t n = 1;  // stem conv
    for (const Group& g : groups) n += g.count * 3;
    n += (fc_hidden > 0) ? 2 : 1;
    return n;
}

std::string ModelSpec::describe() const {
    std::ostringstream os;
    os << "in=" << in_channels << "x" << in_h << "x" << in_w << ";classes=" << num_classes
       << ";stem=" << stem_channels << "," << stem_kernel << "," << stem_stride << ","
       << stem_pad << ";pool=" << pool_kernel << "," << pool_stride << "," << pool_pad;
    for (const Group& g : groups)
        os << ";group=" << g.mid << ":" << g.out << ":" << g.count << ":" << g.stride;
    os << ";avg=" << avgpool_kernel << "," << avgpool_stride << ";drop=" << dropout_p
       << ";hidden=" << fc_hidden;
    return os.str();
}

std::uint64_t ModelSpec::hash() const {
    const std::string d = describe();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : d) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::vector<ShapeStage> shape_chain(const ModelSpec& spec) {
    std::vector<ShapeStage> chain;
    std::size_t c = spec.in_channels, h = spec.in_h, w = spec.in_w;
    chain.push_back({"input", c, h, w});

    auto conv_dim = [](std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
        if (in + 2 * p < k) throw std::invalid_argument("model spec: stage smaller than kernel");
        return (in + 2 * p - k) / s + 1;
    };

    h = conv_dim(h, spec.stem_kernel, spec.stem_stride, spec.stem_pad);
    w = conv_dim(w, spec.stem_kernel, spec.stem_stride, spec.stem_pad);
    c = spec.stem_channels;
    chain.push_back({"stem.conv", c, h, w});

    h = conv_dim(h, spec.pool_kernel, spec.pool_stride, spec.pool_pad);
    w = conv_dim(w, spec.pool_kernel, spec.pool_stride, spec.pool_pad);
    chain.push_back({"stem.pool", c, h, w});

    for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
        const auto& g = spec.groups[gi];
        for (std::size_t b = 0; b < g.count; ++b) {
            const std::size_t stride = (b == 0) ? g.stride : 1;
            h = conv_dim(h, 3, stride, 1);  // dims set by the strided 3x3 conv
            w = conv_dim(w, 3, stride, 1);
            c = g.out;
            chain.push_back(
                {"group" + std::to_string(gi + 1) + ".block" + std::to_string(b), c, h, w});
        }
    }

    h = conv_dim(h, spec.avgpool_kernel, spec.avgpool_stride, 0);
    w = conv_dim(w, spec.avgpool_kernel, spec.avgpool_stride, 0);
    chain.push_back({"head.avgpool", c, h, w});
    chain.push_back({"head.fc", spec.num_classes, 1, 1});
    return chain;
}

template <typename T>
Model<T>::Model(const ModelSpec& spec) : spec_(spec) {
    if (spec.groups.empty()) throw std::invalid_argument("model spec: no residual groups");
    const auto chain = shape_chain(spec);  // validates geometry

    layers_.emplace_back("stem.conv",
                         std::make_unique<Conv2d<T>>(spec.in_channels, spec.stem_channels,
                                                     spec.stem_kernel, spec.stem_stride,
                                                     spec.stem_pad));
    layers_.emplace_back("stem.pool", std::make_unique<MaxPool2d<T>>(
                                          spec.pool_kernel, spec.pool_stride, spec.pool_pad));

    std::size_t cur_c = spec.stem_channels;
    for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
        const auto& g = spec.groups[gi];
        for (std::size_t b = 0; b < g.count; ++b) {
            const std::size_t stride = (b == 0) ? g.stride : 1;
            layers_.emplace_back(
                "group" + std::to_string(gi + 1) + ".block" + std::to_string(b),
                std::make_unique<BottleneckBlock<T>>(cur_c, g.mid, g.out, stride));
            cur_c = g.out;
        }
    }

    layers_.emplace_back("head.avgpool",
                         std::make_unique<AvgPool2d<T>>(spec.avgpool_kernel, spec.avgpool_stride));
    layers_.emplace_back("head.dropout",
                         std::make_unique<Dropout<T>>(static_cast<T>(spec.dropout_p)));

    const ShapeStage& pooled = chain[chain.size() - 2];
    std::size_t feat = pooled.channels * pooled.h * pooled.w;
    if (spec.fc_hidden > 0) {
        layers_.emplace_back("head.fc_hidden", std::make_unique<Linear<T>>(feat, spec.fc_hidden));
        layers_.emplace_back("head.fc_hidden_relu", std::make_unique<ReLU<T>>());
        feat = spec.fc_hidden;
    }
    layers_.emplace_back("head.fc", std::make_unique<Linear<T>>(feat, spec.num_classes));
    layers_.emplace_back("head.softmax", std::make_unique<Softmax<T>>());
}

template <typename T>
TensorT<T> Model<T>::forward(const TensorT<T>& batch, Mode mode, Rng* rng) {
    if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.in_h ||
        batch.dim(3) != spec_.in_w)
        throw std::invalid_argument("model: batch shape does not match spec input");
    TensorT<T> x = batch;
    for (auto& [name, layer] : layers_) x = layer->forward(x, mode, rng);
    return x;
}

template <typename T>
TensorT<T> Model<T>::backward(const TensorT<T>& grad_probs) {
    TensorT<T> g = grad_probs;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
    return g;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
    std::vector<ParamRef<T>> out;
    for (auto& [name, layer] : layers_) layer->collect_params(name, out);
    return out;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::state() {
    std::vector<ParamRef<T>> out;
    for (auto& [name, layer] : layers_) layer->collect_state(name, out);
    return out;
}

template <typename T>
void Model<T>::zero_grads() {
    for (auto& p : params())
        if (p.grad) std::fill(p.grad->data(), p.grad->data() + p.grad->size(), T(0));
}

template <typename T>
void Model<T>::init_weights(Rng& rng) {
    for (auto& [name, layer] : layers_) layer->init_weights(rng);
}

template <typename T>
Layer<T>* Model<T>::layer(const std::string& name) {
    for (auto& [n, layer] : layers_)
        if (n == name) return layer.get();
    return nullptr;
}

template class Model<float>;
template class Model<double>;

}  // namespace dwic
