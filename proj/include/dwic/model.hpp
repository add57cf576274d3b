#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dwic/layers.hpp"

namespace dwic {

// Declarative description of the slice classifier. The default (table3)
// configuration is the 41-weighted-layer network: 7x7/64 stem, 3x3 max
// pool, bottleneck groups [64,64,256]x4 and [128,128,512]x9, global 7x7
// average pool, dropout, and a 2-way softmax head.
//
// Spatial chain for the default geometry (valid padding on the stem and
// pool): 66 -> 30 -> 14 -> 14 -> 7 -> 1.
struct ModelSpec {
    struct Group {
        std::size_t mid = 0;     // width of the 1x1/3x3 reduce convs
        std::size_t out = 0;     // expansion width
        std::size_t count = 0;   // stacked blocks
        std::size_t stride = 1;  // applied by the first block of the group
    };

    std::size_t in_channels = 6;
    std::size_t in_h = 66, in_w = 66;
    std::size_t num_classes = 2;

    std::size_t stem_channels = 64;
    std::size_t stem_kernel = 7, stem_stride = 2, stem_pad = 0;
    std::size_t pool_kernel = 3, pool_stride = 2, pool_pad = 0;
    std::vector<Group> groups;
    std::size_t avgpool_kernel = 7, avgpool_stride = 7;
    double dropout_p = 0.9;
    std::size_t fc_hidden = 0;  // optional hidden FC width, 0 = direct head

    static ModelSpec table3();
    static ModelSpec toy();  // reduced-width variant for tests and demos

    // main-path convolutions plus fully-connected layers; shortcut
    // projections are not counted, matching ResNet depth conventions
    std::size_t weighted_layer_count() const;

    std::uint64_t hash() const;
    std::string describe() const;
};

struct ShapeStage {
    std::string name;
    std::size_t channels, h, w;
};

// per-stage activation dimensions; throws if the spec does not compose
std::vector<ShapeStage> shape_chain(const ModelSpec& spec);

template <typename T>
class Model {
public:
    explicit Model(const ModelSpec& spec);

    // batch [N, C, H, W] -> class probabilities [N, num_classes]
    TensorT<T> forward(const TensorT<T>& batch, Mode mode, Rng* rng = nullptr);
    // grad wrt probabilities -> grad wrt input (parameter grads accumulate)
    TensorT<T> backward(const TensorT<T>& grad_probs);

    std::vector<ParamRef<T>> params();
    std::vector<ParamRef<T>> state();
    void zero_grads();
    void init_weights(Rng& rng);

    const ModelSpec& spec() const { return spec_; }
    Layer<T>* layer(const std::string& name);

private:
    ModelSpec spec_;
    std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dwic
