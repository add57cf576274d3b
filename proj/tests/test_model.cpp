#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dwic/checkpoint.hpp"
#include "dwic/model.hpp"

using namespace dwic;

TEST_CASE("table3 spec composes to the documented shape chain") {
    const ModelSpec spec = ModelSpec::table3();
    const auto chain = shape_chain(spec);

    auto stage = [&](const std::string& name) -> const ShapeStage& {
        for (const auto& st : chain)
            if (st.name == name) return st;
        FAIL("missing stage ", name);
        return chain.front();
    };

    CHECK(stage("stem.conv").channels == 64);
    CHECK(stage("stem.conv").h == 30);
    CHECK(stage("stem.pool").h == 14);
    CHECK(stage("group1.block3").channels == 256);
    CHECK(stage("group1.block3").h == 14);
    CHECK(stage("group2.block0").h == 7);
    CHECK(stage("group2.block8").channels == 512);
    CHECK(stage("group2.block8").h == 7);
    CHECK(stage("head.avgpool").h == 1);
    CHECK(stage("head.avgpool").w == 1);
}

TEST_CASE("table3 spec counts 41 weighted layers") {
    const ModelSpec spec = ModelSpec::table3();
    CHECK(spec.weighted_layer_count() == 41);  // 40 convolutions + 1 FC
    CHECK(spec.groups[0].count == 4);
    CHECK(spec.groups[1].count == 9);

    ModelSpec hidden = spec;
    hidden.fc_hidden = 1000;
    CHECK(hidden.weighted_layer_count() == 42);
}

TEST_CASE("spec hash tracks architecture changes") {
    const ModelSpec a = ModelSpec::table3();
    ModelSpec b = a;
    CHECK(a.hash() == b.hash());
    b.stem_channels = 32;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("default model consumes 6x66x66 and emits two probabilities per sample") {
    const ModelSpec spec = ModelSpec::table3();
    Model<float> model(spec);
    Rng rng(2024);
    model.init_weights(rng);

    Tensor batch({2, 6, 66, 66});
    for (std::size_t i = 0; i < batch.size(); ++i)
        batch[i] = static_cast<float>(rng.normal());

    const Tensor probs = model.forward(batch, Mode::kEval);
    REQUIRE(probs.shape() == std::vector<std::size_t>{2, 2});
    for (std::size_t i = 0; i < 2; ++i) {
        const double row = static_cast<double>(probs.at(i, 0)) + probs.at(i, 1);
        CHECK(std::abs(row - 1.0) < 1e-6);
    }

    CHECK_THROWS_AS(model.forward(Tensor({2, 3, 66, 66}), Mode::kEval),
                    std::invalid_argument);
}

TEST_CASE("eval mode is deterministic across repeated passes") {
    Model<float> model(ModelSpec::toy());
    Rng rng(7);
    model.init_weights(rng);
    Tensor batch({3, 6, 66, 66});
    for (std::size_t i = 0; i < batch.size(); ++i)
        batch[i] = static_cast<float>(rng.normal());

    const Tensor first = model.forward(batch, Mode::kEval);
    const Tensor second = model.forward(batch, Mode::kEval);
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("zeroing every residual branch makes identity-shortcut blocks transparent") {
    // two blocks per group so the non-first blocks have identity shortcuts
    ModelSpec spec = ModelSpec::toy();
    spec.groups = {{4, 8, 2, 1}, {8, 16, 2, 2}};
    Model<float> model(spec);
    Rng rng(99);
    model.init_weights(rng);

    for (const char* name : {"group1.block1", "group2.block1"}) {
        auto* block = dynamic_cast<BottleneckBlock<float>*>(model.layer(name));
        REQUIRE(block != nullptr);
        REQUIRE_FALSE(block->has_projection());
        for (int i = 0; i < 3; ++i) {
            Conv2d<float>* conv = block->branch_conv(i);
            std::fill(conv->weight.data(), conv->weight.data() + conv->weight.size(), 0.0f);
            std::fill(conv->bias.data(), conv->bias.data() + conv->bias.size(), 0.0f);
        }
        Tensor x({2, block == model.layer("group1.block1") ? std::size_t(8) : std::size_t(16),
                  5, 5});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
        const Tensor y = block->forward(x, Mode::kEval, nullptr);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
    }
}

TEST_CASE("hidden-FC variant builds and keeps the softmax contract") {
    ModelSpec spec = ModelSpec::toy();
    spec.fc_hidden = 16;
    Model<float> model(spec);
    Rng rng(11);
    model.init_weights(rng);
    Tensor batch({2, 6, 66, 66});
    for (std::size_t i = 0; i < batch.size(); ++i)
        batch[i] = static_cast<float>(rng.normal());
    const Tensor probs = model.forward(batch, Mode::kEval);
    REQUIRE(probs.shape() == std::vector<std::size_t>{2, 2});
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(std::abs(static_cast<double>(probs.at(i, 0)) + probs.at(i, 1) - 1.0) < 1e-6);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const ModelSpec spec = ModelSpec::toy();
    Model<float> model(spec);
    Rng rng(31337);
    model.init_weights(rng);
    // make running stats non-trivial
    Tensor batch({4, 6, 66, 66});
    for (std::size_t i = 0; i < batch.size(); ++i)
        batch[i] = static_cast<float>(rng.normal());
    model.forward(batch, Mode::kTrain, &rng);

    const auto tmp = std::filesystem::temp_directory_path() / "dwic_ckpt_test.pcnn";
    save_model(tmp.string(), model);

    Model<float> restored(spec);
    load_model(tmp.string(), restored);

    auto a = model.state();
    auto b = restored.state();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].name == b[i].name);
        REQUIRE(a[i].value->size() == b[i].value->size());
        for (std::size_t j = 0; j < a[i].value->size(); ++j)
            CHECK((*a[i].value)[j] == (*b[i].value)[j]);
    }

    // and the two passes agree bit for bit
    const Tensor ya = model.forward(batch, Mode::kEval);
    const Tensor yb = restored.forward(batch, Mode::kEval);
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);

    std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint rejects a mismatched architecture") {
    Model<float> model(ModelSpec::toy());
    Rng rng(1);
    model.init_weights(rng);
    const auto tmp = std::filesystem::temp_directory_path() / "dwic_ckpt_mismatch.pcnn";
    save_model(tmp.string(), model);

    Model<float> table(ModelSpec::table3());
    CHECK_THROWS_AS(load_model(tmp.string(), table), std::runtime_error);
    std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint io rejects corrupt files") {
    const auto tmp = std::filesystem::temp_directory_path() / "dwic_ckpt_bad.pcnn";
    {
        std::ofstream os(tmp, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.string()), std::runtime_error);
    std::filesystem::remove(tmp);
}
