#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "pslstm/checkpoint.hpp"
#include "pslstm/model.hpp"

using namespace pslstm;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.lookback = 16;
    c.horizon = 4;
    c.n_channels = 2;
    c.patch_size = 4;
    c.patch_stride = 4;
    c.embed_dim = 8;
    c.n_blocks = 1;
    c.n_heads = 2;
    return c;
}

}  // namespace

TEST(Patchify, NonOverlappingPatchesInOrder) {
    ModelConfig c = tiny();
    c.n_channels = 1;
    Tensor x({1, 16, 1});
    for (std::size_t t = 0; t < 16; ++t) x(0, t, 0) = static_cast<double>(t);
    const Tensor p = patchify(x, c);
    ASSERT_EQ(p.shape(), (Shape{1, 4, 4}));
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p(0, j, k), static_cast<double>(4 * j + k));
}

TEST(Patchify, OverlappingPatchesShareEndpoints) {
    ModelConfig c = tiny();
    c.lookback = 10;
    c.patch_size = 4;
    c.patch_stride = 3;
    c.n_channels = 1;
    EXPECT_EQ(c.n_patches(), 3u);
    EXPECT_EQ(c.patch_offset(), 0u);
    Tensor x({1, 10, 1});
    for (std::size_t t = 0; t < 10; ++t) x(0, t, 0) = static_cast<double>(t);
    const Tensor p = patchify(x, c);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p(0, j, k), static_cast<double>(3 * j + k));
    EXPECT_EQ(p(0, 1, 2), 5.0);
}

TEST(Patchify, LastPatchEndsAtLastObservation) {
    ModelConfig c = tiny();
    c.lookback = 11;
    c.patch_size = 4;
    c.patch_stride = 3;
    c.n_channels = 1;
    EXPECT_EQ(c.n_patches(), 3u);
    EXPECT_EQ(c.patch_offset(), 1u);
    Tensor x({1, 11, 1});
    for (std::size_t t = 0; t < 11; ++t) x(0, t, 0) = static_cast<double>(t);
    const Tensor p = patchify(x, c);
    EXPECT_EQ(p(0, 0, 0), 1.0);
    EXPECT_EQ(p(0, 2, 3), 10.0);
}

TEST(Patchify, ChannelIndependentRowLayout) {
    const ModelConfig c = tiny();
    Tensor x({2, 16, 2});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 16; ++t)
            for (std::size_t m = 0; m < 2; ++m) x(b, t, m) = 100.0 * b + 10.0 * m + t;
    const Tensor p = patchify(x, c);
    ASSERT_EQ(p.shape(), (Shape{4, 4, 4}));
    EXPECT_EQ(p(3, 0, 0), 110.0);  // row b*M + m = 1*2 + 1
    EXPECT_EQ(p(2, 1, 2), 106.0);
}

TEST(ModelConfig, Validation) {
    ModelConfig c = tiny();
    c.patch_size = 20;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny();
    c.embed_dim = 7;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny();
    c.dropout = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(parse_channel_strategy("cm"), ChannelStrategy::mixed);
    EXPECT_THROW(parse_channel_strategy("xx"), std::invalid_argument);
}

TEST(Model, OutputShapeAndDeterministicInit) {
    const ModelConfig c = tiny();
    PSLSTMModel a(c, 3), b(c, 3);
    Rng rng(1);
    const Tensor x = rand_normal(rng, {5, 16, 2}, 0.0, 1.0);
    const Tensor ya = a.predict(x);
    EXPECT_EQ(ya.shape(), (Shape{5, 4, 2}));
    EXPECT_EQ(ya, b.predict(x));
    EXPECT_THROW(a.predict(Tensor({5, 15, 2})), ShapeError);
}

TEST(Model, ParameterCountFormula) {
    PSLSTMModel m(tiny(), 1);
    // embed 4*8+8, block 4*(8*8 + 8*4 + 8) + 2*8, head (4*8)*4 + 4
    EXPECT_EQ(m.count_params(), 40u + 432u + 132u);
    EXPECT_EQ(count_trainable(m.parameters()), m.count_params());
    ModelConfig nm = tiny();
    nm.gate_mode.memory_mixing = false;
    PSLSTMModel m2(nm, 1);
    EXPECT_EQ(m2.count_params(), 40u + 432u - 4u * 8u * 4u + 132u);
    EXPECT_EQ(count_trainable(m2.parameters()), m2.count_params());
}

TEST(Model, ChannelIndependenceIsolatesChannels) {
    PSLSTMModel m(tiny(), 2);
    Rng rng(2);
    Tensor x = rand_normal(rng, {3, 16, 2}, 0.0, 1.0);
    const Tensor y0 = m.predict(x);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t t = 0; t < 16; ++t) x(b, t, 1) += rng.normal();
    const Tensor y1 = m.predict(x);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(y0(b, t, 0), y1(b, t, 0));
}

TEST(Model, ChannelIndependenceIsPermutationEquivariant) {
    PSLSTMModel m(tiny(), 4);
    Rng rng(4);
    const Tensor x = rand_normal(rng, {2, 16, 2}, 0.0, 1.0);
    Tensor xs = x;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 16; ++t) std::swap(xs(b, t, 0), xs(b, t, 1));
    const Tensor y = m.predict(x), ys = m.predict(xs);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(y(b, t, 0), ys(b, t, 1));
}

TEST(Model, ChannelMixingCouplesChannels) {
    ModelConfig c = tiny();
    c.channel_strategy = ChannelStrategy::mixed;
    PSLSTMModel m(c, 5);
    Rng rng(5);
    Tensor x = rand_normal(rng, {2, 16, 2}, 0.0, 1.0);
    const Tensor y0 = channel_mixed_forward(m, x);
    for (std::size_t t = 0; t < 16; ++t) x(0, t, 1) += std::sin(0.7 * t);
    const Tensor y1 = channel_mixed_forward(m, x);
    EXPECT_GT(std::abs(y0(0, 0, 0) - y1(0, 0, 0)), 0.0);
    PSLSTMModel ci(tiny(), 5);
    EXPECT_THROW(channel_mixed_forward(ci, x), std::invalid_argument);
}

TEST(Model, InstanceNormIsShiftEquivariant) {
    PSLSTMModel m(tiny(), 6);
    Rng rng(6);
    const Tensor x = rand_normal(rng, {2, 16, 2}, 0.0, 1.0);
    Tensor xs = x;
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += (i % 2 == 0) ? 5.0 : -3.0;
    const Tensor y = m.predict(x), ys = m.predict(xs);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(ys[i] - y[i], (i % 2 == 0) ? 5.0 : -3.0, 1e-10);
}

TEST(Model, DropoutOnlyWithGenerator) {
    ModelConfig c = tiny();
    c.dropout = 0.5;
    PSLSTMModel m(c, 7);
    Rng data(7);
    const Tensor x = rand_normal(data, {2, 16, 2}, 0.0, 1.0);
    Rng a(1), b(1);
    const Tensor ya = m.forward(x, &a).yhat;
    EXPECT_EQ(ya, m.forward(x, &b).yhat);
    EXPECT_NE(ya, m.predict(x));
    EXPECT_EQ(m.predict(x), m.predict(x));
}

struct ModelGradCase {
    const char* name;
    ModelConfig config;
};

void PrintTo(const ModelGradCase& c, std::ostream* os) { *os << c.name; }

class ModelGradCheck : public ::testing::TestWithParam<ModelGradCase> {};

TEST_P(ModelGradCheck, MatchesCentralDifferences) {
    const auto& c = GetParam();
    const GradCheckResult r = grad_check_model(c.config, 2, 11);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

ModelConfig variant(int which) {
    ModelConfig c = tiny();
    switch (which) {
        case 1: c.channel_strategy = ChannelStrategy::mixed; break;
        case 2: c.gate_mode.memory_mixing = false; break;
        case 3: c.n_blocks = 2; c.patch_stride = 2; break;
        case 4: c.n_blocks = 0; break;
        case 5: c.instance_norm = false; c.gate_mode.forget_activation = GateActivation::sigmoid; break;
        default: break;
    }
    return c;
}

INSTANTIATE_TEST_SUITE_P(Configs, ModelGradCheck,
                         ::testing::Values(ModelGradCase{"tiny", variant(0)}, ModelGradCase{"mixed", variant(1)},
                                           ModelGradCase{"no_mixing", variant(2)},
                                           ModelGradCase{"two_blocks_overlap", variant(3)},
                                           ModelGradCase{"linear", variant(4)},
                                           ModelGradCase{"no_norm_sigmoid", variant(5)}),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Checkpoint, RoundTripIsExact) {
    PSLSTMModel m(tiny(), 8);
    for (auto& p : m.parameters())
        for (auto& v : p.value->data()) v += 0.01;
    const auto path = std::filesystem::temp_directory_path() / "pslstm_ckpt_test.json";
    save_checkpoint(m, path);
    const PSLSTMModel loaded = load_checkpoint(path);
    Rng rng(8);
    const Tensor x = rand_normal(rng, {3, 16, 2}, 0.0, 1.0);
    EXPECT_EQ(m.predict(x), loaded.predict(x));
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsVersionAndUnknownKeys) {
    PSLSTMModel m(tiny(), 9);
    nlohmann::json j = checkpoint_to_json(m);
    nlohmann::json bad_version = j;
    bad_version["version"] = 99;
    EXPECT_THROW(checkpoint_from_json(bad_version), std::invalid_argument);
    nlohmann::json bad_key = j;
    bad_key["config"]["embed_dims"] = 3;
    EXPECT_THROW(checkpoint_from_json(bad_key), std::invalid_argument);
    nlohmann::json bad_shape = j;
    bad_shape["parameters"][0]["shape"] = {1, 1};
    EXPECT_THROW(checkpoint_from_json(bad_shape), std::invalid_argument);
    EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), std::exception);
}
