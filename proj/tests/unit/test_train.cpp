#include <cmath>

#include <gtest/gtest.h>

#include "pslstm/train.hpp"

using namespace pslstm;

namespace {

WindowedDataset sinusoid(std::size_t length, std::size_t L, std::size_t T, double noise = 0.1) {
    SyntheticParams p;
    p.length = length;
    p.noise_std = noise;
    return split_and_standardize(make_synthetic(SyntheticKind::sinusoid, p, 3), dataset_preset("custom"), {L, T, 1});
}

ModelConfig small_model(std::size_t L, std::size_t T) {
    ModelConfig c;
    c.lookback = L;
    c.horizon = T;
    c.patch_size = 8;
    c.patch_stride = 8;
    c.embed_dim = 8;
    c.n_heads = 2;
    return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    Tensor w = Tensor::vector({1.0, -2.0});
    Tensor g = Tensor::vector({1.0, 1.0});
    ParamList params{{"w", &w, &g, nullptr}};
    Adam adam(cfg);
    adam.step(params);
    EXPECT_NEAR(w[0], 1.0 - 0.01 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w[1], -2.0 - 0.01 / (1.0 + 1e-8), 1e-15);
    EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, ConstantGradientKeepsUnitStep) {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    Tensor w = Tensor::vector({0.0});
    Tensor g({1});
    ParamList params{{"w", &w, &g, nullptr}};
    Adam adam(cfg);
    for (int k = 1; k <= 50; ++k) {
        g[0] = 3.0;
        adam.step(params);
        EXPECT_NEAR(w[0], -0.1 * k * 3.0 / (3.0 + 1e-8), 1e-12);
    }
}

TEST(Adam, MaskedEntriesNeverMove) {
    TrainConfig cfg;
    Tensor w = Tensor::vector({1.0, 2.0});
    Tensor g = Tensor::vector({5.0, 5.0});
    const Tensor mask = Tensor::vector({1.0, 0.0});
    ParamList params{{"w", &w, &g, &mask}};
    Adam adam(cfg);
    for (int k = 0; k < 5; ++k) {
        g.fill(5.0);
        adam.step(params);
    }
    EXPECT_EQ(w[1], 2.0);
    EXPECT_LT(w[0], 1.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    TrainConfig cfg;
    Tensor w = Tensor::vector({1.0});
    Tensor g = Tensor::vector({std::nan("")});
    ParamList params{{"blocks.0.W_f", &w, &g, nullptr}};
    Adam adam(cfg);
    try {
        adam.step(params);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("blocks.0.W_f"), std::string::npos);
    }
}

TEST(ClipGradients, ScalesToClipNorm) {
    Tensor a({1}), ga = Tensor::vector({6.0});
    Tensor b({1}), gb = Tensor::vector({8.0});
    ParamList params{{"a", &a, &ga, nullptr}, {"b", &b, &gb, nullptr}};
    EXPECT_DOUBLE_EQ(clip_gradients(params, 1.0), 10.0);
    EXPECT_NEAR(std::hypot(ga[0], gb[0]), 1.0, 1e-12);
    EXPECT_NEAR(ga[0] / gb[0], 0.75, 1e-15);
    ga[0] = 0.3;
    gb[0] = 0.4;
    clip_gradients(params, 1.0);
    EXPECT_EQ(ga[0], 0.3);
    EXPECT_THROW(clip_gradients(params, 0.0), std::invalid_argument);
}

TEST(MseLoss, ValueAndGradient) {
    const Tensor yhat = Tensor::vector({1.0, 2.0, 4.0});
    const Tensor y = Tensor::vector({1.0, 0.0, 1.0});
    const LossResult r = mse_loss(yhat, y);
    EXPECT_DOUBLE_EQ(r.loss, 13.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.grad[1], 4.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.grad[2], 2.0);
    EXPECT_THROW(mse_loss(yhat, Tensor::vector({1.0})), ShapeError);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.learning_rate = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.beta1 = 0.9999;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Training, ReducesLossAndBeatsBaselines) {
    const WindowedDataset data = sinusoid(1500, 48, 12);
    PSLSTMModel model(small_model(48, 12), 1);
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.seed = 1;
    const TrainResult r = train(model, data, cfg);
    ASSERT_FALSE(r.diverged) << r.diagnostic;
    ASSERT_EQ(r.history.size(), 4u);
    EXPECT_LT(r.history.back().train_mse, r.history.front().train_mse);
    const Metrics test = evaluate(model, data, Split::test);
    EXPECT_LT(test.mse, 0.5 * evaluate_baseline(data, Split::test, Baseline::persistence).mse);
    EXPECT_LT(test.mse, 0.8 * evaluate_baseline(data, Split::test, Baseline::train_mean).mse);
    EXPECT_NEAR(evaluate(model, data, Split::val).mse, r.best_val_mse, 1e-15);
}

TEST(Training, SameSeedIsBitIdentical) {
    const WindowedDataset data = sinusoid(800, 32, 8);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.seed = 5;
    PSLSTMModel a(small_model(32, 8), 5), b(small_model(32, 8), 5);
    const TrainResult ra = train(a, data, cfg);
    const TrainResult rb = train(b, data, cfg);
    ASSERT_EQ(ra.history.size(), rb.history.size());
    for (std::size_t e = 0; e < ra.history.size(); ++e) {
        EXPECT_EQ(ra.history[e].train_mse, rb.history[e].train_mse);
        EXPECT_EQ(ra.history[e].val_mse, rb.history[e].val_mse);
    }
    auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(*pa[k].value, *pb[k].value) << pa[k].name;
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
    const WindowedDataset data = sinusoid(600, 32, 8);
    PSLSTMModel trained(small_model(32, 8), 2), fresh(small_model(32, 8), 2);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const TrainResult r = train(trained, data, cfg);
    EXPECT_TRUE(r.history.empty());
    EXPECT_EQ(r.best_epoch, 0u);
    auto pa = trained.parameters(), pb = fresh.parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(*pa[k].value, *pb[k].value);
}

TEST(Training, EarlyStoppingRestoresBestEpoch) {
    const WindowedDataset data = sinusoid(800, 32, 8, 0.5);
    PSLSTMModel model(small_model(32, 8), 3);
    TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.patience = 1;
    cfg.learning_rate = 0.02;
    const TrainResult r = train(model, data, cfg);
    ASSERT_FALSE(r.diverged);
    EXPECT_LT(r.history.size(), 40u);
    EXPECT_EQ(r.history.size(), r.best_epoch + 1);
    EXPECT_NEAR(evaluate(model, data, Split::val).mse, r.best_val_mse, 1e-15);
}

TEST(Training, DivergenceRestoresBestParameters) {
    const WindowedDataset data = sinusoid(600, 32, 8);
    ModelConfig mc = small_model(32, 8);
    mc.gate_mode.stabilized = false;
    PSLSTMModel model(mc, 4), fresh(mc, 4);
    TrainConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.clip_norm = 1e12;
    cfg.max_epochs = 3;
    const TrainResult r = train(model, data, cfg);
    ASSERT_TRUE(r.diverged);
    EXPECT_FALSE(r.diagnostic.empty());
    EXPECT_TRUE(model.predict(data.all(Split::test).x).all_finite());
    if (r.best_epoch == 0) {
        auto pa = model.parameters(), pb = fresh.parameters();
        for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(*pa[k].value, *pb[k].value);
    }
}

TEST(Training, RejectsMismatchedData) {
    const WindowedDataset data = sinusoid(600, 32, 8);
    PSLSTMModel model(small_model(48, 8), 1);
    EXPECT_THROW(train(model, data, TrainConfig{}), ShapeError);
}

TEST(Baselines, ConstantSeriesIsPredictedExactly) {
    SyntheticParams p;
    p.length = 400;
    p.value = 3.0;
    const WindowedDataset data =
        split_and_standardize(make_synthetic(SyntheticKind::constant, p, 1), dataset_preset("custom"), {32, 8, 1});
    EXPECT_EQ(evaluate_baseline(data, Split::test, Baseline::persistence).mse, 0.0);
    EXPECT_EQ(evaluate_baseline(data, Split::test, Baseline::train_mean).mse, 0.0);
}

TEST(Metrics, RawScaleMultipliesByVariance) {
    SyntheticParams p;
    p.length = 800;
    p.amplitude = 5.0;
    p.noise_std = 0.5;
    const WindowedDataset data =
        split_and_standardize(make_synthetic(SyntheticKind::sinusoid, p, 1), dataset_preset("custom"), {32, 8, 1});
    const Metrics n = evaluate_baseline(data, Split::test, Baseline::persistence);
    const Metrics r = evaluate_baseline(data, Split::test, Baseline::persistence, MetricScale::raw);
    const double s = data.stats.std[0];
    EXPECT_NEAR(r.mse, n.mse * s * s, 1e-9 * r.mse);
    EXPECT_NEAR(r.mae, n.mae * s, 1e-9 * r.mae);
}

TEST(History, CsvHeader) {
    const std::string csv = history_csv({{1, 0.5, 0.25, 1.0}});
    EXPECT_EQ(csv.rfind("epoch,train_mse,val_mse,seconds\n1,0.5,0.25,1\n", 0), 0u);
}

TEST(Training, LinearModelFitsExactlyLinearTarget) {
    const WindowedDataset data = sinusoid(1200, 32, 8, 0.0);
    ModelConfig c = small_model(32, 8);
    c.n_blocks = 0;
    c.instance_norm = false;
    c.dropout = 0.0;
    PSLSTMModel model(c, 4);
    TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    cfg.learning_rate = 1e-2;
    cfg.seed = 4;
    const TrainResult r = train(model, data, cfg);
    ASSERT_FALSE(r.diverged) << r.diagnostic;
    EXPECT_LT(evaluate(model, data, Split::train).mse, 1e-3);
}

TEST(Metrics, MatchNaiveRecomputationOverWindows) {
    const WindowedDataset data = sinusoid(700, 32, 8);
    PSLSTMModel model(small_model(32, 8), 6);
    for (Split s : {Split::train, Split::val, Split::test}) {
        const Metrics m = evaluate(model, data, s);
        double se = 0.0, ae = 0.0;
        std::size_t count = 0;
        for (std::size_t start : data.windows(s)) {
            Tensor x({1, 32, 1});
            for (std::size_t t = 0; t < 32; ++t) x(0, t, 0) = data.series(start + t, 0);
            const Tensor y = model.predict(x);
            for (std::size_t t = 0; t < 8; ++t) {
                const double d = y(0, t, 0) - data.series(start + 32 + t, 0);
                se += d * d;
                ae += std::abs(d);
                ++count;
            }
        }
        EXPECT_EQ(m.n_elements, count);
        EXPECT_NEAR(m.mse, se / count, 1e-12);
        EXPECT_NEAR(m.mae, ae / count, 1e-12);
    }
}
