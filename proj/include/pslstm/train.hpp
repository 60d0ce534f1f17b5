#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pslstm/data.hpp"
#include "pslstm/model.hpp"

namespace pslstm {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    double clip_norm = 1.0;
    std::uint64_t seed = 2024;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Caps optimizer steps per epoch; 0 uses every training window.
    std::size_t max_batches_per_epoch = 0;

    void validate() const;
};

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::size_t n_samples = 0;   // windows
    std::size_t n_elements = 0;  // windows * horizon * channels
};

/// Accumulates squared and absolute errors in a fixed order.
class MetricsAccumulator {
public:
    void add(const Tensor& yhat, const Tensor& y, std::size_t windows);
    Metrics result() const;

private:
    double sq_ = 0.0;
    double abs_ = 0.0;
    std::size_t windows_ = 0;
    std::size_t elements_ = 0;
};

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean squared error over every element and its gradient 2(yhat - y)/count.
LossResult mse_loss(const Tensor& yhat, const Tensor& y);

/// Scales every gradient by clip_norm / g when the global L2 norm g exceeds
/// clip_norm. Returns g before clipping.
double clip_gradients(const ParamList& params, double clip_norm);

/// Bias-corrected adaptive-moment optimizer. Masked entries are never updated.
class Adam {
public:
    explicit Adam(const TrainConfig& config);

    /// Throws NumericError naming the parameter if any gradient is non-finite.
    void step(const ParamList& params);
    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
    double best_val_mse = 0.0;
    std::size_t steps = 0;
    bool diverged = false;
    std::string diagnostic;
};

/// Mini-batch training with early stopping on validation MSE. On return the
/// model holds the parameters of the best validation epoch (or its initial
/// parameters when no epoch completed).
TrainResult train(PSLSTMModel& model, const WindowedDataset& data, const TrainConfig& config);

enum class MetricScale { normalized, raw };

Metrics evaluate(const PSLSTMModel& model, const WindowedDataset& data, Split split,
                 MetricScale scale = MetricScale::normalized, std::size_t batch_size = 256);

enum class Baseline { persistence, train_mean };

/// persistence repeats the last observed value; train_mean predicts the
/// train-split mean (0 on the standardized scale).
Metrics evaluate_baseline(const WindowedDataset& data, Split split, Baseline baseline,
                          MetricScale scale = MetricScale::normalized);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace pslstm
