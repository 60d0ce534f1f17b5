#include "pslstm/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace pslstm {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (batch_size == 0) fail("batch_size must be positive");
    if (patience == 0) fail("patience must be positive");
    if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
    if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0)) fail("need 0 < beta1 < beta2 < 1");
    if (!(eps > 0.0)) fail("eps must be > 0");
}

void MetricsAccumulator::add(const Tensor& yhat, const Tensor& y, std::size_t windows) {
    if (yhat.shape() != y.shape()) {
        throw ShapeError("metrics: prediction " + to_string(yhat.shape()) + " vs target " + to_string(y.shape()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = yhat[i] - y[i];
        sq_ += e * e;
        abs_ += std::abs(e);
    }
    elements_ += y.size();
    windows_ += windows;
}

Metrics MetricsAccumulator::result() const {
    if (elements_ == 0) return {};
    const auto n = static_cast<double>(elements_);
    return {sq_ / n, abs_ / n, windows_, elements_};
}

LossResult mse_loss(const Tensor& yhat, const Tensor& y) {
    if (yhat.shape() != y.shape()) {
        throw ShapeError("mse_loss: prediction " + to_string(yhat.shape()) + " vs target " + to_string(y.shape()));
    }
    LossResult r;
    r.grad = Tensor(y.shape());
    const auto n = static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = yhat[i] - y[i];
        r.loss += e * e;
        r.grad[i] = 2.0 * e / n;
    }
    r.loss /= n;
    return r;
}

double clip_gradients(const ParamList& params, double clip_norm) {
    if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad->data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (const auto& p : params)
            for (double& g : p.grad->data()) g *= scale;
    }
    return norm;
}

Adam::Adam(const TrainConfig& config)
    : lr_(config.learning_rate), beta1_(config.beta1), beta2_(config.beta2), eps_(config.eps) {}

void Adam::step(const ParamList& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed between steps");
    for (const auto& p : params) {
        if (p.mask != nullptr) {
            for (std::size_t i = 0; i < p.grad->size(); ++i) (*p.grad)[i] *= (*p.mask)[i];
        }
        if (!p.grad->all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            if (!p.trainable(i)) continue;
            const double g = (*p.grad)[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            (*p.value)[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

namespace {

std::vector<Tensor> snapshot(const ParamList& params) {
    std::vector<Tensor> values;
    values.reserve(params.size());
    for (const auto& p : params) values.push_back(*p.value);
    return values;
}

void restore(const ParamList& params, const std::vector<Tensor>& values) {
    for (std::size_t k = 0; k < params.size(); ++k) *params[k].value = values[k];
}

}  // namespace

TrainResult train(PSLSTMModel& model, const WindowedDataset& data, const TrainConfig& config) {
    config.validate();
    if (data.train.empty() || data.val.empty()) {
        throw std::invalid_argument("training needs non-empty train and val splits");
    }
    if (data.channels() != model.config().n_channels || data.lookback != model.config().lookback ||
        data.horizon != model.config().horizon) {
        throw ShapeError("dataset (L=" + std::to_string(data.lookback) + ", T=" + std::to_string(data.horizon) +
                         ", M=" + std::to_string(data.channels()) + ") does not match the model configuration");
    }
    TrainResult result;
    ParamList params = model.parameters();
    std::vector<Tensor> best = snapshot(params);
    result.best_val_mse = std::numeric_limits<double>::infinity();
    Adam adam(config);
    const Rng root(config.seed);

    std::vector<std::size_t> order(data.train.size());
    std::size_t epochs_without_improvement = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = root.fork(2 * epoch);
        Rng dropout_rng = root.fork(2 * epoch + 1);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            if (config.max_batches_per_epoch != 0 && batches == config.max_batches_per_epoch) break;
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> positions(order.data() + start, end - start);
            const auto batch = data.batch(Split::train, positions);
            auto out = model.forward(batch.x, &dropout_rng);
            const LossResult loss = mse_loss(out.yhat, batch.y);
            if (!std::isfinite(loss.loss)) {
                restore(params, best);
                result.diverged = true;
                result.diagnostic = "training loss became non-finite in epoch " + std::to_string(epoch);
                return result;
            }
            model.zero_grad();
            model.backward(out.tape, loss.grad);
            try {
                for (const auto& p : params) {
                    if (!p.grad->all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
                }
                clip_gradients(params, config.clip_norm);
                adam.step(params);
            } catch (const NumericError& e) {
                restore(params, best);
                result.diverged = true;
                result.diagnostic = std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")";
                return result;
            }
            loss_sum += loss.loss * static_cast<double>(positions.size());
            loss_count += positions.size();
            ++batches;
        }
        result.steps = adam.steps();

        const Metrics val = evaluate(model, data, Split::val);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back({epoch, loss_sum / static_cast<double>(loss_count), val.mse, seconds});
        if (!std::isfinite(val.mse)) {
            restore(params, best);
            result.diverged = true;
            result.diagnostic = "validation loss became non-finite in epoch " + std::to_string(epoch);
            return result;
        }
        if (val.mse < result.best_val_mse) {
            result.best_val_mse = val.mse;
            result.best_epoch = epoch;
            best = snapshot(params);
            epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= config.patience) {
            break;
        }
    }
    restore(params, best);
    if (result.best_epoch == 0) result.best_val_mse = 0.0;
    return result;
}

Metrics evaluate(const PSLSTMModel& model, const WindowedDataset& data, Split split, MetricScale scale,
                 std::size_t batch_size) {
    const auto& windows = data.windows(split);
    if (windows.empty()) throw std::invalid_argument("cannot evaluate on an empty " + to_string(split) + " split");
    const std::size_t M = data.channels();
    MetricsAccumulator acc;
    std::vector<std::size_t> positions;
    for (std::size_t start = 0; start < windows.size(); start += batch_size) {
        const std::size_t end = std::min(windows.size(), start + batch_size);
        positions.resize(end - start);
        std::iota(positions.begin(), positions.end(), start);
        auto batch = data.batch(split, positions);
        Tensor yhat = model.predict(batch.x);
        if (scale == MetricScale::raw) {
            for (std::size_t i = 0; i < yhat.size(); ++i) {
                const double s = data.stats.std[i % M];
                yhat[i] *= s;
                batch.y[i] *= s;
            }
        }
        acc.add(yhat, batch.y, positions.size());
    }
    return acc.result();
}

Metrics evaluate_baseline(const WindowedDataset& data, Split split, Baseline baseline, MetricScale scale) {
    const auto& windows = data.windows(split);
    if (windows.empty()) throw std::invalid_argument("cannot evaluate on an empty " + to_string(split) + " split");
    const std::size_t M = data.channels(), L = data.lookback, T = data.horizon;
    MetricsAccumulator acc;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::size_t pos[1] = {w};
        auto batch = data.batch(split, pos);
        Tensor yhat({1, T, M});
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t m = 0; m < M; ++m)
                yhat(0, t, m) = baseline == Baseline::persistence ? batch.x(0, L - 1, m) : 0.0;
        if (scale == MetricScale::raw) {
            for (std::size_t i = 0; i < yhat.size(); ++i) {
                yhat[i] *= data.stats.std[i % M];
                batch.y[i] *= data.stats.std[i % M];
            }
        }
        acc.add(yhat, batch.y, 1);
    }
    return acc.result();
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,train_mse,val_mse,seconds\n";
    for (const auto& r : history) out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << ',' << r.seconds << '\n';
    return out.str();
}

}  // namespace pslstm
