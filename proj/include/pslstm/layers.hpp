#pragma once

#include <string>

#include "pslstm/parameter.hpp"
#include "pslstm/rng.hpp"
#include "pslstm/tensor.hpp"

namespace pslstm {

/// y = W x + b applied to every row of a [rows x in] matrix.
struct Linear {
    Tensor weight;  // out x in
    Tensor bias;    // out
    Tensor grad_weight;
    Tensor grad_bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out);
    /// weight ~ N(0, 1/sqrt(in)), bias = 0.
    static Linear init(std::size_t in, std::size_t out, Rng& rng);

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }
    std::size_t param_count() const { return weight.size() + bias.size(); }

    Tensor forward(const Tensor& x) const;
    /// Accumulates parameter gradients; returns dL/dx unless `need_input_grad` is false.
    Tensor backward(const Tensor& x, const Tensor& grad_y, bool need_input_grad = true);
    void append_params(ParamList& out, const std::string& prefix);
};

/// Layer normalization over the last axis with learned gain and shift.
struct LayerNorm {
    static constexpr double kEps = 1e-5;
    Tensor gamma, beta;
    Tensor grad_gamma, grad_beta;

    struct Cache {
        Tensor x_hat;    // rows x width
        Tensor inv_std;  // rows
    };

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Cache& cache, const Tensor& grad_y);
    void append_params(ParamList& out, const std::string& prefix);
};

/// Inverted dropout mask: entries are 0 or 1/(1-rate).
Tensor dropout_mask(Rng& rng, const Shape& shape, double rate);

}  // namespace pslstm
