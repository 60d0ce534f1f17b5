#include "pslstm/layers.hpp"

#include <cmath>

namespace pslstm {

Linear::Linear(std::size_t in, std::size_t out)
    : weight({out, in}), bias({out}), grad_weight({out, in}), grad_bias({out}) {}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
    Linear l(in, out);
    l.weight = rand_normal(rng, {out, in}, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    const std::size_t in = in_features(), out = out_features();
    if (x.rank() != 2 || x.dim(1) != in) {
        throw ShapeError("linear layer expects [rows x " + std::to_string(in) + "], got " + to_string(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    Tensor y({rows, out});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.raw() + r * in;
        double* yr = y.raw() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* w = weight.raw() + o * in;
            double acc = bias[o];
            for (std::size_t q = 0; q < in; ++q) acc += w[q] * xr[q];
            yr[o] = acc;
        }
    }
    return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& grad_y, bool need_input_grad) {
    const std::size_t in = in_features(), out = out_features();
    const std::size_t rows = x.dim(0);
    if (grad_y.shape() != Shape{rows, out}) {
        throw ShapeError("linear backward: gradient shape " + to_string(grad_y.shape()) + " does not match [" +
                         std::to_string(rows) + "x" + std::to_string(out) + "]");
    }
    Tensor dx = need_input_grad ? Tensor({rows, in}) : Tensor();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.raw() + r * in;
        const double* gr = grad_y.raw() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gr[o];
            if (g == 0.0) continue;
            grad_bias[o] += g;
            double* gw = grad_weight.raw() + o * in;
            for (std::size_t q = 0; q < in; ++q) gw[q] += g * xr[q];
            if (need_input_grad) {
                const double* w = weight.raw() + o * in;
                double* dxr = dx.raw() + r * in;
                for (std::size_t q = 0; q < in; ++q) dxr[q] += g * w[q];
            }
        }
    }
    return dx;
}

void Linear::append_params(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, &grad_weight, nullptr});
    out.push_back({prefix + ".bias", &bias, &grad_bias, nullptr});
}

LayerNorm::LayerNorm(std::size_t width)
    : gamma({width}, 1.0), beta({width}), grad_gamma({width}), grad_beta({width}) {}

Tensor LayerNorm::forward(const Tensor& x, Cache* cache) const {
    const std::size_t width = gamma.size();
    if (x.rank() != 2 || x.dim(1) != width) {
        throw ShapeError("layer norm expects [rows x " + std::to_string(width) + "], got " + to_string(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    Tensor y({rows, width});
    Tensor x_hat({rows, width});
    Tensor inv_std({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.raw() + r * width;
        double mu = 0.0;
        for (std::size_t q = 0; q < width; ++q) mu += xr[q];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t q = 0; q < width; ++q) var += (xr[q] - mu) * (xr[q] - mu);
        var /= static_cast<double>(width);
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[r] = is;
        for (std::size_t q = 0; q < width; ++q) {
            const double xh = (xr[q] - mu) * is;
            x_hat(r, q) = xh;
            y(r, q) = gamma[q] * xh + beta[q];
        }
    }
    if (cache != nullptr) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor LayerNorm::backward(const Cache& cache, const Tensor& grad_y) {
    const std::size_t width = gamma.size();
    const std::size_t rows = cache.x_hat.dim(0);
    if (grad_y.shape() != cache.x_hat.shape()) throw ShapeError("layer norm backward: gradient shape mismatch");
    Tensor dx({rows, width});
    const double inv_w = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t q = 0; q < width; ++q) {
            const double g = grad_y(r, q);
            const double xh = cache.x_hat(r, q);
            grad_gamma[q] += g * xh;
            grad_beta[q] += g;
            const double gh = g * gamma[q];
            sum_g += gh;
            sum_gx += gh * xh;
        }
        const double is = cache.inv_std[r];
        for (std::size_t q = 0; q < width; ++q) {
            const double gh = grad_y(r, q) * gamma[q];
            dx(r, q) = is * (gh - inv_w * sum_g - cache.x_hat(r, q) * inv_w * sum_gx);
        }
    }
    return dx;
}

void LayerNorm::append_params(ParamList& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma, &grad_gamma, nullptr});
    out.push_back({prefix + ".beta", &beta, &grad_beta, nullptr});
}

Tensor dropout_mask(Rng& rng, const Shape& shape, double rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
    Tensor mask(shape, 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& v : mask.data()) v = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

}  // namespace pslstm
