#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pslstm/gradcheck.hpp"
#include "pslstm/layers.hpp"
#include "pslstm/parameter.hpp"
#include "pslstm/slstm.hpp"

namespace pslstm {

enum class ChannelStrategy { independent, mixed };

std::string to_string(ChannelStrategy s);
ChannelStrategy parse_channel_strategy(const std::string& s);

struct ModelConfig {
    std::size_t lookback = 96;
    std::size_t horizon = 24;
    std::size_t n_channels = 1;
    std::size_t patch_size = 16;
    std::size_t patch_stride = 16;
    std::size_t embed_dim = 16;
    /// 0 gives a purely linear patch-embed + head model.
    std::size_t n_blocks = 1;
    std::size_t n_heads = 2;
    GateMode gate_mode;
    ChannelStrategy channel_strategy = ChannelStrategy::independent;
    double dropout = 0.1;
    bool instance_norm = true;
    double forget_bias_init = -1.0;

    std::size_t n_patches() const { return (lookback - patch_size) / patch_stride + 1; }
    /// Oldest timesteps dropped so the last patch ends exactly at the last observation.
    std::size_t patch_offset() const { return (lookback - patch_size) % patch_stride; }
    /// Channels folded into one recurrent row: 1 under channel independence, M when mixed.
    std::size_t channel_group() const {
        return channel_strategy == ChannelStrategy::independent ? 1 : n_channels;
    }
    std::size_t hidden_width() const { return embed_dim * channel_group(); }

    void validate() const;
};

/// [B x L x M] -> [(B*M) x N x P]; row b*M + m holds channel m of sample b.
Tensor patchify(const Tensor& x, const ModelConfig& config);

struct SLSTMBlock {
    SLSTMParams params;
    SLSTMParams grads;
    Tensor recurrent_mask;  // block mask, or all zeros when memory mixing is off
    LayerNorm norm;
};

class PSLSTMModel {
public:
    struct BlockTape {
        Tensor input;  // rows x N x width
        CellTape cell;
        LayerNorm::Cache norm;
        Tensor dropout;  // empty when inactive
    };

    struct Tape {
        std::size_t batch = 0;
        Tensor mean, scale;  // B x M instance statistics (scale 1 / mean 0 when disabled)
        Tensor tokens;       // (rows*N) x token width
        Tensor embed_dropout;
        std::vector<BlockTape> blocks;
        Tensor head_input;   // rows x (N*width)
    };

    struct Output {
        Tensor yhat;  // B x T x M
        Tape tape;
    };

    PSLSTMModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    /// Dropout is active only when `dropout_rng` is given.
    Output forward(const Tensor& x, Rng* dropout_rng = nullptr) const;
    Tensor predict(const Tensor& x) const { return forward(x).yhat; }
    /// Accumulates parameter gradients of sum(grad_yhat * yhat).
    void backward(const Tape& tape, const Tensor& grad_yhat);

    ParamList parameters();
    std::size_t count_params() const;
    void zero_grad();
    bool block_structure_intact() const;

    Linear embed;
    std::vector<SLSTMBlock> blocks;
    Linear head;

private:
    Tensor make_tokens(const Tensor& x, Tensor& mean, Tensor& scale) const;

    ModelConfig config_;
    std::uint64_t seed_;
};

/// Forward pass of a channel-mixing model; rejects channel-independent configs.
Tensor channel_mixed_forward(const PSLSTMModel& model, const Tensor& x);

/// Whole-model gradient check with a random linear read-out of yhat as loss.
GradCheckResult grad_check_model(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                 double epsilon = 1e-5);

}  // namespace pslstm
