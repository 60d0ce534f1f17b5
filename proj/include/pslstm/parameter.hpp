#pragma once

#include <string>
#include <vector>

#include "pslstm/tensor.hpp"

namespace pslstm {

/// Non-owning handle on one trainable tensor and its gradient buffer.
/// A non-null mask marks which entries are trainable (1) or structurally zero (0).
struct ParamView {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
    const Tensor* mask = nullptr;

    bool trainable(std::size_t index) const { return mask == nullptr || (*mask)[index] != 0.0; }
};

using ParamList = std::vector<ParamView>;

inline std::size_t count_trainable(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params)
        for (std::size_t i = 0; i < p.value->size(); ++i) n += p.trainable(i) ? 1 : 0;
    return n;
}

inline void zero_grads(const ParamList& params) {
    for (const auto& p : params) p.grad->fill(0.0);
}

}  // namespace pslstm
