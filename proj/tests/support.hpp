#pragma once

#include <random>
#include <span>
#include <vector>

#include "massformer/model.hpp"
#include "massformer/training.hpp"

namespace support {

// λ=2, H=4, d=8, two heads, one encoder layer per tier.
inline massformer::model_config micro_config() {
    massformer::model_config c;
    c.seq_len = 2;
    c.plane_size = 4;
    c.channels = 3;
    c.tube_t = 2;
    c.d_model = 8;
    c.heads = 2;
    c.su_layers = 1;
    c.collab_layers = 1;
    c.mlp_hidden = 16;
    c.head_units = {16, 8};
    return c;
}

inline std::vector<double> random_planes(const massformer::model_config& c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(c.input_volume());
    for (auto& x : v) x = nd(rng);
    return v;
}

// Replaces every parameter with N(0, std²) draws so gradients are not tiny.
inline void randomize(massformer::massformer_model& m, double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& [name, t] : m.parameters())
        for (auto& v : t.mutable_data()) v += nd(rng);
}

// Group cross-entropy plus the mean SU-level cross-entropy, so every
// parameter of both tiers feeds the loss.
inline massformer::ad::tensor joint_loss(const std::vector<std::span<const double>>& inputs,
                                         const massformer::massformer_model& m, int label) {
    using namespace massformer;
    auto out = massformer_forward(inputs, m);
    auto loss = cross_entropy(out.group.probs, label);
    for (const auto& su : out.per_su)
        loss = ad::add(loss, ad::scale(cross_entropy(su.prediction.probs, label), 1.0 / static_cast<double>(out.per_su.size())));
    return loss;
}

}  // namespace support
