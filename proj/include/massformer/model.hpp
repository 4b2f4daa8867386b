#pragma once

// Two-tier transformer detector: a shared SU-tier encoder per secondary user,
// element-wise max fusion across SUs, and a collaborative-tier encoder over
// the fused token sequence. Both tiers end in attention-based sequence
// pooling and a small classification head.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "massformer/dataset.hpp"
#include "massformer/errors.hpp"
#include "massformer/rng.hpp"
#include "massformer/tensor.hpp"

namespace massformer {

// Elementwise map applied to raw planes before standardization.
enum class input_transform { none, signed_log1p };

inline void apply_transform(input_transform t, std::span<double> v) {
    if (t == input_transform::signed_log1p)
        for (auto& x : v) x = std::copysign(std::log1p(std::abs(x)), x);
}

struct model_config {
    std::size_t seq_len = 20;     // λ
    std::size_t plane_size = 16;  // H (= W)
    std::size_t channels = 3;     // C
    std::size_t tube_t = 20;
    std::size_t tube_h = 1;
    std::size_t tube_w = 1;
    std::size_t d_model = 24;
    std::size_t heads = 4;
    std::size_t su_layers = 5;
    std::size_t collab_layers = 4;
    std::size_t mlp_hidden = 48;
    std::vector<std::size_t> head_units{128, 64};
    std::size_t classes = 2;
    input_transform transform = input_transform::signed_log1p;

    std::size_t tokens() const { return (seq_len / tube_t) * (plane_size / tube_h) * (plane_size / tube_w); }
    std::size_t tube_volume() const { return tube_t * tube_h * tube_w * channels; }
    std::size_t head_dim() const { return d_model / heads; }
    std::size_t input_volume() const { return seq_len * plane_size * plane_size * channels; }

    void validate() const {
        if (d_model == 0 || heads == 0 || d_model % heads != 0)
            throw config_error("model: d_model must be a positive multiple of heads");
        if (tube_t == 0 || tube_h == 0 || tube_w == 0 || seq_len % tube_t != 0 || plane_size % tube_h != 0 ||
            plane_size % tube_w != 0)
            throw config_error("model: tube dimensions must divide (lambda, H, H) exactly");
        if (channels != 2 && channels != 3) throw config_error("model: channels must be 2 or 3");
        if (mlp_hidden == 0 || classes != 2) throw config_error("model: bad MLP or class count");
        for (auto u : head_units)
            if (u == 0) throw config_error("model: zero-width head layer");
    }

    bool operator==(const model_config&) const = default;
};

struct encoder_params {
    ad::tensor ln1_gain, ln1_bias;
    std::vector<ad::tensor> wq, wk, wv;  // per head, d × d_k
    ad::tensor wo;                       // (heads·d_k) × d
    ad::tensor ln2_gain, ln2_bias;
    ad::tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Final layer norm, sequence-pool scorer and classification MLP.
struct head_params {
    ad::tensor ln_gain, ln_bias;
    ad::tensor pool_w;  // d × 1
    std::vector<ad::tensor> weights, biases;
};

struct su_tier_params {
    ad::tensor embed_w;  // tube volume × d (strided 3-D convolution kernel)
    ad::tensor embed_b;
    ad::tensor position;  // N_t × d
    std::vector<encoder_params> layers;
    head_params head;
};

struct collab_tier_params {
    ad::tensor proj_w;  // d × d
    ad::tensor proj_b;
    ad::tensor position;
    std::vector<encoder_params> layers;
    head_params head;
};

// Collects intermediate probability maps for inspection.
struct forward_trace {
    std::vector<ad::tensor> attention;      // each N_t × N_t, rows sum to 1
    std::vector<ad::tensor> pool_weights;   // each 1 × N_t
};

namespace detail {

inline ad::tensor truncated_normal(ad::shape_t shape, double stddev, rng_t& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) {
        double z;
        do z = nd(rng);
        while (std::abs(z) > 2.0);
        x = z * stddev;
    }
    return ad::tensor::from(std::move(shape), std::move(v), true);
}

inline ad::tensor param_zeros(ad::shape_t shape) { return ad::tensor::zeros(std::move(shape), true); }
inline ad::tensor param_ones(ad::shape_t shape) { return ad::tensor::full(std::move(shape), 1.0, true); }

inline encoder_params make_encoder(const model_config& c, rng_t& rng) {
    const std::size_t d = c.d_model, dk = c.head_dim();
    encoder_params p;
    p.ln1_gain = param_ones({d});
    p.ln1_bias = param_zeros({d});
    for (std::size_t h = 0; h < c.heads; ++h) {
        p.wq.push_back(truncated_normal({d, dk}, 0.02, rng));
        p.wk.push_back(truncated_normal({d, dk}, 0.02, rng));
        p.wv.push_back(truncated_normal({d, dk}, 0.02, rng));
    }
    p.wo = truncated_normal({c.heads * dk, d}, 0.02, rng);
    p.ln2_gain = param_ones({d});
    p.ln2_bias = param_zeros({d});
    p.mlp_w1 = truncated_normal({d, c.mlp_hidden}, 0.02, rng);
    p.mlp_b1 = param_zeros({c.mlp_hidden});
    p.mlp_w2 = truncated_normal({c.mlp_hidden, d}, 0.02, rng);
    p.mlp_b2 = param_zeros({d});
    return p;
}

inline head_params make_head(const model_config& c, rng_t& rng) {
    head_params h;
    h.ln_gain = param_ones({c.d_model});
    h.ln_bias = param_zeros({c.d_model});
    h.pool_w = truncated_normal({c.d_model, 1}, 0.02, rng);
    std::size_t in = c.d_model;
    std::vector<std::size_t> widths = c.head_units;
    widths.push_back(c.classes);
    for (auto w : widths) {
        h.weights.push_back(truncated_normal({in, w}, 0.02, rng));
        h.biases.push_back(param_zeros({w}));
        in = w;
    }
    return h;
}

inline void list_encoder(std::vector<std::pair<std::string, ad::tensor>>& out, const std::string& prefix,
                         const encoder_params& p) {
    out.emplace_back(prefix + ".ln1.gain", p.ln1_gain);
    out.emplace_back(prefix + ".ln1.bias", p.ln1_bias);
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        out.emplace_back(prefix + ".attn.wq." + std::to_string(h), p.wq[h]);
        out.emplace_back(prefix + ".attn.wk." + std::to_string(h), p.wk[h]);
        out.emplace_back(prefix + ".attn.wv." + std::to_string(h), p.wv[h]);
    }
    out.emplace_back(prefix + ".attn.wo", p.wo);
    out.emplace_back(prefix + ".ln2.gain", p.ln2_gain);
    out.emplace_back(prefix + ".ln2.bias", p.ln2_bias);
    out.emplace_back(prefix + ".mlp.w1", p.mlp_w1);
    out.emplace_back(prefix + ".mlp.b1", p.mlp_b1);
    out.emplace_back(prefix + ".mlp.w2", p.mlp_w2);
    out.emplace_back(prefix + ".mlp.b2", p.mlp_b2);
}

inline void list_head(std::vector<std::pair<std::string, ad::tensor>>& out, const std::string& prefix,
                      const head_params& h) {
    out.emplace_back(prefix + ".norm.gain", h.ln_gain);
    out.emplace_back(prefix + ".norm.bias", h.ln_bias);
    out.emplace_back(prefix + ".pool.w", h.pool_w);
    for (std::size_t i = 0; i < h.weights.size(); ++i) {
        out.emplace_back(prefix + ".mlp.w" + std::to_string(i), h.weights[i]);
        out.emplace_back(prefix + ".mlp.b" + std::to_string(i), h.biases[i]);
    }
}

}  // namespace detail

// Rearranges λ×H×H×C planes into N_t rows of flattened (t,h,w,C) tubes.
// Tubes are ordered (time, row, column); values inside a tube are ordered
// (dt, dh, dw, channel).
inline std::vector<double> extract_tubes(std::span<const double> planes, const model_config& c) {
    if (planes.size() != c.input_volume())
        throw config_error("tokenize: input holds " + std::to_string(planes.size()) + " values, expected " +
                           std::to_string(c.input_volume()));
    const std::size_t H = c.plane_size, C = c.channels;
    const std::size_t nt = c.seq_len / c.tube_t, nh = H / c.tube_h, nw = H / c.tube_w;
    std::vector<double> out;
    out.reserve(planes.size());
    for (std::size_t it = 0; it < nt; ++it)
        for (std::size_t ih = 0; ih < nh; ++ih)
            for (std::size_t iw = 0; iw < nw; ++iw)
                for (std::size_t dt = 0; dt < c.tube_t; ++dt)
                    for (std::size_t dh = 0; dh < c.tube_h; ++dh)
                        for (std::size_t dw = 0; dw < c.tube_w; ++dw) {
                            const std::size_t t = it * c.tube_t + dt, i = ih * c.tube_h + dh, j = iw * c.tube_w + dw;
                            const double* px = planes.data() + ((t * H + i) * H + j) * C;
                            out.insert(out.end(), px, px + C);
                        }
    return out;
}

// Tube projection plus positional embedding: N_t × d.
inline ad::tensor tokenize(std::span<const double> planes, const model_config& c, const su_tier_params& p) {
    auto tubes = ad::tensor::from({c.tokens(), c.tube_volume()}, extract_tubes(planes, c));
    return ad::add(ad::affine(tubes, p.embed_w, p.embed_b), p.position);
}

// Multi-head self-attention over already-normalized tokens x (N_t × d).
inline ad::tensor self_attention(const ad::tensor& x, const encoder_params& p, forward_trace* trace = nullptr) {
    const std::size_t heads = p.wq.size();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(p.wq.front().dim(1)));
    std::vector<ad::tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto q = ad::matmul(x, p.wq[h]);
        auto k = ad::matmul(x, p.wk[h]);
        auto v = ad::matmul(x, p.wv[h]);
        auto attn = ad::softmax_lastdim(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dk));
        if (trace) trace->attention.push_back(attn);
        outs.push_back(ad::matmul(attn, v));
    }
    auto joined = heads == 1 ? outs.front() : ad::concat(outs, 1);
    return ad::matmul(joined, p.wo);
}

// Pre-norm encoder layer: c = MSA(LN(z)) + z; z' = MLP(LN(c)) + c.
inline ad::tensor encoder_layer(const ad::tensor& z, const encoder_params& p, forward_trace* trace = nullptr) {
    auto c = ad::add(self_attention(ad::layernorm(z, p.ln1_gain, p.ln1_bias), p, trace), z);
    auto h = ad::gelu(ad::affine(ad::layernorm(c, p.ln2_gain, p.ln2_bias), p.mlp_w1, p.mlp_b1));
    return ad::add(ad::affine(h, p.mlp_w2, p.mlp_b2), c);
}

// softmax(g(z)ᵀ)·z, a 1 × d summary of the token sequence.
inline ad::tensor sequence_pool(const ad::tensor& z, const ad::tensor& scorer, forward_trace* trace = nullptr) {
    auto weights = ad::softmax_lastdim(ad::transpose(ad::matmul(z, scorer)));
    if (trace) trace->pool_weights.push_back(weights);
    return ad::matmul(weights, z);
}

// Returns 1 × classes logits.
inline ad::tensor classify(const ad::tensor& z, const head_params& h, forward_trace* trace = nullptr) {
    auto x = sequence_pool(ad::layernorm(z, h.ln_gain, h.ln_bias), h.pool_w, trace);
    const std::size_t last = h.weights.size() - 1;
    for (std::size_t i = 0; i < last; ++i) x = ad::gelu(ad::affine(x, h.weights[i], h.biases[i]));
    return ad::affine(x, h.weights[last], h.biases[last]);
}

struct tier_output {
    ad::tensor logits;  // 1 × 2
    ad::tensor probs;   // 1 × 2, (H0, H1)
};

struct su_output {
    tier_output prediction;
    ad::tensor tokens;  // K_s, N_t × d
};

// Stacks the SU token sequences and keeps the per-position maximum.
inline ad::tensor fuse(const std::vector<ad::tensor>& su_tokens) {
    if (su_tokens.empty()) throw contract_error("fuse: no SU features");
    for (const auto& k : su_tokens)
        if (k.shape() != su_tokens.front().shape()) throw contract_error("fuse: SU feature shapes differ");
    if (su_tokens.size() == 1) return su_tokens.front();
    return ad::max_leading(ad::stack(su_tokens));
}

class massformer_model {
public:
    massformer_model() = default;

    massformer_model(model_config cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        rng_t rng{derive_seed(seed, 0x5eedULL)};
        const std::size_t d = cfg_.d_model;
        su_.embed_w = detail::truncated_normal({cfg_.tube_volume(), d}, 0.02, rng);
        su_.embed_b = detail::param_zeros({d});
        su_.position = detail::truncated_normal({cfg_.tokens(), d}, 0.02, rng);
        for (std::size_t l = 0; l < cfg_.su_layers; ++l) su_.layers.push_back(detail::make_encoder(cfg_, rng));
        su_.head = detail::make_head(cfg_, rng);
        collab_.proj_w = detail::truncated_normal({d, d}, 0.02, rng);
        collab_.proj_b = detail::param_zeros({d});
        collab_.position = detail::truncated_normal({cfg_.tokens(), d}, 0.02, rng);
        for (std::size_t l = 0; l < cfg_.collab_layers; ++l) collab_.layers.push_back(detail::make_encoder(cfg_, rng));
        collab_.head = detail::make_head(cfg_, rng);
    }

    const model_config& config() const { return cfg_; }
    const su_tier_params& su_tier() const { return su_; }
    const collab_tier_params& collab_tier() const { return collab_; }
    su_tier_params& su_tier() { return su_; }
    collab_tier_params& collab_tier() { return collab_; }

    const channel_stats& input_stats() const { return stats_; }
    void set_input_stats(channel_stats s) {
        if (!s.empty() && s.mean.size() != cfg_.channels) throw config_error("model: stats channel count mismatch");
        stats_ = std::move(s);
    }

    std::vector<std::pair<std::string, ad::tensor>> su_parameters() const {
        std::vector<std::pair<std::string, ad::tensor>> out;
        out.emplace_back("su.embed.w", su_.embed_w);
        out.emplace_back("su.embed.b", su_.embed_b);
        out.emplace_back("su.position", su_.position);
        for (std::size_t l = 0; l < su_.layers.size(); ++l)
            detail::list_encoder(out, "su.layer" + std::to_string(l), su_.layers[l]);
        detail::list_head(out, "su.head", su_.head);
        return out;
    }

    std::vector<std::pair<std::string, ad::tensor>> collab_parameters() const {
        std::vector<std::pair<std::string, ad::tensor>> out;
        out.emplace_back("collab.proj.w", collab_.proj_w);
        out.emplace_back("collab.proj.b", collab_.proj_b);
        out.emplace_back("collab.position", collab_.position);
        for (std::size_t l = 0; l < collab_.layers.size(); ++l)
            detail::list_encoder(out, "collab.layer" + std::to_string(l), collab_.layers[l]);
        detail::list_head(out, "collab.head", collab_.head);
        return out;
    }

    std::vector<std::pair<std::string, ad::tensor>> parameters() const {
        auto out = su_parameters();
        auto tail = collab_parameters();
        out.insert(out.end(), tail.begin(), tail.end());
        return out;
    }

    void set_su_trainable(bool on) {
        for (auto& [name, t] : su_parameters()) t.set_requires_grad(on);
    }
    void set_collab_trainable(bool on) {
        for (auto& [name, t] : collab_parameters()) t.set_requires_grad(on);
    }
    void zero_grad() {
        for (auto& [name, t] : parameters()) t.zero_grad();
    }

    // Deep copy; the copy owns fresh parameter storage.
    massformer_model clone() const {
        massformer_model m(*this);
        auto src = parameters();
        m.rebind_fresh();
        auto dst = m.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::copy(src[i].second.data().begin(), src[i].second.data().end(), dst[i].second.mutable_data().begin());
            dst[i].second.set_requires_grad(src[i].second.requires_grad());
        }
        return m;
    }

    std::uint64_t parameter_hash() const {
        fnv1a h;
        for (const auto& [name, t] : parameters()) {
            h.update(name);
            h.update(t.data());
        }
        return h.digest();
    }

    // Input transform, then standardization (if fitted), on a copy of raw planes.
    std::vector<double> prepare_input(std::span<const double> raw) const {
        std::vector<double> x(raw.begin(), raw.end());
        apply_transform(cfg_.transform, x);
        if (!stats_.empty()) stats_.apply(x);
        return x;
    }

private:
    void rebind_fresh() {
        auto fresh = [](ad::tensor& t) { t = ad::tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad()); };
        auto fresh_enc = [&](encoder_params& p) {
            for (auto* t : {&p.ln1_gain, &p.ln1_bias, &p.wo, &p.ln2_gain, &p.ln2_bias, &p.mlp_w1, &p.mlp_b1, &p.mlp_w2,
                            &p.mlp_b2})
                fresh(*t);
            for (auto& t : p.wq) fresh(t);
            for (auto& t : p.wk) fresh(t);
            for (auto& t : p.wv) fresh(t);
        };
        auto fresh_head = [&](head_params& h) {
            fresh(h.ln_gain);
            fresh(h.ln_bias);
            fresh(h.pool_w);
            for (auto& t : h.weights) fresh(t);
            for (auto& t : h.biases) fresh(t);
        };
        for (auto* t : {&su_.embed_w, &su_.embed_b, &su_.position}) fresh(*t);
        for (auto& l : su_.layers) fresh_enc(l);
        fresh_head(su_.head);
        for (auto* t : {&collab_.proj_w, &collab_.proj_b, &collab_.position}) fresh(*t);
        for (auto& l : collab_.layers) fresh_enc(l);
        fresh_head(collab_.head);
    }

    model_config cfg_;
    su_tier_params su_;
    collab_tier_params collab_;
    channel_stats stats_;
};

inline tier_output finish_tier(ad::tensor logits) {
    auto probs = ad::softmax_lastdim(logits);
    return {std::move(logits), std::move(probs)};
}

// SU tier on one SU's raw planes: tokens → L1 encoders → K_s, plus the
// SU-level prediction from the pooled K_s.
inline su_output su_forward(std::span<const double> raw_planes, const massformer_model& m,
                            forward_trace* trace = nullptr) {
    const auto& p = m.su_tier();
    auto input = m.prepare_input(raw_planes);
    auto z = tokenize(input, m.config(), p);
    for (const auto& layer : p.layers) z = encoder_layer(z, layer, trace);
    su_output out;
    out.tokens = z;
    out.prediction = finish_tier(classify(z, p.head, trace));
    return out;
}

// Collaborative tier on the fused N_t × d sequence.
inline tier_output collaborative_forward(const ad::tensor& fused, const massformer_model& m,
                                         forward_trace* trace = nullptr) {
    const auto& p = m.collab_tier();
    auto z = ad::add(ad::affine(fused, p.proj_w, p.proj_b), p.position);
    for (const auto& layer : p.layers) z = encoder_layer(z, layer, trace);
    return finish_tier(classify(z, p.head, trace));
}

struct group_output {
    tier_output group;
    std::vector<su_output> per_su;
};

// Full cooperative forward pass over the S SUs of one sample.
inline group_output massformer_forward(const std::vector<std::span<const double>>& su_planes,
                                       const massformer_model& m, forward_trace* trace = nullptr) {
    group_output out;
    std::vector<ad::tensor> tokens;
    for (const auto& planes : su_planes) {
        out.per_su.push_back(su_forward(planes, m, trace));
        tokens.push_back(out.per_su.back().tokens);
    }
    out.group = collaborative_forward(fuse(tokens), m, trace);
    return out;
}

inline std::vector<std::span<const double>> sample_inputs(const plane_dataset& ds, std::size_t k) {
    std::vector<std::span<const double>> out;
    for (std::size_t s = 0; s < ds.su_count; ++s) out.push_back(ds.su_planes(k, s));
    return out;
}

struct parameter_row {
    std::string name;
    std::size_t su = 0;
    std::size_t collab = 0;
};

inline std::size_t tensor_count(const std::vector<ad::tensor>& ts) {
    std::size_t n = 0;
    for (const auto& t : ts) n += t.size();
    return n;
}

// Parameter counts per component and tier; last row is the total.
inline std::vector<parameter_row> parameter_breakdown(const massformer_model& m) {
    const auto& su = m.su_tier();
    const auto& co = m.collab_tier();
    auto enc = [](const std::vector<encoder_params>& layers) {
        std::size_t n = 0;
        for (const auto& p : layers)
            n += p.ln1_gain.size() + p.ln1_bias.size() + tensor_count(p.wq) + tensor_count(p.wk) + tensor_count(p.wv) +
                 p.wo.size() + p.ln2_gain.size() + p.ln2_bias.size() + p.mlp_w1.size() + p.mlp_b1.size() +
                 p.mlp_w2.size() + p.mlp_b2.size();
        return n;
    };
    std::vector<parameter_row> rows{
        {"Tube / input projection", su.embed_w.size() + su.embed_b.size(), co.proj_w.size() + co.proj_b.size()},
        {"Positional embedding", su.position.size(), co.position.size()},
        {"Encoder layers", enc(su.layers), enc(co.layers)},
        {"Final layer norm", su.head.ln_gain.size() + su.head.ln_bias.size(),
         co.head.ln_gain.size() + co.head.ln_bias.size()},
        {"Sequence pooling", su.head.pool_w.size(), co.head.pool_w.size()},
        {"MLP head", tensor_count(su.head.weights) + tensor_count(su.head.biases),
         tensor_count(co.head.weights) + tensor_count(co.head.biases)},
    };
    parameter_row total{"Total", 0, 0};
    for (const auto& r : rows) {
        total.su += r.su;
        total.collab += r.collab;
    }
    rows.push_back(total);
    return rows;
}

}  // namespace massformer
