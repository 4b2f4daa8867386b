#pragma once

// Closed-form complexity expressions for the three detectors, a per-layer
// MAC count of the concrete model, and wall-clock latency benchmarking.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "massformer/config.hpp"
#include "massformer/dataset.hpp"
#include "massformer/model.hpp"
#include "massformer/pipeline.hpp"
#include "massformer/tensor.hpp"

namespace massformer {

struct complexity_inputs {
    std::uint64_t lambda = 1, M = 1, S = 1, N = 1;
    // CNN-LSTM
    std::uint64_t lstm_nf1 = 1, lstm_ns1 = 1, lstm_nl1 = 1, lstm_nl = 1, lstm_nfc1 = 1, lstm_nfc2 = 1;
    // 3-D CNN
    std::uint64_t c3d_nf1 = 1, c3d_nf2 = 1, c3d_ms1 = 1, c3d_ms2 = 1, c3d_dfc1 = 1, c3d_dfc2 = 1;
    // MASSFormer
    std::uint64_t L1 = 1, L2 = 1, h_att1 = 1, h_att2 = 1, d_emb1 = 1, d_emb2 = 1, d_fc1 = 1, d_fc2 = 1;
};

inline complexity_inputs unit_complexity_inputs() { return {}; }

// The published architecture settings (M rounded up to the 16×16 input).
inline complexity_inputs paper_complexity_inputs() {
    complexity_inputs c;
    c.lambda = 20;
    c.M = 16;
    c.S = 3;
    c.N = 100;
    c.lstm_nf1 = 32;
    c.lstm_ns1 = 3;
    c.lstm_nl1 = 32;
    c.lstm_nl = 32;
    c.lstm_nfc1 = 128;
    c.lstm_nfc2 = 2;
    c.c3d_nf1 = 32;
    c.c3d_nf2 = 24;
    c.c3d_ms1 = 3;
    c.c3d_ms2 = 3;
    c.c3d_dfc1 = 64;
    c.c3d_dfc2 = 2;
    c.L1 = 5;
    c.L2 = 4;
    c.h_att1 = 4;
    c.h_att2 = 4;
    c.d_emb1 = 24;
    c.d_emb2 = 24;
    c.d_fc1 = 48;
    c.d_fc2 = 48;
    return c;
}

struct complexity_terms {
    std::vector<std::pair<std::string, std::uint64_t>> terms;
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& [_, v] : terms) t += v;
        return t;
    }
};

inline complexity_terms complexity_cnn_lstm(const complexity_inputs& c) {
    return {{{"conv", c.lambda * c.M * c.M * c.lstm_nf1 * c.lstm_ns1 * c.lstm_ns1 * c.S},
             {"lstm", 4 * c.lambda * c.lstm_nl1 * (c.lstm_nf1 + c.lstm_nl)},
             {"dense1", c.lstm_nf1 * c.lstm_nfc1},
             {"dense2", c.lstm_nl * c.lstm_nfc2}}};
}

inline complexity_terms complexity_3dcnn(const complexity_inputs& c) {
    const auto m1 = c.c3d_ms1 * c.c3d_ms1 * c.c3d_ms1;
    const auto m2 = c.c3d_ms2 * c.c3d_ms2 * c.c3d_ms2;
    return {{{"conv1", c.lambda * c.M * c.M * c.c3d_nf1 * m1 * c.S},
             {"conv2", c.lambda * c.M * c.M * c.c3d_nf1 * c.c3d_nf2 * m2},
             {"dense1", c.c3d_nf2 * c.c3d_dfc1},
             {"dense2", c.c3d_dfc1 * c.c3d_dfc2}}};
}

inline complexity_terms complexity_massformer(const complexity_inputs& c) {
    return {{{"su_attention", c.L1 * c.h_att1 * c.M * c.M * c.lambda * c.d_emb1},
             {"su_mlp", c.L1 * c.M * c.d_fc1},
             {"collab_attention", c.L2 * c.h_att2 * c.M * c.M * c.lambda * c.d_emb2},
             {"collab_mlp", c.L2 * c.M * c.d_fc2}}};
}

// Totals printed in the published comparison tables.
struct published_totals {
    static constexpr std::uint64_t massformer = 23'519'168;
    static constexpr std::uint64_t cnn_lstm = 9'830'400;
    static constexpr std::uint64_t cnn3d = 203'836'544;
};

// One counted row. Encoder rows hold per-layer counts times the layer count.
struct flops_row {
    std::string name;
    std::uint64_t su_per_layer = 0, collab_per_layer = 0;
    std::uint64_t su_layers = 1, collab_layers = 1;
    std::uint64_t su_params = 0, collab_params = 0;
    std::optional<std::uint64_t> published_su, published_collab;  // per layer for encoder rows
    bool encoder = false;

    std::uint64_t su() const { return su_per_layer * su_layers; }
    std::uint64_t collab() const { return collab_per_layer * collab_layers; }
};

struct flops_breakdown {
    std::vector<flops_row> rows;
    std::uint64_t cm_macs_per_matrix = 0;  // M²N complex MACs for one CM
    std::uint64_t cm_macs_per_sample = 0;  // λ·S CMs

    std::uint64_t su_total() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.su();
        return t;
    }
    std::uint64_t collab_total() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.collab();
        return t;
    }
    // One SU tier pass plus the collaborative tier, as tabulated.
    std::uint64_t total() const { return su_total() + collab_total(); }
    std::uint64_t su_params() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.su_params;
        return t;
    }
    std::uint64_t collab_params() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.collab_params;
        return t;
    }
    std::uint64_t encoder_su() const {
        std::uint64_t t = 0;
        for (const auto& r : rows)
            if (r.encoder) t += r.su();
        return t;
    }
    std::uint64_t encoder_collab() const {
        std::uint64_t t = 0;
        for (const auto& r : rows)
            if (r.encoder) t += r.collab();
        return t;
    }
};

// Multiply-accumulates per component. Softmax exponentials, GeLU and
// additions of biases or residuals are not counted.
inline flops_breakdown count_model_flops(const model_config& c, std::size_t antennas = 16, std::size_t samples = 100,
                                         std::size_t su_count = 3) {
    c.validate();
    using u64 = std::uint64_t;
    const u64 nt = c.tokens(), d = c.d_model, hid = c.mlp_hidden;
    flops_breakdown b;

    flops_row embed;
    embed.name = "Patch Embedding";
    embed.su_per_layer = nt * d * c.tube_volume();
    embed.collab_per_layer = nt * d * d;
    embed.su_params = c.tube_volume() * d + d + nt * d;
    embed.collab_params = d * d + d + nt * d;
    embed.published_su = 245'760;
    embed.published_collab = 576;

    flops_row msa;
    msa.name = "MSA";
    msa.encoder = true;
    msa.su_per_layer = msa.collab_per_layer = 4 * nt * d * d + 2 * nt * nt * d;
    msa.su_params = c.su_layers * 4 * d * d;
    msa.collab_params = c.collab_layers * 4 * d * d;
    msa.published_su = msa.published_collab = 1'376'256;

    flops_row mlp;
    mlp.name = "MLP in Encoder";
    mlp.encoder = true;
    mlp.su_per_layer = mlp.collab_per_layer = 2 * nt * d * hid;
    mlp.su_params = c.su_layers * (2 * d * hid + hid + d);
    mlp.collab_params = c.collab_layers * (2 * d * hid + hid + d);
    mlp.published_su = mlp.published_collab = 1'179'648;

    flops_row ln;
    ln.name = "Layer Normalization";
    ln.encoder = true;
    ln.su_per_layer = ln.collab_per_layer = 2 * 2 * nt * d;
    ln.su_params = c.su_layers * 4 * d;
    ln.collab_params = c.collab_layers * 4 * d;
    ln.published_su = ln.published_collab = 24'576;

    for (auto* r : {&msa, &mlp, &ln}) {
        r->su_layers = c.su_layers;
        r->collab_layers = c.collab_layers;
    }

    // Final normalization, scorer, softmax weighting and weighted sum.
    flops_row pool;
    pool.name = "Sequence Pooling";
    pool.su_per_layer = pool.collab_per_layer = 2 * nt * d + nt * d + nt + nt * d;
    pool.su_params = pool.collab_params = 2 * d + d;
    pool.published_su = pool.published_collab = 12'864;

    flops_row head;
    head.name = "MLP Head";
    u64 in = d, hp = 0, hf = 0;
    for (auto w : c.head_units) {
        hf += in * w;
        hp += in * w + w;
        in = w;
    }
    hf += in * c.classes;
    hp += in * c.classes + c.classes;
    head.su_per_layer = head.collab_per_layer = hf;
    head.su_params = head.collab_params = hp;
    head.published_su = head.published_collab = 11'392;

    b.rows = {embed, msa, mlp, ln, pool, head};
    b.cm_macs_per_matrix = static_cast<u64>(antennas) * antennas * samples;
    b.cm_macs_per_sample = b.cm_macs_per_matrix * c.seq_len * su_count;
    return b;
}

namespace detail {

inline std::string opt_num(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : "-"; }

inline std::string delta(std::uint64_t ours, const std::optional<std::uint64_t>& pub) {
    if (!pub) return "-";
    const auto diff = static_cast<long long>(ours) - static_cast<long long>(*pub);
    return (diff > 0 ? "+" : "") + std::to_string(diff);
}

}  // namespace detail

// CSV: kind,name,su_per_layer,su_total,su_published,collab_per_layer,
// collab_total,collab_published,su_params,collab_params
inline void write_flops_csv(const flops_breakdown& b, std::ostream& os) {
    using detail::opt_num;
    os << "kind,name,su_per_layer,su_total,su_published,collab_per_layer,collab_total,collab_published,su_params,"
          "collab_params\n";
    auto row = [&](const flops_row& r) {
        os << "row," << r.name << ',' << r.su_per_layer << ',' << r.su() << ',' << opt_num(r.published_su) << ','
           << r.collab_per_layer << ',' << r.collab() << ',' << opt_num(r.published_collab) << ',' << r.su_params << ','
           << r.collab_params << '\n';
    };
    for (const auto& r : b.rows) {
        row(r);
        if (r.name == "Layer Normalization")
            os << "subtotal,Total FLOPs for Encoder Layer,-," << b.encoder_su() << ",-,-," << b.encoder_collab()
               << ",-,-,-\n";
    }
    os << "total,Total FLOPs,-," << b.su_total() << ",13172416,-," << b.collab_total() << ",10346752," << b.su_params()
       << ',' << b.collab_params() << '\n';
    os << "total,MASSFormer,-," << b.total() << ',' << published_totals::massformer << ",-,-,-,"
       << b.su_params() + b.collab_params() << ",-\n";
    os << "info,CM preprocessing per matrix (complex MACs),-," << b.cm_macs_per_matrix << ",-,-,-,-,-,-\n";
    os << "info,CM preprocessing per sample (complex MACs),-," << b.cm_macs_per_sample << ",-,-,-,-,-,-\n";
}

inline void write_flops_table(const flops_breakdown& b, std::ostream& os) {
    using detail::delta;
    using detail::opt_num;
    auto line = [&](const std::string& name, const std::string& su_layer, const std::string& su, const std::string& su_pub,
                    const std::string& su_delta, const std::string& co_layer, const std::string& co,
                    const std::string& co_pub, const std::string& co_delta) {
        os << std::left << std::setw(31) << name << std::right << std::setw(12) << su_layer << std::setw(12) << su
           << std::setw(12) << su_pub << std::setw(12) << su_delta << std::setw(12) << co_layer << std::setw(12) << co
           << std::setw(12) << co_pub << std::setw(12) << co_delta << '\n';
    };
    line("Layers Description", "SU/layer", "SU", "SU pub.", "delta", "Col/layer", "Collab", "Col pub.", "delta");
    os << std::string(31 + 12 * 8, '-') << '\n';
    for (const auto& r : b.rows) {
        line(r.name, std::to_string(r.su_per_layer), std::to_string(r.su()), opt_num(r.published_su),
             delta(r.su_per_layer, r.published_su), std::to_string(r.collab_per_layer), std::to_string(r.collab()),
             opt_num(r.published_collab), delta(r.collab_per_layer, r.published_collab));
        if (r.name == "Layer Normalization")
            line("Total FLOPs for Encoder Layer", "-", std::to_string(b.encoder_su()), "-", "-", "-",
                 std::to_string(b.encoder_collab()), "-", "-");
    }
    line("Total FLOPs", "-", std::to_string(b.su_total()), "13172416", delta(b.su_total(), 13'172'416), "-",
         std::to_string(b.collab_total()), "10346752", delta(b.collab_total(), 10'346'752));
    os << "MASSFormer FLOPs " << b.total() << " (published " << published_totals::massformer << ", delta "
       << delta(b.total(), published_totals::massformer) << ")\n";
    os << "Parameters SU " << b.su_params() << " (published 42667), collaborative " << b.collab_params()
       << " (published 31747), total " << b.su_params() + b.collab_params() << " (published 74414)\n";
    os << "CM preprocessing " << b.cm_macs_per_matrix << " complex MACs per matrix, " << b.cm_macs_per_sample
       << " per sample\n";
}

inline void write_complexity_report(const complexity_inputs& in, std::ostream& os) {
    auto block = [&](const std::string& name, const complexity_terms& t, std::optional<std::uint64_t> pub) {
        os << name << ": " << t.total();
        if (pub) os << " (table total " << *pub << ", delta " << detail::delta(t.total(), pub) << ")";
        os << '\n';
        for (const auto& [k, v] : t.terms) os << "  " << k << " = " << v << '\n';
    };
    block("CNN-LSTM", complexity_cnn_lstm(in), published_totals::cnn_lstm);
    block("3-D CNN", complexity_3dcnn(in), published_totals::cnn3d);
    block("MASSFormer", complexity_massformer(in), published_totals::massformer);
}

struct latency_stats {
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double mean_ms = 0.0;
    std::size_t reps = 0;
    bool low_confidence = false;
};

inline latency_stats summarize_latency(std::vector<double> ms) {
    if (ms.empty()) throw contract_error("summarize_latency: no measurements");
    std::sort(ms.begin(), ms.end());
    latency_stats s;
    s.reps = ms.size();
    s.low_confidence = ms.size() == 1;
    const std::size_t n = ms.size();
    s.median_ms = n % 2 ? ms[n / 2] : (ms[n / 2 - 1] + ms[n / 2]) / 2.0;
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
    for (double v : ms) s.mean_ms += v;
    s.mean_ms /= static_cast<double>(n);
    return s;
}

struct bench_result {
    latency_stats preprocessing;  // λ·S covariance matrices and planes
    latency_stats inference;      // one cooperative forward pass
    double bound_ms = 2000.0;
    bool within_bound() const { return inference.median_ms + preprocessing.median_ms < bound_ms; }
};

// Per-sample latency on freshly simulated signals; single-threaded.
inline bench_result bench_inference(const massformer_model& m, const run_config& cfg, std::size_t reps,
                                    std::size_t warmup = 10) {
    if (reps == 0) throw contract_error("bench_inference: need at least one repetition");
    warmup = std::max<std::size_t>(warmup, 10);
    const auto& sc = cfg.scenario;
    constexpr std::size_t pool = 4;
    auto traj_rng = make_stream(derive_seed(sc.seed, 0xbe4c), 0);
    const auto where = simulate_trajectory(sc, pool * sc.seq_len, traj_rng);
    std::vector<std::vector<std::vector<signal_matrix>>> signals(pool);  // [sample][period][su]
    for (std::size_t k = 0; k < pool; ++k)
        for (std::size_t t = 0; t < sc.seq_len; ++t) {
            auto rng = make_stream(derive_seed(sc.seed, 0xbe4c), k * sc.seq_len + t + 1);
            signals[k].push_back(generate_period(sc, where[k * sc.seq_len + t], k % 2 == 1, rng, t));
        }
    const std::size_t C = channel_count(cfg.data.layout);
    const std::size_t vol = plane_volume(sc.seq_len, cfg.data.plane_size, C);
    const double scale = cfg.data.noise_normalize ? sc.noise_variance_mw() : 1.0;
    std::vector<double> planes(sc.su_count * vol);

    auto preprocess = [&](std::size_t k) {
        for (std::size_t s = 0; s < sc.su_count; ++s) {
            sample_sequence seq;
            for (std::size_t t = 0; t < sc.seq_len; ++t) seq.cms.push_back(covariance(signals[k][t][s]));
            write_channel_planes(seq, cfg.data.plane_size, cfg.data.layout, scale,
                                 std::span<double>(planes).subspan(s * vol, vol));
        }
    };
    double sink = 0.0;
    auto infer = [&]() {
        ad::no_grad_guard guard;
        std::vector<std::span<const double>> in;
        for (std::size_t s = 0; s < sc.su_count; ++s) in.push_back(std::span<const double>(planes).subspan(s * vol, vol));
        sink += massformer_forward(in, m).group.logits[0];
    };

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    for (std::size_t i = 0; i < warmup; ++i) {
        preprocess(i % pool);
        infer();
    }
    std::vector<double> pre, inf;
    for (std::size_t i = 0; i < reps; ++i) {
        auto t0 = clock::now();
        preprocess(i % pool);
        pre.push_back(ms_since(t0));
        t0 = clock::now();
        infer();
        inf.push_back(ms_since(t0));
    }
    if (!std::isfinite(sink)) throw numeric_error("bench_inference: non-finite model output");
    return {summarize_latency(pre), summarize_latency(inf)};
}

}  // namespace massformer
