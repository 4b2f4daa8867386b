#pragma once

// Two-stage supervised training with Adam, and model checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "massformer/dataset.hpp"
#include "massformer/errors.hpp"
#include "massformer/model.hpp"
#include "massformer/rng.hpp"
#include "massformer/tensor.hpp"

namespace massformer {

struct train_config {
    double lr = 1e-5;
    std::size_t batch = 16;
    std::size_t epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 7;
    double val_fraction = 0.1;
    bool joint_finetune = false;  // stage 2 also updates the SU tier

    void validate() const {
        if (!(lr > 0.0)) throw config_error("train: lr must be positive");
        if (batch == 0) throw config_error("train: batch must be at least 1");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw config_error("train: val_fraction must be in [0,1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
            throw config_error("train: bad Adam constants");
    }
};

// −[b·log p₁ + (1−b)·log p₀] with probabilities clamped to [1e-12, 1].
inline ad::tensor cross_entropy(const ad::tensor& probs, int label) {
    if (probs.size() != 2) throw shape_error("cross_entropy: expects two class probabilities");
    auto logp = ad::log(ad::clamp(probs, 1e-12, 1.0));
    auto pick = ad::tensor::from(probs.shape(), {label == 0 ? 1.0 : 0.0, label == 0 ? 0.0 : 1.0});
    return ad::scale(ad::sum(ad::mul(logp, pick)), -1.0);
}

// Plain-value variant used when no graph is needed.
inline double cross_entropy_value(double p0, double p1, int label) {
    const double p = std::clamp(label ? p1 : p0, 1e-12, 1.0);
    return -std::log(p);
}

struct adam_state {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update. Missing gradients count as zero.
inline void adam_step(std::vector<ad::tensor>& params, adam_state& state, const train_config& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw contract_error("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].size()) throw shape_error("adam_step: moment shape mismatch");
        for (double g : params[i].grad())
            if (!std::isfinite(g))
                throw numeric_error("adam_step: non-finite gradient in parameter #" + std::to_string(i) + " at step " +
                                    std::to_string(state.step + 1));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_data();
        auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
        }
    }
}

struct epoch_record {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct train_report {
    int stage = 1;
    std::vector<epoch_record> epochs;
    std::uint64_t parameter_hash = 0;

    // Deterministic columns only; wall time lives in the JSON summary.
    void write_csv(std::ostream& os) const {
        using detail::fmt_double;
        os << "epoch,loss,train_acc,val_acc\n";
        for (const auto& e : epochs)
            os << e.epoch << ',' << fmt_double(e.loss) << ',' << fmt_double(e.train_accuracy) << ','
               << fmt_double(e.val_accuracy) << '\n';
    }

    nlohmann::json summary() const {
        nlohmann::json j;
        j["stage"] = stage;
        j["epochs"] = epochs.size();
        j["parameter_hash"] = hex64(parameter_hash);
        if (!epochs.empty()) {
            j["final_loss"] = epochs.back().loss;
            j["final_train_accuracy"] = epochs.back().train_accuracy;
            j["final_val_accuracy"] = epochs.back().val_accuracy;
        }
        return j;
    }
};

// Progress carried across resumes.
struct training_state {
    std::size_t stage1_epochs = 0;
    std::size_t stage2_epochs = 0;
    bool joint_finetuned = false;  // stage 2 also moved the SU tier
    adam_state stage1_opt;
    adam_state stage2_opt;
};

struct data_split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// The last ⌊count·val_fraction⌋ samples form the validation split.
inline data_split split_dataset(std::size_t count, double val_fraction) {
    data_split s;
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(count) * val_fraction));
    for (std::size_t k = 0; k < count; ++k) (k + n_val < count ? s.train : s.val).push_back(k);
    return s;
}

// Fits standardization statistics on the transformed planes of the given samples.
inline channel_stats fit_stats(const plane_dataset& ds, const std::vector<std::size_t>& samples,
                               input_transform transform = input_transform::none) {
    std::vector<double> buf;
    buf.reserve(samples.size() * ds.su_count * ds.volume());
    for (auto k : samples)
        for (std::size_t s = 0; s < ds.su_count; ++s) {
            auto p = ds.su_planes(k, s);
            buf.insert(buf.end(), p.begin(), p.end());
        }
    apply_transform(transform, buf);
    return fit_channel_stats(buf, ds.channels);
}

inline void check_compatible(const plane_dataset& ds, const model_config& c) {
    if (ds.seq_len != c.seq_len || ds.size != c.plane_size || ds.channels != c.channels)
        throw config_error("dataset shape (lambda=" + std::to_string(ds.seq_len) + ", H=" + std::to_string(ds.size) +
                           ", C=" + std::to_string(ds.channels) + ") does not match the model configuration");
}

namespace detail {

inline std::vector<ad::tensor> tensors_of(const std::vector<std::pair<std::string, ad::tensor>>& named) {
    std::vector<ad::tensor> out;
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
}

inline int argmax2(const ad::tensor& probs) { return probs[1] > probs[0] ? 1 : 0; }

inline std::vector<std::size_t> shuffled(std::vector<std::size_t> items, std::uint64_t seed, std::uint64_t epoch) {
    auto rng = make_stream(seed, 0xe90c0000ULL + epoch);
    std::shuffle(items.begin(), items.end(), rng);
    return items;
}

}  // namespace detail

using epoch_callback = std::function<void(const epoch_record&)>;

// Stage 1: the shared SU tier and its head, trained on every (sample, SU)
// sequence with the sample's PU label.
inline train_report train_stage1(const plane_dataset& ds, massformer_model& model, const train_config& cfg,
                                 training_state& state, const epoch_callback& on_epoch = {}) {
    cfg.validate();
    check_compatible(ds, model.config());
    const auto split = split_dataset(ds.count(), cfg.val_fraction);
    if (split.train.empty()) throw config_error("train: empty training split");
    if (model.input_stats().empty()) model.set_input_stats(fit_stats(ds, split.train, model.config().transform));
    model.set_su_trainable(true);
    model.set_collab_trainable(false);
    auto params = detail::tensors_of(model.su_parameters());

    std::vector<std::size_t> items;  // k·S + s
    for (auto k : split.train)
        for (std::size_t s = 0; s < ds.su_count; ++s) items.push_back(k * ds.su_count + s);

    train_report report;
    report.stage = 1;
    for (std::size_t epoch = state.stage1_epochs; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = detail::shuffled(items, cfg.seed, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            model.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t k = order[i] / ds.su_count, s = order[i] % ds.su_count;
                const int label = ds.labels[k];
                auto out = su_forward(ds.su_planes(k, s), model);
                auto loss = cross_entropy(out.prediction.probs, label);
                if (!std::isfinite(loss.item())) throw numeric_error("train stage 1: loss diverged");
                loss_sum += loss.item();
                correct += detail::argmax2(out.prediction.probs) == label;
                ad::backward(ad::scale(loss, inv_b));
            }
            adam_step(params, state.stage1_opt, cfg);
        }
        model.zero_grad();
        std::size_t val_correct = 0;
        {
            ad::no_grad_guard ng;
            for (auto k : split.val)
                for (std::size_t s = 0; s < ds.su_count; ++s)
                    val_correct += detail::argmax2(su_forward(ds.su_planes(k, s), model).prediction.probs) == ds.labels[k];
        }
        epoch_record rec;
        rec.epoch = epoch + 1;
        rec.loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        rec.val_accuracy = split.val.empty() ? 0.0
                                             : static_cast<double>(val_correct) /
                                                   static_cast<double>(split.val.size() * ds.su_count);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);
        state.stage1_epochs = epoch + 1;
        if (on_epoch) on_epoch(rec);
    }
    report.parameter_hash = model.parameter_hash();
    return report;
}

// Fused SU-tier features of one sample, computed without a graph.
inline ad::tensor frozen_fused_features(const plane_dataset& ds, std::size_t k, const massformer_model& model) {
    ad::no_grad_guard ng;
    std::vector<ad::tensor> tokens;
    for (std::size_t s = 0; s < ds.su_count; ++s) tokens.push_back(su_forward(ds.su_planes(k, s), model).tokens);
    auto fused = fuse(tokens);
    return ad::tensor::from(fused.shape(), std::vector<double>(fused.data().begin(), fused.data().end()));
}

// Stage 2: collaborative tier on max-fused SU features. The SU tier is
// frozen unless cfg.joint_finetune is set.
inline train_report train_stage2(const plane_dataset& ds, massformer_model& model, const train_config& cfg,
                                 training_state& state, const epoch_callback& on_epoch = {}) {
    cfg.validate();
    check_compatible(ds, model.config());
    if (state.stage1_epochs == 0) throw contract_error("train stage 2: stage 1 has not been run");
    if (model.input_stats().empty()) throw contract_error("train stage 2: model has no input statistics");
    const auto split = split_dataset(ds.count(), cfg.val_fraction);
    if (split.train.empty()) throw config_error("train: empty training split");
    const bool joint = cfg.joint_finetune;
    model.set_su_trainable(joint);
    model.set_collab_trainable(true);
    auto params = detail::tensors_of(joint ? model.parameters() : model.collab_parameters());
    const auto frozen = detail::tensors_of(model.su_parameters());

    std::vector<ad::tensor> cache(ds.count());
    if (!joint)
        for (std::size_t k = 0; k < ds.count(); ++k) cache[k] = frozen_fused_features(ds, k, model);

    auto group_forward = [&](std::size_t k) {
        if (!joint) return collaborative_forward(cache[k], model);
        return massformer_forward(sample_inputs(ds, k), model).group;
    };

    train_report report;
    report.stage = 2;
    for (std::size_t epoch = state.stage2_epochs; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = detail::shuffled(split.train, cfg.seed ^ 0x2ULL, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            model.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t k = order[i];
                const int label = ds.labels[k];
                auto out = group_forward(k);
                auto loss = cross_entropy(out.probs, label);
                if (!std::isfinite(loss.item())) throw numeric_error("train stage 2: loss diverged");
                loss_sum += loss.item();
                correct += detail::argmax2(out.probs) == label;
                ad::backward(ad::scale(loss, inv_b));
            }
            if (!joint)
                for (const auto& t : frozen)
                    if (t.has_grad()) throw contract_error("train stage 2: gradient reached a frozen SU parameter");
            adam_step(params, state.stage2_opt, cfg);
        }
        model.zero_grad();
        std::size_t val_correct = 0;
        {
            ad::no_grad_guard ng;
            for (auto k : split.val) val_correct += detail::argmax2(group_forward(k).probs) == ds.labels[k];
        }
        epoch_record rec;
        rec.epoch = epoch + 1;
        rec.loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        rec.val_accuracy =
            split.val.empty() ? 0.0 : static_cast<double>(val_correct) / static_cast<double>(split.val.size());
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);
        state.stage2_epochs = epoch + 1;
        state.joint_finetuned = state.joint_finetuned || joint;
        if (on_epoch) on_epoch(rec);
    }
    model.set_su_trainable(true);
    report.parameter_hash = model.parameter_hash();
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: "MSFCKPT1", u64 header length, JSON header, raw float64 payload
// of every tensor listed in the header, in order.

inline nlohmann::json to_json(const model_config& c) {
    return {{"seq_len", c.seq_len},       {"plane_size", c.plane_size}, {"channels", c.channels},
            {"tube", {c.tube_t, c.tube_h, c.tube_w}}, {"d_model", c.d_model}, {"heads", c.heads},
            {"su_layers", c.su_layers},   {"collab_layers", c.collab_layers}, {"mlp_hidden", c.mlp_hidden},
            {"head_units", c.head_units}, {"classes", c.classes},
            {"input_transform", c.transform == input_transform::none ? "none" : "signed_log1p"}};
}

inline model_config model_config_from_json(const nlohmann::json& j) {
    model_config c;
    c.seq_len = j.at("seq_len");
    c.plane_size = j.at("plane_size");
    c.channels = j.at("channels");
    c.tube_t = j.at("tube").at(0);
    c.tube_h = j.at("tube").at(1);
    c.tube_w = j.at("tube").at(2);
    c.d_model = j.at("d_model");
    c.heads = j.at("heads");
    c.su_layers = j.at("su_layers");
    c.collab_layers = j.at("collab_layers");
    c.mlp_hidden = j.at("mlp_hidden");
    c.head_units = j.at("head_units").get<std::vector<std::size_t>>();
    c.classes = j.at("classes");
    const std::string tr = j.at("input_transform");
    if (tr == "none") c.transform = input_transform::none;
    else if (tr == "signed_log1p") c.transform = input_transform::signed_log1p;
    else throw parse_error("checkpoint: unknown input transform " + tr);
    return c;
}

struct checkpoint {
    massformer_model model;
    training_state state;
    std::uint64_t seed = 0;
    std::uint64_t data_hash = 0;  // scenario the model was trained on
};

inline constexpr char checkpoint_magic[8] = {'M', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void add_moments(std::vector<std::pair<std::string, std::vector<double>>>& out, const std::string& prefix,
                        const adam_state& st) {
    for (std::size_t i = 0; i < st.m.size(); ++i) {
        out.emplace_back(prefix + ".m." + std::to_string(i), st.m[i]);
        out.emplace_back(prefix + ".v." + std::to_string(i), st.v[i]);
    }
}

}  // namespace detail

inline std::string serialize_checkpoint(const checkpoint& ck) {
    nlohmann::json h;
    h["format"] = "massformer-checkpoint";
    h["version"] = 1;
    h["model"] = to_json(ck.model.config());
    h["input_stats"] = {{"mean", ck.model.input_stats().mean}, {"std", ck.model.input_stats().stddev}};
    h["seed"] = ck.seed;
    h["data_hash"] = hex64(ck.data_hash);
    h["stage1_epochs"] = ck.state.stage1_epochs;
    h["stage2_epochs"] = ck.state.stage2_epochs;
    h["joint_finetuned"] = ck.state.joint_finetuned;
    h["adam1_step"] = ck.state.stage1_opt.step;
    h["adam1_slots"] = ck.state.stage1_opt.m.size();
    h["adam2_step"] = ck.state.stage2_opt.step;
    h["adam2_slots"] = ck.state.stage2_opt.m.size();

    std::vector<std::pair<std::string, std::vector<double>>> blobs;
    for (const auto& [name, t] : ck.model.parameters()) blobs.emplace_back(name, std::vector<double>(t.data().begin(), t.data().end()));
    detail::add_moments(blobs, "adam1", ck.state.stage1_opt);
    detail::add_moments(blobs, "adam2", ck.state.stage2_opt);
    auto& list = h["tensors"];
    list = nlohmann::json::array();
    for (const auto& [name, v] : blobs) list.push_back({{"name", name}, {"size", v.size()}});

    const std::string header = h.dump();
    std::string out(checkpoint_magic, sizeof(checkpoint_magic));
    const std::uint64_t len = header.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out += header;
    for (const auto& [name, v] : blobs) out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    return out;
}

inline void save_checkpoint(const checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const auto bytes = serialize_checkpoint(ck);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// Rejects files whose model configuration differs from `expected` when given.
inline checkpoint load_checkpoint(const std::string& path, const model_config* expected = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("load_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), checkpoint_magic, 8) != 0)
        throw parse_error("load_checkpoint: bad magic in " + path);
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + 8, sizeof(len));
    if (len > bytes.size() - 16) throw parse_error("load_checkpoint: truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("load_checkpoint: bad header: ") + e.what());
    }
    checkpoint ck;
    try {
        const auto cfg = model_config_from_json(h.at("model"));
        if (expected && !(cfg == *expected))
            throw version_error("load_checkpoint: " + path + " holds a model with a different configuration");
        ck.model = massformer_model(cfg, 0);
        channel_stats st;
        st.mean = h.at("input_stats").at("mean").get<std::vector<double>>();
        st.stddev = h.at("input_stats").at("std").get<std::vector<double>>();
        ck.model.set_input_stats(std::move(st));
        ck.seed = h.at("seed");
        ck.data_hash = std::stoull(h.at("data_hash").get<std::string>(), nullptr, 16);
        ck.state.stage1_epochs = h.at("stage1_epochs");
        ck.state.stage2_epochs = h.at("stage2_epochs");
        ck.state.joint_finetuned = h.at("joint_finetuned");
        ck.state.stage1_opt.step = h.at("adam1_step");
        ck.state.stage2_opt.step = h.at("adam2_step");
        const std::size_t slots1 = h.at("adam1_slots"), slots2 = h.at("adam2_slots");

        std::map<std::string, std::vector<double>> blobs;
        std::size_t offset = 16 + len;
        std::vector<std::string> order;
        for (const auto& t : h.at("tensors")) {
            const std::string name = t.at("name");
            const std::size_t n = t.at("size");
            if (offset + n * sizeof(double) > bytes.size()) throw parse_error("load_checkpoint: truncated payload");
            std::vector<double> v(n);
            std::memcpy(v.data(), bytes.data() + offset, n * sizeof(double));
            offset += n * sizeof(double);
            blobs[name] = std::move(v);
        }
        if (offset != bytes.size()) throw parse_error("load_checkpoint: trailing bytes");
        for (auto& [name, t] : ck.model.parameters()) {
            auto it = blobs.find(name);
            if (it == blobs.end() || it->second.size() != t.size())
                throw parse_error("load_checkpoint: missing or mis-sized tensor " + name);
            std::copy(it->second.begin(), it->second.end(), t.mutable_data().begin());
        }
        auto restore = [&](const std::string& prefix, std::size_t slots, adam_state& st) {
            for (std::size_t i = 0; i < slots; ++i) {
                st.m.push_back(blobs.at(prefix + ".m." + std::to_string(i)));
                st.v.push_back(blobs.at(prefix + ".v." + std::to_string(i)));
            }
        };
        restore("adam1", slots1, ck.state.stage1_opt);
        restore("adam2", slots2, ck.state.stage2_opt);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("load_checkpoint: bad header: ") + e.what());
    } catch (const std::out_of_range& e) {
        throw parse_error(std::string("load_checkpoint: missing optimizer tensor: ") + e.what());
    }
    return ck;
}

inline std::uint64_t checkpoint_hash(const checkpoint& ck) { return hash_bytes(serialize_checkpoint(ck)); }

}  // namespace massformer
