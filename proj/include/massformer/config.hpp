#pragma once

// Run configuration: built-in "desk" and "paper" profiles, INI loading and
// canonical serialization (the serialized text is what gets hashed).

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "massformer/dataset.hpp"
#include "massformer/errors.hpp"
#include "massformer/mobility_channel.hpp"
#include "massformer/model.hpp"
#include "massformer/rng.hpp"
#include "massformer/training.hpp"

namespace massformer {

struct data_config {
    std::size_t train_samples = 4000;
    std::size_t test_samples = 1000;
    std::size_t plane_size = 16;
    plane_layout layout = plane_layout::real_imag_magnitude;
    bool noise_normalize = true;  // divide CMs by N0·BW before plane conversion
};

struct eval_config {
    std::vector<double> n0_list{-150.0, -147.5, -145.0};
    std::vector<double> pfa_grid;  // empty: default grid
    double operating_pfa = 0.09;
    std::size_t calibration_samples = 5000;
    bool energy_baseline = true;
};

struct run_config {
    std::string profile = "desk";
    scenario_config scenario;
    data_config data;
    model_config model;
    train_config train;
    std::size_t stage2_epochs = 0;  // 0: same as train.epochs
    eval_config eval;

    std::size_t epochs_for_stage(int stage) const {
        return stage == 2 && stage2_epochs > 0 ? stage2_epochs : train.epochs;
    }

    void validate() const {
        scenario.validate();
        model.validate();
        train.validate();
        if (data.plane_size < scenario.antennas)
            throw config_error("data: plane_size " + std::to_string(data.plane_size) + " is smaller than M=" +
                               std::to_string(scenario.antennas));
        if (model.seq_len != scenario.seq_len || model.plane_size != data.plane_size ||
            model.channels != channel_count(data.layout))
            throw config_error("model input shape disagrees with scenario/data settings");
        if (data.train_samples == 0 || data.test_samples == 0) throw config_error("data: sample counts must be positive");
        if (!(eval.operating_pfa > 0.0 && eval.operating_pfa < 1.0)) throw config_error("eval: operating_pfa in (0,1)");
        for (double p : eval.pfa_grid)
            if (!(p > 0.0 && p < 1.0)) throw config_error("eval: pfa values must lie in (0,1)");
        if (eval.calibration_samples == 0) throw config_error("eval: calibration_samples must be positive");
    }
};

// Keeps the model input shape in step with scenario/data settings.
inline void sync_model_shape(run_config& c) {
    c.model.seq_len = c.scenario.seq_len;
    c.model.plane_size = c.data.plane_size;
    c.model.channels = channel_count(c.data.layout);
}

inline run_config paper_profile() {
    run_config c;
    c.profile = "paper";
    c.scenario.antennas = 15;
    c.scenario.samples = 100;
    c.scenario.su_count = 3;
    c.scenario.seq_len = 20;
    c.data.train_samples = 104000;
    c.data.test_samples = 15000;
    c.data.plane_size = 16;
    c.model.tube_t = 20;
    c.train.lr = 1e-5;
    c.train.batch = 16;
    c.train.epochs = 100;
    c.eval.n0_list = {-150.0, -147.5, -145.0, -142.5, -140.0};
    sync_model_shape(c);
    return c;
}

// Scaled to run on one CPU core: λ=10, M=8, 4 000 training samples and a
// higher learning rate to compensate for the far smaller step budget.
inline run_config desk_profile() {
    run_config c;
    c.profile = "desk";
    c.scenario.antennas = 8;
    c.scenario.samples = 100;
    c.scenario.su_count = 3;
    c.scenario.seq_len = 10;
    c.data.train_samples = 4000;
    c.data.test_samples = 1000;
    c.data.plane_size = 8;
    c.model.tube_t = 10;
    c.train.lr = 1e-3;
    c.train.batch = 16;
    c.train.epochs = 4;
    c.stage2_epochs = 8;
    c.eval.n0_list = {-150.0, -147.5, -145.0};
    sync_model_shape(c);
    return c;
}

inline run_config profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw config_error("unknown profile '" + name + "' (expected desk or paper)");
}

namespace detail {

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        if constexpr (std::is_floating_point_v<T>)
            os << fmt_double(v[i]);
        else
            os << v[i];
    }
    return os.str();
}

template <typename T>
std::vector<T> split_list(const std::string& s, const std::string& key) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
        try {
            std::size_t used = 0;
            if constexpr (std::is_floating_point_v<T>) {
                out.push_back(std::stod(item, &used));
            } else {
                if (!item.empty() && item[0] == '-') throw std::invalid_argument("negative");
                out.push_back(static_cast<T>(std::stoull(item, &used)));
            }
            if (used != item.size()) throw std::invalid_argument("junk");
        } catch (const std::exception&) {
            throw config_error("config: bad list value '" + item + "' for " + key);
        }
    }
    return out;
}

inline double to_double(const std::string& s, const std::string& key) {
    auto v = split_list<double>(s, key);
    if (v.size() != 1) throw config_error("config: expected one number for " + key);
    return v[0];
}

inline std::uint64_t to_uint(const std::string& s, const std::string& key) {
    auto v = split_list<std::uint64_t>(s, key);
    if (v.size() != 1) throw config_error("config: expected one non-negative integer for " + key);
    return v[0];
}

inline bool to_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw config_error("config: expected a boolean for " + key);
}

}  // namespace detail

// Applies one `section.key = value` setting.
inline void apply_setting(run_config& c, const std::string& section, const std::string& key, const std::string& value) {
    using namespace detail;
    const std::string full = section + "." + key;
    auto& s = c.scenario;
    if (section == "scenario") {
        if (key == "area_width") s.mobility.bounds.width = to_double(value, full);
        else if (key == "area_height") s.mobility.bounds.height = to_double(value, full);
        else if (key == "v_min") s.mobility.v_min = to_double(value, full);
        else if (key == "v_max") s.mobility.v_max = to_double(value, full);
        else if (key == "pause_s") s.mobility.pause_s = to_double(value, full);
        else if (key == "sensing_period_s") s.sensing_period_s = to_double(value, full);
        else if (key == "su_count") {
            s.su_count = to_uint(value, full);
            s.sensing_fading_scale.assign(s.su_count, 1.0);
            s.reporting_fading_scale.assign(s.su_count, 1.0);
        } else if (key == "antennas") s.antennas = to_uint(value, full);
        else if (key == "samples") s.samples = to_uint(value, full);
        else if (key == "seq_len") {
            s.seq_len = to_uint(value, full);
            c.model.tube_t = s.seq_len;
        } else if (key == "pt_dbm") s.pt_dbm = to_double(value, full);
        else if (key == "alpha") s.alpha = to_double(value, full);
        else if (key == "beta_db") s.beta = std::pow(10.0, to_double(value, full) / 10.0);
        else if (key == "n0_dbm_per_hz") s.n0_dbm_per_hz = to_double(value, full);
        else if (key == "bw_hz") s.bw_hz = to_double(value, full);
        else if (key == "min_distance_m") s.min_distance_m = to_double(value, full);
        else if (key == "sensing_fading_scale") s.sensing_fading_scale = split_list<double>(value, full);
        else if (key == "reporting_fading_scale") s.reporting_fading_scale = split_list<double>(value, full);
        else if (key == "reporting") {
            if (value == "perfect") s.reporting = reporting_channel::perfect;
            else if (value == "imperfect") s.reporting = reporting_channel::imperfect;
            else throw config_error("config: reporting must be perfect or imperfect");
        } else if (key == "seed") s.seed = to_uint(value, full);
        else throw config_error("config: unknown key " + full);
    } else if (section == "data") {
        if (key == "train_samples") c.data.train_samples = to_uint(value, full);
        else if (key == "test_samples") c.data.test_samples = to_uint(value, full);
        else if (key == "plane_size") c.data.plane_size = to_uint(value, full);
        else if (key == "layout") {
            if (value == "real_imag_magnitude") c.data.layout = plane_layout::real_imag_magnitude;
            else if (value == "real_imag") c.data.layout = plane_layout::real_imag;
            else throw config_error("config: layout must be real_imag_magnitude or real_imag");
        } else if (key == "noise_normalize") c.data.noise_normalize = to_bool(value, full);
        else throw config_error("config: unknown key " + full);
    } else if (section == "model") {
        if (key == "d_model") c.model.d_model = to_uint(value, full);
        else if (key == "heads") c.model.heads = to_uint(value, full);
        else if (key == "su_layers") c.model.su_layers = to_uint(value, full);
        else if (key == "collab_layers") c.model.collab_layers = to_uint(value, full);
        else if (key == "mlp_hidden") c.model.mlp_hidden = to_uint(value, full);
        else if (key == "head_units") c.model.head_units = split_list<std::size_t>(value, full);
        else if (key == "tube") {
            auto t = split_list<std::size_t>(value, full);
            if (t.size() != 3) throw config_error("config: model.tube needs three values t,h,w");
            c.model.tube_t = t[0];
            c.model.tube_h = t[1];
            c.model.tube_w = t[2];
        } else if (key == "input_transform") {
            if (value == "signed_log1p") c.model.transform = input_transform::signed_log1p;
            else if (value == "none") c.model.transform = input_transform::none;
            else throw config_error("config: model.input_transform must be signed_log1p or none");
        } else throw config_error("config: unknown key " + full);
    } else if (section == "train") {
        auto& t = c.train;
        if (key == "lr") t.lr = to_double(value, full);
        else if (key == "batch") t.batch = to_uint(value, full);
        else if (key == "epochs") t.epochs = to_uint(value, full);
        else if (key == "stage2_epochs") c.stage2_epochs = to_uint(value, full);
        else if (key == "beta1") t.beta1 = to_double(value, full);
        else if (key == "beta2") t.beta2 = to_double(value, full);
        else if (key == "eps") t.adam_eps = to_double(value, full);
        else if (key == "seed") t.seed = to_uint(value, full);
        else if (key == "val_fraction") t.val_fraction = to_double(value, full);
        else if (key == "joint_finetune") t.joint_finetune = to_bool(value, full);
        else throw config_error("config: unknown key " + full);
    } else if (section == "eval") {
        auto& e = c.eval;
        if (key == "n0") e.n0_list = split_list<double>(value, full);
        else if (key == "pfa") e.pfa_grid = split_list<double>(value, full);
        else if (key == "operating_pfa") e.operating_pfa = to_double(value, full);
        else if (key == "calibration_samples") e.calibration_samples = to_uint(value, full);
        else if (key == "baseline") {
            if (value == "ed") e.energy_baseline = true;
            else if (value == "none") e.energy_baseline = false;
            else throw config_error("config: eval.baseline must be ed or none");
        } else throw config_error("config: unknown key " + full);
    } else {
        throw config_error("config: unknown section [" + section + "]");
    }
}

// Parses INI text on top of a profile. A top-level `profile = desk|paper`
// selects the base profile; otherwise `fallback_profile` is used.
inline run_config parse_config(std::istream& in, const std::string& fallback_profile = "desk") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    std::string profile = fallback_profile;
    for (const auto& [key, node] : tree)
        if (node.empty() && key == "profile") profile = node.data();
    run_config c = profile_by_name(profile);
    static const std::vector<std::string> order{"scenario", "data", "model", "train", "eval"};
    for (const auto& [key, node] : tree) {
        if (node.empty()) {
            if (key != "profile") throw config_error("config: unknown top-level key " + key);
            continue;
        }
        if (std::find(order.begin(), order.end(), key) == order.end())
            throw config_error("config: unknown section [" + key + "]");
    }
    // Sections are applied in a fixed order so that derived defaults
    // (scenario.seq_len → model.tube) can be overridden afterwards.
    for (const auto& section : order) {
        auto it = tree.find(section);
        if (it == tree.not_found()) continue;
        for (const auto& [key, node] : it->second) apply_setting(c, section, key, node.data());
    }
    sync_model_shape(c);
    c.validate();
    return c;
}

inline run_config load_config(const std::string& path, const std::string& fallback_profile = "desk") {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path);
    return parse_config(in, fallback_profile);
}

inline std::string layout_name(plane_layout l) {
    return l == plane_layout::real_imag ? "real_imag" : "real_imag_magnitude";
}

// Canonical INI of the settings that determine generated data.
inline std::string data_section_text(const run_config& c) {
    using detail::fmt_double;
    using detail::join;
    const auto& s = c.scenario;
    std::ostringstream os;
    os << "[scenario]\n"
       << "area_width = " << fmt_double(s.mobility.bounds.width) << '\n'
       << "area_height = " << fmt_double(s.mobility.bounds.height) << '\n'
       << "v_min = " << fmt_double(s.mobility.v_min) << '\n'
       << "v_max = " << fmt_double(s.mobility.v_max) << '\n'
       << "pause_s = " << fmt_double(s.mobility.pause_s) << '\n'
       << "sensing_period_s = " << fmt_double(s.sensing_period_s) << '\n'
       << "su_count = " << s.su_count << '\n'
       << "antennas = " << s.antennas << '\n'
       << "samples = " << s.samples << '\n'
       << "seq_len = " << s.seq_len << '\n'
       << "pt_dbm = " << fmt_double(s.pt_dbm) << '\n'
       << "alpha = " << fmt_double(s.alpha) << '\n'
       << "beta_db = " << fmt_double(10.0 * std::log10(s.beta)) << '\n'
       << "n0_dbm_per_hz = " << fmt_double(s.n0_dbm_per_hz) << '\n'
       << "bw_hz = " << fmt_double(s.bw_hz) << '\n'
       << "min_distance_m = " << fmt_double(s.min_distance_m) << '\n'
       << "sensing_fading_scale = " << join(s.sensing_fading_scale) << '\n'
       << "reporting_fading_scale = " << join(s.reporting_fading_scale) << '\n'
       << "reporting = " << (s.reporting == reporting_channel::perfect ? "perfect" : "imperfect") << '\n'
       << "seed = " << s.seed << "\n\n"
       << "[data]\n"
       << "train_samples = " << c.data.train_samples << '\n'
       << "test_samples = " << c.data.test_samples << '\n'
       << "plane_size = " << c.data.plane_size << '\n'
       << "layout = " << layout_name(c.data.layout) << '\n'
       << "noise_normalize = " << (c.data.noise_normalize ? "true" : "false") << '\n';
    return os.str();
}

inline std::string to_ini(const run_config& c) {
    using detail::fmt_double;
    using detail::join;
    std::ostringstream os;
    os << "profile = " << c.profile << "\n\n" << data_section_text(c) << '\n';
    os << "[model]\n"
       << "d_model = " << c.model.d_model << '\n'
       << "heads = " << c.model.heads << '\n'
       << "su_layers = " << c.model.su_layers << '\n'
       << "collab_layers = " << c.model.collab_layers << '\n'
       << "mlp_hidden = " << c.model.mlp_hidden << '\n'
       << "head_units = " << join(c.model.head_units) << '\n'
       << "tube = " << c.model.tube_t << ',' << c.model.tube_h << ',' << c.model.tube_w << '\n'
       << "input_transform = " << (c.model.transform == input_transform::none ? "none" : "signed_log1p") << "\n\n";
    os << "[train]\n"
       << "lr = " << fmt_double(c.train.lr) << '\n'
       << "batch = " << c.train.batch << '\n'
       << "epochs = " << c.train.epochs << '\n'
       << "stage2_epochs = " << c.stage2_epochs << '\n'
       << "beta1 = " << fmt_double(c.train.beta1) << '\n'
       << "beta2 = " << fmt_double(c.train.beta2) << '\n'
       << "eps = " << fmt_double(c.train.adam_eps) << '\n'
       << "seed = " << c.train.seed << '\n'
       << "val_fraction = " << fmt_double(c.train.val_fraction) << '\n'
       << "joint_finetune = " << (c.train.joint_finetune ? "true" : "false") << "\n\n";
    os << "[eval]\n"
       << "n0 = " << join(c.eval.n0_list) << '\n';
    if (!c.eval.pfa_grid.empty()) os << "pfa = " << join(c.eval.pfa_grid) << '\n';
    os << "operating_pfa = " << fmt_double(c.eval.operating_pfa) << '\n'
       << "calibration_samples = " << c.eval.calibration_samples << '\n'
       << "baseline = " << (c.eval.energy_baseline ? "ed" : "none") << '\n';
    return os.str();
}

inline std::uint64_t data_config_hash(const run_config& c) { return hash_bytes(data_section_text(c)); }

}  // namespace massformer
