#pragma once

// Dataset generation from the mobility/channel simulator and the
// detection evaluation that compares the model against energy detection.

#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "massformer/config.hpp"
#include "massformer/dataset.hpp"
#include "massformer/detection.hpp"
#include "massformer/mobility_channel.hpp"
#include "massformer/model.hpp"
#include "massformer/rng.hpp"
#include "massformer/tensor.hpp"

namespace massformer {

enum class label_schedule { alternate, all_h0, all_h1 };

inline int schedule_label(label_schedule s, std::size_t block) {
    switch (s) {
        case label_schedule::all_h0: return 0;
        case label_schedule::all_h1: return 1;
        default: return static_cast<int>(block % 2);
    }
}

// Stream roles, combined with the scenario seed.
enum class data_role : std::uint64_t { train = 1, test = 2, calibration = 3 };

inline std::uint64_t role_seed(const scenario_config& s, data_role r) {
    return derive_seed(s.seed, static_cast<std::uint64_t>(r));
}

// Simulates count·λ consecutive sensing periods along one Random Waypoint
// trajectory and converts each λ-block of CMs into channel planes. Block b
// carries the label given by the schedule; per-period signals come from
// their own stream so any period can be regenerated in isolation.
inline plane_dataset generate_dataset(const scenario_config& sc, const data_config& dc, std::size_t count,
                                      label_schedule labels, std::uint64_t stream_seed, std::uint64_t config_hash) {
    sc.validate();
    if (dc.plane_size < sc.antennas)
        throw config_error("generate: M=" + std::to_string(sc.antennas) + " exceeds plane size H=" +
                           std::to_string(dc.plane_size));
    const std::size_t lambda = sc.seq_len;
    plane_dataset ds;
    ds.config_hash = config_hash;
    ds.su_count = sc.su_count;
    ds.antennas = sc.antennas;
    ds.samples = sc.samples;
    ds.seq_len = lambda;
    ds.size = dc.plane_size;
    ds.channels = channel_count(dc.layout);
    ds.n0_dbm_per_hz = sc.n0_dbm_per_hz;
    ds.planes.assign(count * sc.su_count * ds.volume(), 0.0);
    ds.labels.resize(count);
    ds.first_period.resize(count);

    auto traj_rng = make_stream(stream_seed, 0);
    const auto where = simulate_trajectory(sc, count * lambda, traj_rng);
    const double scale = dc.noise_normalize ? sc.noise_variance_mw() : 1.0;

    std::vector<sample_sequence> seqs(sc.su_count);
    for (std::size_t k = 0; k < count; ++k) {
        const int label = schedule_label(labels, k);
        ds.labels[k] = static_cast<std::uint8_t>(label);
        ds.first_period[k] = k * lambda;
        for (auto& s : seqs) {
            s.cms.clear();
            s.label = label;
        }
        for (std::size_t t = 0; t < lambda; ++t) {
            const std::size_t period = k * lambda + t;
            auto rng = make_stream(stream_seed, period + 1);
            const auto signals = generate_period(sc, where[period], label == 1, rng, period);
            for (std::size_t s = 0; s < sc.su_count; ++s) seqs[s].cms.push_back(covariance(signals[s]));
        }
        for (std::size_t s = 0; s < sc.su_count; ++s) write_channel_planes(seqs[s], dc.plane_size, dc.layout, scale, ds.su_planes(k, s));
    }
    return ds;
}

inline plane_dataset generate_role(const run_config& c, data_role role, std::size_t count, label_schedule labels) {
    return generate_dataset(c.scenario, c.data, count, labels, role_seed(c.scenario, role), data_config_hash(c));
}

// Log-odds statistic of the collaborative tier for sample k.
inline double model_statistic(const massformer_model& m, const plane_dataset& ds, std::size_t k) {
    ad::no_grad_guard guard;
    const auto out = massformer_forward(sample_inputs(ds, k), m);
    return log_odds_from_logits(out.group.logits[0], out.group.logits[1]);
}

inline std::vector<double> model_statistics(const massformer_model& m, const plane_dataset& ds) {
    std::vector<double> out(ds.count());
    for (std::size_t k = 0; k < ds.count(); ++k) out[k] = model_statistic(m, ds, k);
    return out;
}

inline std::vector<double> energy_statistics(const plane_dataset& ds) {
    std::vector<double> out(ds.count());
    for (std::size_t k = 0; k < ds.count(); ++k) out[k] = cooperative_energy(ds, k);
    return out;
}

struct method_result {
    std::string method;
    double n0_dbm_per_hz = 0.0;
    roc_result roc;
    threshold operating;         // NP threshold at the operating pfa
    sensing_summary at_operating;  // on the labelled test set
};

struct detection_report {
    std::vector<method_result> results;
    std::size_t test_samples = 0;
    std::size_t calibration_samples = 0;
    double operating_pfa = 0.09;
    bool low_calibration_count = false;

    // method,n0,pfa,threshold,pd; shortest round-trip number text.
    void write_csv(std::ostream& os) const {
        using detail::fmt_double;
        os << "method,n0_dbm_per_hz,pfa,threshold,pd\n";
        for (const auto& r : results)
            for (const auto& p : r.roc.points)
                os << r.method << ',' << fmt_double(r.n0_dbm_per_hz) << ',' << fmt_double(p.pfa) << ','
                   << fmt_double(p.gamma) << ',' << fmt_double(p.pd) << '\n';
    }

    nlohmann::json summary() const {
        nlohmann::json j;
        j["test_samples"] = test_samples;
        j["calibration_samples"] = calibration_samples;
        j["operating_pfa"] = operating_pfa;
        j["low_calibration_count"] = low_calibration_count;
        j["chance_auc_sigma"] = chance_auc_sigma(calibration_samples, test_samples / 2);
        auto& arr = j["results"] = nlohmann::json::array();
        for (const auto& r : results) {
            nlohmann::json e;
            e["method"] = r.method;
            e["n0_dbm_per_hz"] = r.n0_dbm_per_hz;
            e["auc"] = r.roc.auc;
            e["threshold"] = r.operating.gamma;
            e["threshold_clamped"] = r.operating.clamped;
            e["pd"] = r.at_operating.pd;
            e["pfa_test"] = r.at_operating.pfa;
            e["sensing_error"] = r.at_operating.sensing_error;
            e["accuracy"] = r.at_operating.accuracy;
            arr.push_back(e);
        }
        return j;
    }

    const method_result* find(const std::string& method, double n0) const {
        for (const auto& r : results)
            if (r.method == method && r.n0_dbm_per_hz == n0) return &r;
        return nullptr;
    }
};

// H0 statistics come from a dedicated all-H0 calibration set; H1 statistics
// from the H1 samples of the test set.
inline method_result score_method(const std::string& name, double n0, const std::vector<double>& calib,
                                  const std::vector<double>& test, const std::vector<std::uint8_t>& labels,
                                  const std::vector<double>& grid, double operating_pfa) {
    method_result r;
    r.method = name;
    r.n0_dbm_per_hz = n0;
    std::vector<double> h1;
    for (std::size_t k = 0; k < test.size(); ++k)
        if (labels[k]) h1.push_back(test[k]);
    r.roc = roc_curve(calib, h1, grid);
    r.operating = calibrate_threshold(calib, operating_pfa);
    std::vector<int> decisions(test.size()), truth(test.size());
    for (std::size_t k = 0; k < test.size(); ++k) {
        decisions[k] = decide(test[k], r.operating.gamma) ? 1 : 0;
        truth[k] = labels[k];
    }
    r.at_operating = sensing_metrics(decisions, truth);
    return r;
}

using progress_fn = std::function<void(const std::string&)>;

// Regenerates the test and calibration sets at every N0 in the list from the
// same streams, so curves at different noise levels share mobility and
// fading realizations.
inline detection_report evaluate(const massformer_model& m, const run_config& cfg, const std::vector<double>& n0_list,
                                 const progress_fn& progress = {}) {
    detection_report rep;
    rep.test_samples = cfg.data.test_samples;
    rep.calibration_samples = cfg.eval.calibration_samples;
    rep.operating_pfa = cfg.eval.operating_pfa;
    const auto grid = cfg.eval.pfa_grid.empty() ? default_pfa_grid() : cfg.eval.pfa_grid;
    for (double pfa : grid)
        if (static_cast<double>(rep.calibration_samples) < 1.0 / pfa) rep.low_calibration_count = true;
    for (double n0 : n0_list) {
        run_config c = cfg;
        c.scenario.n0_dbm_per_hz = n0;
        if (progress) progress("generating N0=" + detail::fmt_double(n0));
        const auto test = generate_role(c, data_role::test, c.data.test_samples, label_schedule::alternate);
        const auto calib = generate_role(c, data_role::calibration, c.eval.calibration_samples, label_schedule::all_h0);
        if (progress) progress("scoring N0=" + detail::fmt_double(n0));
        rep.results.push_back(score_method("massformer", n0, model_statistics(m, calib), model_statistics(m, test),
                                           test.labels, grid, cfg.eval.operating_pfa));
        if (cfg.eval.energy_baseline)
            rep.results.push_back(score_method("energy", n0, energy_statistics(calib), energy_statistics(test),
                                               test.labels, grid, cfg.eval.operating_pfa));
    }
    return rep;
}

}  // namespace massformer
