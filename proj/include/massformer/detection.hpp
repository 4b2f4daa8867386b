#pragma once

// Neyman-Pearson thresholding on Monte-Carlo H0 statistics, ROC curves,
// sensing metrics and the energy-detection baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "massformer/dataset.hpp"
#include "massformer/errors.hpp"

namespace massformer {

// Log-odds log j₁ − log j₀; a monotone transform of the likelihood ratio
// j₁/j₀ that stays finite as j₀ → 0.
inline double test_statistic(double p_h0, double p_h1) {
    constexpr double tiny = std::numeric_limits<double>::min();
    return std::log(std::max(p_h1, tiny)) - std::log(std::max(p_h0, tiny));
}

// Same statistic from the head's logits: log-softmax difference = l₁ − l₀.
inline double log_odds_from_logits(double logit_h0, double logit_h1) { return logit_h1 - logit_h0; }

struct threshold {
    double gamma = 0.0;
    std::size_t index = 0;  // 1-based position in the sorted H0 statistics
    bool clamped = false;   // rounded index fell outside [1, Q]
    bool low_count = false; // Q < 1/pfa
};

// Sorted H0 statistics (ascending).
class threshold_table {
public:
    threshold_table() = default;
    explicit threshold_table(std::vector<double> h0_stats) : sorted_(std::move(h0_stats)) {
        if (sorted_.empty()) throw contract_error("threshold_table: no H0 statistics");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t count() const { return sorted_.size(); }
    std::span<const double> sorted() const { return sorted_; }

    // γ = sorted[round(Q·(1 − pfa))], 1-based, index clamped to [1, Q].
    threshold at(double pfa) const {
        if (!(pfa >= 0.0 && pfa <= 1.0)) throw contract_error("threshold_table: pfa outside [0,1]");
        const double q = static_cast<double>(sorted_.size());
        long idx = std::lround(q * (1.0 - pfa));
        threshold t;
        t.low_count = pfa > 0.0 && q < 1.0 / pfa;
        if (idx < 1 || idx > static_cast<long>(sorted_.size())) {
            t.clamped = true;
            idx = std::clamp<long>(idx, 1, static_cast<long>(sorted_.size()));
        }
        t.index = static_cast<std::size_t>(idx);
        t.gamma = sorted_[t.index - 1];
        return t;
    }

private:
    std::vector<double> sorted_;
};

inline threshold calibrate_threshold(std::vector<double> h0_stats, double pfa) {
    return threshold_table(std::move(h0_stats)).at(pfa);
}

// H1 iff stat > γ; ties go to H0.
inline bool decide(double stat, double gamma) { return stat > gamma; }

inline double detection_rate(std::span<const double> stats, double gamma) {
    if (stats.empty()) return 0.0;
    std::size_t hits = 0;
    for (double s : stats) hits += decide(s, gamma);
    return static_cast<double>(hits) / static_cast<double>(stats.size());
}

// {0.01, 0.02, …, 0.30}; 0.09 is on the grid.
inline std::vector<double> default_pfa_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 30; ++k) g.push_back(k / 100.0);
    return g;
}

struct roc_point {
    double pfa = 0.0;
    double gamma = 0.0;
    double pd = 0.0;
};

struct roc_result {
    std::vector<roc_point> points;
    double auc = 0.0;
};

// Thresholds from the calibration rule on h0_stats; AUC by the trapezoid rule
// over the grid points, closed by (1,1) and by the pfa = 0 point whose
// threshold is the largest H0 statistic.
inline roc_result roc_curve(std::span<const double> h0_stats, std::span<const double> h1_stats,
                            std::vector<double> pfa_grid) {
    if (h0_stats.empty() || h1_stats.empty()) throw contract_error("roc_curve: both statistic sets must be nonempty");
    std::sort(pfa_grid.begin(), pfa_grid.end());
    pfa_grid.erase(std::unique(pfa_grid.begin(), pfa_grid.end()), pfa_grid.end());
    threshold_table table(std::vector<double>(h0_stats.begin(), h0_stats.end()));
    roc_result r;
    for (double pfa : pfa_grid) {
        const auto t = table.at(pfa);
        r.points.push_back({pfa, t.gamma, detection_rate(h1_stats, t.gamma)});
    }
    double px = 0.0, py = detection_rate(h1_stats, table.sorted().back());
    for (const auto& p : r.points) {
        r.auc += (p.pfa - px) * (p.pd + py) / 2.0;
        px = p.pfa;
        py = p.pd;
    }
    r.auc += (1.0 - px) * (1.0 + py) / 2.0;
    return r;
}

// Standard deviation of the Mann-Whitney AUC under the null (no separation).
inline double chance_auc_sigma(std::size_t n0, std::size_t n1) {
    const double a = static_cast<double>(n0), b = static_cast<double>(n1);
    return std::sqrt((a + b + 1.0) / (12.0 * a * b));
}

struct sensing_summary {
    double sensing_error = 0.0;  // (P_md + P_fa) / 2
    double accuracy = 0.0;
    double pd = 0.0;
    double pfa = 0.0;
};

inline sensing_summary sensing_metrics(std::span<const int> decisions, std::span<const int> labels) {
    if (decisions.size() != labels.size()) throw contract_error("sensing_metrics: length mismatch");
    std::size_t h1 = 0, h0 = 0, detected = 0, false_alarms = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool said_h1 = decisions[i] != 0;
        if (labels[i]) {
            ++h1;
            detected += said_h1;
        } else {
            ++h0;
            false_alarms += said_h1;
        }
        correct += said_h1 == (labels[i] != 0);
    }
    sensing_summary s;
    s.pd = h1 ? static_cast<double>(detected) / static_cast<double>(h1) : 0.0;
    s.pfa = h0 ? static_cast<double>(false_alarms) / static_cast<double>(h0) : 0.0;
    s.sensing_error = ((1.0 - s.pd) + s.pfa) / 2.0;
    s.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
    return s;
}

// Average per-antenna power: mean CM trace over the sequence, divided by M.
inline double energy_detector(const sample_sequence& seq) {
    if (seq.cms.empty()) throw contract_error("energy_detector: empty sequence");
    double total = 0.0;
    for (const auto& cm : seq.cms) total += cm.trace();
    return total / static_cast<double>(seq.cms.size()) / static_cast<double>(seq.cms.front().size);
}

// Same statistic read from raw (unstandardized) channel planes: plane 0 holds
// Re R, so the diagonal of the first M rows gives the trace.
inline double energy_detector(std::span<const double> raw_planes, std::size_t seq_len, std::size_t h,
                              std::size_t channels, std::size_t antennas) {
    double total = 0.0;
    for (std::size_t t = 0; t < seq_len; ++t)
        for (std::size_t i = 0; i < antennas; ++i) total += raw_planes[((t * h + i) * h + i) * channels];
    return total / static_cast<double>(seq_len) / static_cast<double>(antennas);
}

// Cooperative baseline: equal-gain average of the per-SU statistics.
inline double cooperative_energy(const css_sample& sample) {
    double s = 0.0;
    for (const auto& seq : sample.per_su) s += energy_detector(seq);
    return s / static_cast<double>(sample.per_su.size());
}

inline double cooperative_energy(const plane_dataset& ds, std::size_t k) {
    double s = 0.0;
    for (std::size_t su = 0; su < ds.su_count; ++su)
        s += energy_detector(ds.su_planes(k, su), ds.seq_len, ds.size, ds.channels, ds.antennas);
    return s / static_cast<double>(ds.su_count);
}

}  // namespace massformer
