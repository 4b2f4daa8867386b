#pragma once

// Random Waypoint mobility, log-distance path loss, Rayleigh fading and the
// per-period received-signal model at the fusion centre.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "massformer/errors.hpp"
#include "massformer/rng.hpp"

namespace massformer {

using cplx = std::complex<double>;

struct point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(point a, point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct area_bounds {
    double width = 1000.0;
    double height = 1000.0;

    bool contains(point p) const { return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height; }
    point uniform_point(rng_t& rng) const {
        std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height);
        const double x = ux(rng);
        return {x, uy(rng)};
    }
};

struct waypoint_params {
    area_bounds bounds;
    double v_min = 20.0;
    double v_max = 25.0;
    double pause_s = 1e-3;
};

enum class motion_phase { moving, paused };

struct mobility_state {
    point position;
    point destination;
    double speed = 0.0;
    double pause_remaining = 0.0;
    motion_phase phase = motion_phase::paused;
};

// Users start at a uniform position and wait out one pause.
inline mobility_state initial_state(const waypoint_params& p, rng_t& rng) {
    mobility_state s;
    s.position = p.bounds.uniform_point(rng);
    s.destination = s.position;
    s.pause_remaining = p.pause_s;
    s.phase = motion_phase::paused;
    return s;
}

// Advances one user by dt seconds. Time left over after an arrival or an
// expired pause is spent in the next phase.
inline mobility_state step_waypoint(mobility_state s, double dt, const waypoint_params& p, rng_t& rng) {
    if (!(dt > 0.0)) throw contract_error("step_waypoint: dt must be positive");
    double remaining = dt;
    for (int guard = 0; remaining > 0.0 && guard < 10000; ++guard) {
        if (s.phase == motion_phase::paused) {
            if (s.pause_remaining > remaining) {
                s.pause_remaining -= remaining;
                return s;
            }
            remaining -= s.pause_remaining;
            s.pause_remaining = 0.0;
            s.destination = p.bounds.uniform_point(rng);
            std::uniform_real_distribution<double> uv(p.v_min, p.v_max);
            s.speed = uv(rng);
            s.phase = motion_phase::moving;
            continue;
        }
        const double dx = s.destination.x - s.position.x;
        const double dy = s.destination.y - s.position.y;
        const double left = std::hypot(dx, dy);
        const double travel = s.speed * remaining;
        if (travel >= left) {
            s.position = s.destination;
            remaining -= left / s.speed;
            s.phase = motion_phase::paused;
            s.pause_remaining = p.pause_s;
            continue;
        }
        const double theta = std::atan2(dy, dx);
        s.position.x += s.speed * remaining * std::cos(theta);
        s.position.y += s.speed * remaining * std::sin(theta);
        remaining = 0.0;
    }
    return s;
}

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

// Log-distance path loss; beta is the linear path-loss constant.
inline double received_power_dbm(double pt_dbm, double distance_m, double alpha, double beta) {
    if (!(distance_m > 0.0)) throw domain_error("received_power_dbm: distance must be positive");
    return pt_dbm - (10.0 * std::log10(beta) + 10.0 * alpha * std::log10(distance_m));
}

inline double noise_power_dbm(double n0_dbm_per_hz, double bw_hz) { return n0_dbm_per_hz + 10.0 * std::log10(bw_hz); }

// Linear SNR Pr / (N0·BW).
inline double instantaneous_snr(double pr_dbm, double n0_dbm_per_hz, double bw_hz) {
    if (!(bw_hz > 0.0)) throw domain_error("instantaneous_snr: bandwidth must be positive");
    return std::pow(10.0, (pr_dbm - noise_power_dbm(n0_dbm_per_hz, bw_hz)) / 10.0);
}

// Circularly-symmetric complex Gaussian of total variance `variance`.
inline cplx complex_normal(rng_t& rng, double variance) {
    std::normal_distribution<double> nd(0.0, std::sqrt(variance / 2.0));
    const double re = nd(rng);
    return {re, nd(rng)};
}

// |h| ~ Rayleigh with E|h|² = scale².
inline cplx draw_channel_gain(double scale, rng_t& rng) {
    if (!(scale > 0.0)) throw domain_error("draw_channel_gain: scale must be positive");
    return complex_normal(rng, scale * scale);
}

enum class reporting_channel { perfect, imperfect };

struct scenario_config {
    waypoint_params mobility;
    double sensing_period_s = 1.0;  // mobility step per sensing period
    std::size_t su_count = 3;
    std::size_t antennas = 15;
    std::size_t samples = 100;
    std::size_t seq_len = 20;
    double pt_dbm = 10.0 * std::log10(200.0);
    double alpha = 3.8;
    double beta = std::pow(10.0, 3.453);
    double n0_dbm_per_hz = -150.0;
    double bw_hz = 10e6;
    double min_distance_m = 1.0;
    std::vector<double> sensing_fading_scale{1.0, 1.0, 1.0};
    std::vector<double> reporting_fading_scale{1.0, 1.0, 1.0};
    reporting_channel reporting = reporting_channel::perfect;
    std::uint64_t seed = 20240601;

    double noise_variance_mw() const { return dbm_to_mw(noise_power_dbm(n0_dbm_per_hz, bw_hz)); }

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0) || !std::isfinite(v)) throw config_error(std::string("scenario: ") + what + " must be positive");
        };
        positive(mobility.bounds.width, "area width");
        positive(mobility.bounds.height, "area height");
        positive(mobility.v_min, "v_min");
        positive(mobility.v_max, "v_max");
        positive(mobility.pause_s, "pause");
        positive(sensing_period_s, "sensing period");
        positive(alpha, "alpha");
        positive(beta, "beta");
        positive(bw_hz, "bandwidth");
        positive(min_distance_m, "minimum distance");
        if (mobility.v_min > mobility.v_max) throw config_error("scenario: v_min exceeds v_max");
        if (su_count == 0 || antennas == 0 || samples == 0 || seq_len == 0)
            throw config_error("scenario: S, M, N and lambda must be positive");
        if (!std::isfinite(pt_dbm) || !std::isfinite(n0_dbm_per_hz)) throw config_error("scenario: non-finite power");
        if (sensing_fading_scale.size() != su_count || reporting_fading_scale.size() != su_count)
            throw config_error("scenario: need one sensing and one reporting fading scale per SU");
        for (double s : sensing_fading_scale) positive(s, "sensing fading scale");
        for (double s : reporting_fading_scale) positive(s, "reporting fading scale");
    }
};

// Complex M×N received block of one SU for one sensing period, row-major.
struct signal_matrix {
    std::size_t rows = 0;  // antennas
    std::size_t cols = 0;  // samples
    std::vector<cplx> entries;
    std::size_t su_index = 0;
    std::size_t period_index = 0;
    int label = 0;

    cplx operator()(std::size_t m, std::size_t n) const { return entries[m * cols + n]; }
};

// Positions of the PU and every SU at the start of a sensing period.
struct snapshot {
    point pu;
    std::vector<point> sus;
};

// Runs Random Waypoint for the PU and all SUs over `periods` sensing periods.
inline std::vector<snapshot> simulate_trajectory(const scenario_config& cfg, std::size_t periods, rng_t& rng) {
    std::vector<mobility_state> users;
    users.reserve(cfg.su_count + 1);
    for (std::size_t i = 0; i <= cfg.su_count; ++i) users.push_back(initial_state(cfg.mobility, rng));
    std::vector<snapshot> out;
    out.reserve(periods);
    for (std::size_t u = 0; u < periods; ++u) {
        snapshot snap;
        snap.pu = users[0].position;
        for (std::size_t s = 1; s <= cfg.su_count; ++s) snap.sus.push_back(users[s].position);
        out.push_back(std::move(snap));
        for (auto& user : users) user = step_waypoint(user, cfg.sensing_period_s, cfg.mobility, rng);
    }
    return out;
}

// Received PU power in mW at an SU, distance clamped below at min_distance_m.
inline double received_power_mw(const scenario_config& cfg, point pu, point su) {
    const double d = std::max(distance(pu, su), cfg.min_distance_m);
    return dbm_to_mw(received_power_dbm(cfg.pt_dbm, d, cfg.alpha, cfg.beta));
}

// One sensing period for every SU. Channel gains are drawn once per period
// and antenna; w(n) is the single PU waveform, common to all SUs.
inline std::vector<signal_matrix> generate_period(const scenario_config& cfg, const snapshot& where, bool pu_active,
                                                  rng_t& rng, std::size_t period_index = 0) {
    if (where.sus.size() != cfg.su_count) throw contract_error("generate_period: snapshot SU count mismatch");
    const std::size_t M = cfg.antennas, N = cfg.samples;
    const double noise_var = cfg.noise_variance_mw();
    const bool perfect = cfg.reporting == reporting_channel::perfect;

    std::vector<cplx> w(N);
    for (auto& v : w) v = complex_normal(rng, 1.0);

    std::vector<signal_matrix> out;
    out.reserve(cfg.su_count);
    for (std::size_t s = 0; s < cfg.su_count; ++s) {
        signal_matrix y;
        y.rows = M;
        y.cols = N;
        y.su_index = s;
        y.period_index = period_index;
        y.label = pu_active ? 1 : 0;
        y.entries.resize(M * N);
        const double amp = std::sqrt(received_power_mw(cfg, where.pu, where.sus[s]));
        for (std::size_t m = 0; m < M; ++m) {
            const cplx h = draw_channel_gain(cfg.sensing_fading_scale[s], rng);
            const cplx hr = perfect ? cplx{1.0, 0.0} : draw_channel_gain(cfg.reporting_fading_scale[s], rng);
            for (std::size_t n = 0; n < N; ++n) {
                cplx v = complex_normal(rng, noise_var);
                if (pu_active) v += h * amp * w[n];
                v *= hr;
                if (!perfect) v += complex_normal(rng, noise_var);
                y.entries[m * N + n] = v;
            }
        }
        out.push_back(std::move(y));
    }
    return out;
}

}  // namespace massformer
