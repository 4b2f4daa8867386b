#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "massformer/dataset.hpp"
#include "massformer/mobility_channel.hpp"

using namespace massformer;

namespace {

mobility_state moving_towards(point from, point to, double speed) {
    mobility_state s;
    s.position = from;
    s.destination = to;
    s.speed = speed;
    s.phase = motion_phase::moving;
    return s;
}

// Places the PU so that the received power equals the noise power (0 dB).
double zero_db_distance(const scenario_config& c) {
    const double noise = noise_power_dbm(c.n0_dbm_per_hz, c.bw_hz);
    return std::pow(10.0, (c.pt_dbm - 10.0 * std::log10(c.beta) - noise) / (10.0 * c.alpha));
}

double entry_variance(const std::vector<signal_matrix>& ys) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& y : ys)
        for (const auto& v : y.entries) {
            s += std::norm(v);
            ++n;
        }
    return s / static_cast<double>(n);
}

}  // namespace

TEST(Waypoint, MovesAlongZeroBearing) {
    rng_t rng(1);
    waypoint_params p;
    auto s = step_waypoint(moving_towards({0, 0}, {100, 0}, 20.0), 1.0, p, rng);
    EXPECT_NEAR(s.position.x, 20.0, 1e-12);
    EXPECT_NEAR(s.position.y, 0.0, 1e-12);
    EXPECT_EQ(s.phase, motion_phase::moving);
}

TEST(Waypoint, MovesAlongRightAngleBearing) {
    rng_t rng(1);
    waypoint_params p;
    auto s = step_waypoint(moving_towards({0, 0}, {0, 100}, 20.0), 1.0, p, rng);
    EXPECT_NEAR(s.position.x, 0.0, 1e-12);
    EXPECT_NEAR(s.position.y, 20.0, 1e-12);
}

TEST(Waypoint, ArrivalSnapsAndPauses) {
    rng_t rng(2);
    waypoint_params p;
    p.pause_s = 5.0;
    auto s = step_waypoint(moving_towards({0, 0}, {10, 0}, 20.0), 1.0, p, rng);
    EXPECT_EQ(s.position.x, 10.0);
    EXPECT_EQ(s.position.y, 0.0);
    EXPECT_EQ(s.phase, motion_phase::paused);
    EXPECT_NEAR(s.pause_remaining, 4.5, 1e-12);
}

TEST(Waypoint, PauseExpiryPicksDestinationAndSpeed) {
    rng_t rng(3);
    waypoint_params p;
    mobility_state s;
    s.position = {500, 500};
    s.pause_remaining = 0.25;
    s = step_waypoint(s, 1.0, p, rng);
    EXPECT_EQ(s.phase, motion_phase::moving);
    EXPECT_GE(s.speed, p.v_min);
    EXPECT_LE(s.speed, p.v_max);
    EXPECT_TRUE(p.bounds.contains(s.destination));
    const double moved = distance(s.position, {500, 500});
    EXPECT_NEAR(moved, 0.75 * s.speed, 1e-9);
}

TEST(Waypoint, NonPositiveStepThrows) {
    rng_t rng(4);
    waypoint_params p;
    EXPECT_THROW(step_waypoint(mobility_state{}, 0.0, p, rng), contract_error);
    EXPECT_THROW(step_waypoint(mobility_state{}, -1.0, p, rng), contract_error);
}

TEST(Waypoint, TenThousandStepsStayInBoundsWithSpeedsInRange) {
    rng_t rng(5);
    waypoint_params p;
    auto s = initial_state(p, rng);
    std::size_t moving_steps = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto before = s.position;
        s = step_waypoint(s, 1.0, p, rng);
        ASSERT_TRUE(p.bounds.contains(s.position)) << "step " << i;
        ASSERT_TRUE(p.bounds.contains(s.destination));
        if (s.phase == motion_phase::moving) {
            ++moving_steps;
            ASSERT_GE(s.speed, p.v_min);
            ASSERT_LE(s.speed, p.v_max);
            // Displacement per second never exceeds the top speed.
            ASSERT_LE(distance(before, s.position), p.v_max + 1e-9);
        }
    }
    EXPECT_GT(moving_steps, 9000u);
}

TEST(Trajectory, AllUsersInsideRectangle) {
    scenario_config c;
    rng_t rng(6);
    auto traj = simulate_trajectory(c, 2000, rng);
    ASSERT_EQ(traj.size(), 2000u);
    for (const auto& snap : traj) {
        EXPECT_TRUE(c.mobility.bounds.contains(snap.pu));
        ASSERT_EQ(snap.sus.size(), c.su_count);
        for (const auto& su : snap.sus) EXPECT_TRUE(c.mobility.bounds.contains(su));
    }
}

TEST(PathLoss, ReferenceDistance) {
    const double pt = 10.0 * std::log10(200.0);
    EXPECT_NEAR(pt, 23.0103, 1e-4);
    EXPECT_NEAR(received_power_dbm(pt, 100.0, 3.8, std::pow(10.0, 3.453)), -87.52, 5e-3);
}

TEST(PathLoss, UnitDistanceDropsDistanceTerm) {
    const double beta = std::pow(10.0, 3.453);
    EXPECT_NEAR(received_power_dbm(23.0, 1.0, 3.8, beta), 23.0 - 10.0 * std::log10(beta), 1e-12);
}

TEST(PathLoss, DoublingDistance) {
    const double beta = std::pow(10.0, 3.453);
    const double a = received_power_dbm(23.0, 150.0, 3.8, beta);
    const double b = received_power_dbm(23.0, 300.0, 3.8, beta);
    EXPECT_NEAR(a - b, 10.0 * 3.8 * std::log10(2.0), 1e-10);
    EXPECT_NEAR(a - b, 11.44, 5e-3);
}

TEST(PathLoss, NonPositiveDistanceThrows) {
    EXPECT_THROW(received_power_dbm(23.0, 0.0, 3.8, 10.0), domain_error);
    EXPECT_THROW(received_power_dbm(23.0, -5.0, 3.8, 10.0), domain_error);
}

TEST(PathLoss, SnrFallsWithDistance) {
    scenario_config c;
    double prev = INFINITY;
    for (double d = 1.0; d <= 1500.0; d *= 1.5) {
        const double snr = instantaneous_snr(received_power_dbm(c.pt_dbm, d, c.alpha, c.beta), c.n0_dbm_per_hz, c.bw_hz);
        EXPECT_LT(snr, prev);
        prev = snr;
    }
}

TEST(Snr, EqualPowersGiveUnity) {
    EXPECT_NEAR(instantaneous_snr(-80.0, -150.0, 1e7), 1.0, 1e-12);
}

TEST(Snr, NoisePowerAtReferenceSettings) { EXPECT_NEAR(noise_power_dbm(-150.0, 1e7), -80.0, 1e-12); }

TEST(Snr, DecibelSubtraction) {
    EXPECT_NEAR(10.0 * std::log10(instantaneous_snr(-87.52, -150.0, 1e7)), -7.52, 1e-10);
}

TEST(Fading, UnitScaleSecondMoment) {
    rng_t rng(7);
    double p = 0.0;
    std::complex<double> m{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto h = draw_channel_gain(1.0, rng);
        p += std::norm(h);
        m += h;
    }
    EXPECT_NEAR(p / n, 1.0, 0.02);
    EXPECT_LT(std::abs(m / static_cast<double>(n)), 0.01);
}

TEST(Fading, ScaleTwoSecondMoment) {
    rng_t rng(8);
    double p = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) p += std::norm(draw_channel_gain(2.0, rng));
    EXPECT_NEAR(p / n, 4.0, 0.08);
}

TEST(Fading, NonPositiveScaleThrows) {
    rng_t rng(9);
    EXPECT_THROW(draw_channel_gain(0.0, rng), domain_error);
}

TEST(GeneratePeriod, DimensionsAtReferenceConfig) {
    scenario_config c;
    rng_t rng(10);
    auto traj = simulate_trajectory(c, 1, rng);
    auto ys = generate_period(c, traj[0], true, rng, 7);
    ASSERT_EQ(ys.size(), 3u);
    for (std::size_t s = 0; s < ys.size(); ++s) {
        EXPECT_EQ(ys[s].rows, 15u);
        EXPECT_EQ(ys[s].cols, 100u);
        EXPECT_EQ(ys[s].entries.size(), 1500u);
        EXPECT_EQ(ys[s].su_index, s);
        EXPECT_EQ(ys[s].period_index, 7u);
        EXPECT_EQ(ys[s].label, 1);
    }
}

TEST(GeneratePeriod, NoiseOnlyVariance) {
    scenario_config c;
    rng_t rng(11);
    snapshot where{{0, 0}, {{100, 100}, {200, 200}, {300, 300}}};
    std::vector<signal_matrix> all;
    for (int k = 0; k < 3; ++k) {
        auto ys = generate_period(c, where, false, rng);
        all.insert(all.end(), ys.begin(), ys.end());
    }
    EXPECT_NEAR(entry_variance(all) / c.noise_variance_mw(), 1.0, 0.05);
}

TEST(GeneratePeriod, ZeroDbSnrDoublesVariance) {
    scenario_config c;
    c.su_count = 1;
    c.sensing_fading_scale = {1.0};
    c.reporting_fading_scale = {1.0};
    const double d = zero_db_distance(c);
    EXPECT_NEAR(instantaneous_snr(received_power_dbm(c.pt_dbm, d, c.alpha, c.beta), c.n0_dbm_per_hz, c.bw_hz), 1.0,
                1e-9);
    snapshot where{{0, 0}, {{d, 0}}};
    rng_t rng(12);
    std::vector<signal_matrix> all;
    // Fading is drawn per antenna and period; average over many draws.
    for (int k = 0; k < 300; ++k) {
        auto ys = generate_period(c, where, true, rng);
        all.insert(all.end(), ys.begin(), ys.end());
    }
    EXPECT_NEAR(entry_variance(all) / c.noise_variance_mw(), 2.0, 0.1);
}

TEST(GeneratePeriod, ImperfectReportingAddsNoise) {
    scenario_config c;
    c.reporting = reporting_channel::imperfect;
    snapshot where{{0, 0}, {{100, 100}, {200, 200}, {300, 300}}};
    rng_t rng(13);
    std::vector<signal_matrix> all;
    for (int k = 0; k < 200; ++k) {
        auto ys = generate_period(c, where, false, rng);
        all.insert(all.end(), ys.begin(), ys.end());
    }
    // |h_r|²·σ² + σ² with E|h_r|² = 1.
    EXPECT_NEAR(entry_variance(all) / c.noise_variance_mw(), 2.0, 0.1);
}

TEST(GeneratePeriod, NoiseCovarianceApproachesScaledIdentity) {
    scenario_config c;
    c.samples = 10000;
    c.antennas = 4;
    snapshot where{{0, 0}, {{100, 100}, {200, 200}, {300, 300}}};
    rng_t rng(14);
    auto ys = generate_period(c, where, false, rng);
    auto r = covariance(ys[0]);
    const double sigma2 = c.noise_variance_mw();
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(r(i, i).real() / sigma2, 1.0, 0.05);
        for (std::size_t j = 0; j < 4; ++j)
            if (i != j) {
                EXPECT_LT(std::abs(r(i, j)), 0.05 * r(i, i).real());
            }
    }
}

TEST(GeneratePeriod, SameStreamSameSignals) {
    scenario_config c;
    snapshot where{{0, 0}, {{100, 100}, {200, 200}, {300, 300}}};
    auto a = make_stream(42, 3);
    auto b = make_stream(42, 3);
    auto ya = generate_period(c, where, true, a);
    auto yb = generate_period(c, where, true, b);
    for (std::size_t s = 0; s < ya.size(); ++s) EXPECT_EQ(ya[s].entries, yb[s].entries);
}

TEST(Scenario, ValidationRejectsBadValues) {
    scenario_config c;
    EXPECT_NO_THROW(c.validate());
    c.mobility.v_min = 30.0;
    EXPECT_THROW(c.validate(), config_error);
    c = scenario_config{};
    c.alpha = -1.0;
    EXPECT_THROW(c.validate(), config_error);
    c = scenario_config{};
    c.su_count = 4;
    EXPECT_THROW(c.validate(), config_error);
}
