#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "massformer/detection.hpp"
#include "massformer/mobility_channel.hpp"
#include "massformer/pipeline.hpp"

using namespace massformer;

namespace {

std::vector<double> one_to(std::size_t n) {
    std::vector<double> v(n);
    std::iota(v.begin(), v.end(), 1.0);
    return v;
}

std::vector<double> normals(std::size_t n, double mean, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(mean, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

sample_sequence noise_sequence(std::size_t lambda, std::size_t m, std::size_t n, double variance, rng_t& rng,
                               double amplitude = 1.0) {
    sample_sequence seq;
    for (std::size_t t = 0; t < lambda; ++t) {
        signal_matrix y;
        y.rows = m;
        y.cols = n;
        for (std::size_t i = 0; i < m * n; ++i) y.entries.push_back(amplitude * complex_normal(rng, variance));
        seq.cms.push_back(covariance(y));
    }
    return seq;
}

}  // namespace

TEST(Statistic, EqualProbabilitiesGiveZero) { EXPECT_EQ(test_statistic(0.5, 0.5), 0.0); }

TEST(Statistic, NinetyTenGivesLogNine) { EXPECT_NEAR(test_statistic(0.1, 0.9), std::log(9.0), 1e-14); }

TEST(Statistic, StrictlyIncreasingInH1Probability) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 1; i < 100; ++i) {
        const double p1 = i / 100.0;
        const double s = test_statistic(1.0 - p1, p1);
        EXPECT_GT(s, prev);
        prev = s;
    }
}

TEST(Statistic, FiniteAtSaturation) {
    EXPECT_TRUE(std::isfinite(test_statistic(0.0, 1.0)));
    EXPECT_TRUE(std::isfinite(test_statistic(1.0, 0.0)));
}

TEST(Statistic, LogitDifferenceMatchesProbabilityForm) {
    const double l0 = 0.4, l1 = -1.1;
    const double z = std::exp(l0) + std::exp(l1);
    EXPECT_NEAR(log_odds_from_logits(l0, l1), test_statistic(std::exp(l0) / z, std::exp(l1) / z), 1e-14);
}

TEST(Threshold, OneToHundredAtTenPercent) {
    auto t = calibrate_threshold(one_to(100), 0.1);
    EXPECT_EQ(t.index, 90u);
    EXPECT_EQ(t.gamma, 90.0);
    EXPECT_FALSE(t.clamped);
}

TEST(Threshold, OneToHundredAtHalf) {
    auto t = calibrate_threshold(one_to(100), 0.5);
    EXPECT_EQ(t.index, 50u);
    EXPECT_EQ(t.gamma, 50.0);
}

TEST(Threshold, InputOrderIrrelevant) {
    auto v = one_to(100);
    std::mt19937_64 rng(1);
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(calibrate_threshold(v, 0.1).gamma, 90.0);
}

TEST(Threshold, OutOfRangeIndexIsClamped) {
    auto hi = calibrate_threshold(one_to(10), 1.0);
    EXPECT_TRUE(hi.clamped);
    EXPECT_EQ(hi.index, 1u);
    auto lo = calibrate_threshold(one_to(10), 0.0);
    EXPECT_FALSE(lo.clamped);
    EXPECT_EQ(lo.index, 10u);
    auto small = calibrate_threshold(one_to(5), 0.01);
    EXPECT_TRUE(small.low_count);
}

TEST(Threshold, GammaNonIncreasingInPfa) {
    threshold_table table(normals(997, 0.0, 2));
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 100; ++k) {
        const double g = table.at(k / 100.0).gamma;
        EXPECT_LE(g, prev);
        prev = g;
    }
}

TEST(Threshold, ContractErrors) {
    EXPECT_THROW(threshold_table(std::vector<double>{}), contract_error);
    EXPECT_THROW(calibrate_threshold(one_to(3), 1.5), contract_error);
}

TEST(Threshold, EmpiricalFalseAlarmOnFreshDraws) {
    const auto calib = normals(5000, 0.0, 3);
    const auto fresh = normals(5000, 0.0, 4);
    for (double pfa : {0.05, 0.09, 0.1, 0.2}) {
        const auto t = calibrate_threshold(calib, pfa);
        EXPECT_NEAR(detection_rate(fresh, t.gamma), pfa, 0.02) << pfa;
    }
}

TEST(Decide, TieGoesToH0) {
    EXPECT_FALSE(decide(1.5, 1.5));
    EXPECT_TRUE(decide(std::nextafter(1.5, 2.0), 1.5));
}

TEST(Decide, MonotoneInStatistic) {
    bool said_h1 = false;
    for (int i = -50; i <= 50; ++i) {
        const bool d = decide(i / 10.0, 0.3);
        EXPECT_TRUE(!said_h1 || d);
        said_h1 = d;
    }
}

TEST(Roc, PerfectSeparation) {
    auto h0 = one_to(100);
    std::vector<double> h1(50, 1000.0);
    auto r = roc_curve(h0, h1, default_pfa_grid());
    ASSERT_EQ(r.points.size(), 30u);
    for (const auto& p : r.points) EXPECT_EQ(p.pd, 1.0);
    EXPECT_NEAR(r.auc, 1.0, 1e-12);
}

TEST(Roc, UninformativeStatisticIsNearChance) {
    const auto h0 = normals(5000, 0.0, 5);
    const auto h1 = normals(5000, 0.0, 6);
    std::vector<double> full;
    for (int k = 1; k < 100; ++k) full.push_back(k / 100.0);
    auto r = roc_curve(h0, h1, full);
    EXPECT_NEAR(r.auc, 0.5, 0.05);
}

TEST(Roc, MonotoneAndBounded) {
    auto r = roc_curve(normals(2000, 0.0, 7), normals(1000, 1.0, 8), default_pfa_grid());
    for (std::size_t i = 1; i < r.points.size(); ++i) {
        EXPECT_GE(r.points[i].pd, r.points[i - 1].pd);
        EXPECT_LE(r.points[i].gamma, r.points[i - 1].gamma);
    }
    for (const auto& p : r.points) {
        EXPECT_GE(p.pd, 0.0);
        EXPECT_LE(p.pd, 1.0);
    }
    EXPECT_GT(r.auc, 0.5);
    EXPECT_LE(r.auc, 1.0);
}

TEST(Roc, DefaultGridContainsOperatingPoint) {
    auto g = default_pfa_grid();
    EXPECT_EQ(g.size(), 30u);
    EXPECT_EQ(g.front(), 0.01);
    EXPECT_EQ(g.back(), 0.3);
    EXPECT_NE(std::find(g.begin(), g.end(), 0.09), g.end());
}

TEST(Roc, GridIsSortedAndDeduplicated) {
    auto r = roc_curve(one_to(100), one_to(100), {0.2, 0.1, 0.2});
    ASSERT_EQ(r.points.size(), 2u);
    EXPECT_EQ(r.points[0].pfa, 0.1);
}

TEST(Roc, EmptySetsAreContractErrors) {
    EXPECT_THROW(roc_curve({}, one_to(3), default_pfa_grid()), contract_error);
    EXPECT_THROW(roc_curve(one_to(3), {}, default_pfa_grid()), contract_error);
}

TEST(Roc, LogOddsAndRatioGiveIdenticalCurves) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<double> lo0, lo1, ra0, ra1;
    for (int i = 0; i < 3000; ++i) {
        const double p0 = u(rng);
        lo0.push_back(test_statistic(1.0 - p0, p0));
        ra0.push_back(p0 / (1.0 - p0));
        const double p1 = std::min(0.99, u(rng) + 0.1);
        lo1.push_back(test_statistic(1.0 - p1, p1));
        ra1.push_back(p1 / (1.0 - p1));
    }
    auto a = roc_curve(lo0, lo1, default_pfa_grid());
    auto b = roc_curve(ra0, ra1, default_pfa_grid());
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].pd, b.points[i].pd);
    EXPECT_EQ(a.auc, b.auc);
}

TEST(Roc, ChanceSigmaFormula) {
    EXPECT_NEAR(chance_auc_sigma(5000, 500), std::sqrt(5501.0 / (12.0 * 5000.0 * 500.0)), 1e-15);
}

TEST(SensingMetrics, AllCorrect) {
    std::vector<int> y{0, 1, 0, 1};
    auto s = sensing_metrics(y, y);
    EXPECT_EQ(s.sensing_error, 0.0);
    EXPECT_EQ(s.accuracy, 1.0);
    EXPECT_EQ(s.pd, 1.0);
    EXPECT_EQ(s.pfa, 0.0);
}

TEST(SensingMetrics, AlwaysH0OnBalancedSet) {
    std::vector<int> y{0, 1, 0, 1, 0, 1};
    std::vector<int> d(6, 0);
    auto s = sensing_metrics(d, y);
    EXPECT_EQ(s.pd, 0.0);
    EXPECT_EQ(s.pfa, 0.0);
    EXPECT_EQ(s.sensing_error, 0.5);
    EXPECT_EQ(s.accuracy, 0.5);
}

TEST(SensingMetrics, RandomDecisionsNearHalfAccuracy) {
    std::mt19937_64 rng(10);
    std::bernoulli_distribution coin(0.5);
    std::vector<int> y, d;
    for (int i = 0; i < 20000; ++i) {
        y.push_back(i % 2);
        d.push_back(coin(rng));
    }
    EXPECT_NEAR(sensing_metrics(d, y).accuracy, 0.5, 0.02);
}

TEST(SensingMetrics, LengthMismatch) {
    std::vector<int> a{0, 1}, b{0};
    EXPECT_THROW(sensing_metrics(a, b), contract_error);
}

TEST(EnergyDetector, NoiseOnlyMeanIsVariance) {
    rng_t rng(11);
    double acc = 0.0;
    const int draws = 400;
    for (int i = 0; i < draws; ++i) acc += energy_detector(noise_sequence(4, 4, 50, 2.5, rng));
    EXPECT_NEAR(acc / draws, 2.5, 0.03);
}

TEST(EnergyDetector, ScalesWithSquaredAmplitude) {
    rng_t a(12), b(12);
    const double base = energy_detector(noise_sequence(3, 4, 20, 1.0, a));
    const double scaled = energy_detector(noise_sequence(3, 4, 20, 1.0, b, 3.0));
    EXPECT_NEAR(scaled, 9.0 * base, 1e-12 * scaled);
}

TEST(EnergyDetector, ZeroDbSnrDoublesH0Mean) {
    scenario_config sc;
    sc.su_count = 1;
    sc.antennas = 4;
    sc.samples = 200;
    sc.reporting = reporting_channel::perfect;
    sc.sensing_fading_scale = {1.0};
    sc.reporting_fading_scale = {1.0};
    const double sigma2 = sc.noise_variance_mw();
    // Place the SU where received power equals the noise power.
    const double pr_db = mw_to_dbm(sigma2);
    const double d = std::pow(10.0, (sc.pt_dbm - pr_db - 10.0 * std::log10(sc.beta)) / (10.0 * sc.alpha));
    snapshot where;
    where.pu = {0.0, 0.0};
    where.sus = {{d, 0.0}};
    ASSERT_NEAR(received_power_mw(sc, where.pu, where.sus[0]), sigma2, 1e-9 * sigma2);
    double h0 = 0.0, h1 = 0.0;
    const int draws = 3000;
    for (int i = 0; i < draws; ++i) {
        auto r0 = make_stream(13, 2 * i), r1 = make_stream(13, 2 * i + 1);
        sample_sequence s0, s1;
        s0.cms.push_back(covariance(generate_period(sc, where, false, r0, i)[0]));
        s1.cms.push_back(covariance(generate_period(sc, where, true, r1, i)[0]));
        h0 += energy_detector(s0);
        h1 += energy_detector(s1);
    }
    EXPECT_NEAR(h1 / h0, 2.0, 0.1);
}

TEST(EnergyDetector, PlaneFormMatchesCovarianceForm) {
    rng_t rng(14);
    auto seq = noise_sequence(3, 5, 30, 1.7, rng);
    auto planes = to_channel_planes(seq, 8, plane_layout::real_imag_magnitude);
    EXPECT_NEAR(energy_detector(planes.values, 3, 8, 3, 5), energy_detector(seq), 1e-12);
    css_sample cs;
    cs.per_su = {seq, seq};
    EXPECT_NEAR(cooperative_energy(cs), energy_detector(seq), 1e-12);
}

TEST(DetectionReport, CsvAndSummaryShape) {
    detection_report rep;
    rep.test_samples = 100;
    rep.calibration_samples = 200;
    std::vector<std::uint8_t> labels;
    std::vector<double> test;
    for (int i = 0; i < 100; ++i) {
        labels.push_back(static_cast<std::uint8_t>(i % 2));
        test.push_back(i % 2 ? 10.0 + i : -1.0 * i);
    }
    rep.results.push_back(score_method("energy", -150.0, normals(200, 0.0, 15), test, labels, default_pfa_grid(), 0.09));
    std::ostringstream os;
    rep.write_csv(os);
    const auto text = os.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "method,n0_dbm_per_hz,pfa,threshold,pd");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 31);
    EXPECT_NE(text.find("energy,-150,0.09,"), std::string::npos);
    auto j = rep.summary();
    EXPECT_EQ(j["results"][0]["pd"], 1.0);
    EXPECT_NE(rep.find("energy", -150.0), nullptr);
    EXPECT_EQ(rep.find("massformer", -150.0), nullptr);
}
