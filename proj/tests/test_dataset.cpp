#include <gtest/gtest.h>

#include <complex>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "massformer/dataset.hpp"
#include "massformer/pipeline.hpp"

using namespace massformer;
namespace fs = std::filesystem;

namespace {

signal_matrix random_signal(std::size_t m, std::size_t n, rng_t& rng) {
    signal_matrix y;
    y.rows = m;
    y.cols = n;
    for (std::size_t i = 0; i < m * n; ++i) y.entries.push_back(complex_normal(rng, 1.0));
    return y;
}

// xᴴ R x for a random complex probe.
double quadratic_form(const covariance_matrix& r, rng_t& rng) {
    std::vector<cplx> x(r.size);
    for (auto& v : x) v = complex_normal(rng, 1.0);
    cplx acc{};
    for (std::size_t i = 0; i < r.size; ++i)
        for (std::size_t j = 0; j < r.size; ++j) acc += std::conj(x[i]) * r(i, j) * x[j];
    return acc.real();
}

std::vector<covariance_matrix> labelled_stream(std::size_t count, int label) {
    std::vector<covariance_matrix> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i].size = 1;
        out[i].entries = {cplx{static_cast<double>(i), 0.0}};
        out[i].period_index = i;
        out[i].label = label;
    }
    return out;
}

sample_sequence identity_sequence(std::size_t lambda, std::size_t m) {
    sample_sequence seq;
    for (std::size_t t = 0; t < lambda; ++t) {
        covariance_matrix r;
        r.size = m;
        r.entries.assign(m * m, cplx{});
        for (std::size_t i = 0; i < m; ++i) r.entries[i * m + i] = 1.0;
        seq.cms.push_back(r);
    }
    return seq;
}

run_config tiny_config() {
    run_config c = desk_profile();
    c.scenario.antennas = 3;
    c.scenario.samples = 20;
    c.scenario.seq_len = 2;
    c.data.plane_size = 4;
    c.model.tube_t = 2;
    sync_model_shape(c);
    return c;
}

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "massformer_dataset_test";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Covariance, HandExampleIsIdentity) {
    signal_matrix y;
    y.rows = 2;
    y.cols = 2;
    const cplx i{0.0, 1.0};
    y.entries = {1.0, i, 1.0, -i};
    auto r = covariance(y);
    EXPECT_NEAR(std::abs(r(0, 0) - 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(r(1, 1) - 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(r(0, 1)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(r(1, 0)), 0.0, 1e-15);
}

TEST(Covariance, ZeroSignalGivesZero) {
    signal_matrix y;
    y.rows = 3;
    y.cols = 4;
    y.entries.assign(12, cplx{});
    auto r = covariance(y);
    for (auto v : r.entries) EXPECT_EQ(v, cplx{});
}

TEST(Covariance, NoSamplesThrows) {
    signal_matrix y;
    y.rows = 2;
    y.cols = 0;
    EXPECT_THROW(covariance(y), contract_error);
}

TEST(Covariance, RandomIsHermitianAndPositive) {
    rng_t rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        auto r = covariance(random_signal(5, 30, rng));
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) EXPECT_LT(std::abs(r(i, j) - std::conj(r(j, i))), 1e-12);
        for (int p = 0; p < 100; ++p) EXPECT_GE(quadratic_form(r, rng), -1e-10);
        EXPECT_GE(r.trace(), 0.0);
    }
}

TEST(Covariance, TraceIsTotalPerAntennaPower) {
    rng_t rng(2);
    auto y = random_signal(4, 50, rng);
    double power = 0.0;
    for (auto v : y.entries) power += std::norm(v);
    EXPECT_NEAR(covariance(y).trace(), power / 50.0, 1e-12);
}

TEST(Covariance, CarriesIndices) {
    rng_t rng(3);
    auto y = random_signal(2, 3, rng);
    y.su_index = 2;
    y.period_index = 17;
    y.label = 1;
    auto r = covariance(y);
    EXPECT_EQ(r.su_index, 2u);
    EXPECT_EQ(r.period_index, 17u);
    EXPECT_EQ(r.label, 1);
}

TEST(Assemble, FortyCmsMakeTwoSequences) {
    auto stream = labelled_stream(40, 1);
    auto seqs = assemble_sequences(stream, 20);
    ASSERT_EQ(seqs.size(), 2u);
    EXPECT_EQ(seqs[1].cms.front().period_index, 20u);
    EXPECT_EQ(seqs[1].label, 1);
}

TEST(Assemble, TailIsDropped) {
    auto stream = labelled_stream(39, 0);
    auto seqs = assemble_sequences(stream, 20);
    ASSERT_EQ(seqs.size(), 1u);
    EXPECT_EQ(seqs[0].cms.size(), 20u);
}

TEST(Assemble, MixedLabelsRejected) {
    auto stream = labelled_stream(4, 0);
    stream[1].label = 1;
    stream[3].label = 1;
    EXPECT_THROW(assemble_sequences(stream, 2), contract_error);
}

TEST(Assemble, LosslessExceptTail) {
    auto stream = labelled_stream(23, 1);
    auto seqs = assemble_sequences(stream, 5);
    std::size_t k = 0;
    for (const auto& s : seqs)
        for (const auto& cm : s.cms) EXPECT_EQ(cm.period_index, k++);
    EXPECT_EQ(k, 20u);
}

TEST(Planes, IdentityIsPaddedToSixteen) {
    auto p = to_channel_planes(identity_sequence(2, 15), 16);
    EXPECT_EQ(p.channels, 3u);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < 16; ++j) {
                const double expect = (i == j && i < 15) ? 1.0 : 0.0;
                EXPECT_EQ(p.at(t, i, j, 0), expect);
                EXPECT_EQ(p.at(t, i, j, 1), 0.0);
                EXPECT_EQ(p.at(t, i, j, 2), expect);
            }
}

TEST(Planes, MagnitudeIsModulus) {
    rng_t rng(4);
    sample_sequence seq;
    seq.cms.push_back(covariance(random_signal(3, 10, rng)));
    auto p = to_channel_planes(seq, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            EXPECT_NEAR(p.at(0, i, j, 2), std::hypot(p.at(0, i, j, 0), p.at(0, i, j, 1)), 1e-15);
}

TEST(Planes, TwoChannelLayout) {
    auto p = to_channel_planes(identity_sequence(1, 2), 2, plane_layout::real_imag);
    EXPECT_EQ(p.channels, 2u);
    EXPECT_EQ(p.values.size(), 8u);
}

TEST(Planes, PowerScaleDivides) {
    auto p = to_channel_planes(identity_sequence(1, 2), 2, plane_layout::real_imag_magnitude, 4.0);
    EXPECT_EQ(p.at(0, 0, 0, 0), 0.25);
}

TEST(Planes, TooManyAntennasThrows) {
    EXPECT_THROW(to_channel_planes(identity_sequence(1, 17), 16), config_error);
}

TEST(Standardization, TrainingPlanesHaveZeroMeanUnitStd) {
    rng_t rng(5);
    std::vector<double> planes;
    for (int k = 0; k < 50; ++k) {
        sample_sequence seq;
        seq.cms.push_back(covariance(random_signal(3, 10, rng)));
        auto p = to_channel_planes(seq, 4);
        planes.insert(planes.end(), p.values.begin(), p.values.end());
    }
    auto st = fit_channel_stats(planes, 3);
    st.apply(planes);
    auto again = fit_channel_stats(planes, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(again.mean[c], 0.0, 1e-6);
        EXPECT_NEAR(again.stddev[c], 1.0, 1e-3);
    }
}

TEST(Persistence, RoundTripIsBitIdentical) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 100, label_schedule::alternate);
    ASSERT_EQ(ds.count(), 100u);
    const auto path = temp_file("roundtrip.msd");
    save_dataset(ds, path.string());
    auto back = load_dataset(path.string(), ds.config_hash);
    EXPECT_TRUE(back == ds);
    EXPECT_EQ(back.content_hash(), ds.content_hash());
}

TEST(Persistence, TruncatedFileIsParseError) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 10, label_schedule::alternate);
    const auto path = temp_file("truncated.msd");
    save_dataset(ds, path.string());
    const auto full = fs::file_size(path);
    for (auto keep : {std::uintmax_t{4}, std::uintmax_t{40}, full / 2, full - 1}) {
        fs::resize_file(path, keep);
        EXPECT_THROW(load_dataset(path.string()), parse_error) << keep;
        save_dataset(ds, path.string());
    }
}

TEST(Persistence, HashMismatchIsVersionError) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 4, label_schedule::alternate);
    const auto path = temp_file("hash.msd");
    save_dataset(ds, path.string());
    EXPECT_THROW(load_dataset(path.string(), ds.config_hash + 1), version_error);
}

TEST(Persistence, HeaderCountsMatchPayload) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 6, label_schedule::alternate);
    const auto path = temp_file("header.msd");
    save_dataset(ds, path.string());
    std::ifstream is(path, std::ios::binary);
    is.seekg(8 + 8 + 6 * 8 + 8);
    std::uint64_t count = 0, planes = 0;
    is.read(reinterpret_cast<char*>(&count), 8);
    is.read(reinterpret_cast<char*>(&planes), 8);
    EXPECT_EQ(count, 6u);
    EXPECT_EQ(planes, ds.planes.size());
    const auto expected = 8 + 8 + 6 * 8 + 8 + 8 + 8 + planes * 8 + count + count * 8;
    EXPECT_EQ(fs::file_size(path), expected);
}

TEST(Persistence, CorruptedCountsRejected) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 3, label_schedule::alternate);
    const auto path = temp_file("corrupt.msd");
    save_dataset(ds, path.string());
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8 + 8 + 6 * 8 + 8);
        const std::uint64_t bogus = 5;
        f.write(reinterpret_cast<const char*>(&bogus), 8);
    }
    EXPECT_THROW(load_dataset(path.string()), parse_error);
}

TEST(Generation, SameSeedIsByteIdentical) {
    auto c = tiny_config();
    auto a = generate_role(c, data_role::train, 20, label_schedule::alternate);
    auto b = generate_role(c, data_role::train, 20, label_schedule::alternate);
    EXPECT_TRUE(a == b);
    auto other = generate_role(c, data_role::test, 20, label_schedule::alternate);
    EXPECT_NE(a.content_hash(), other.content_hash());
}

TEST(Generation, LabelsAlternateAndAreBalanced) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 10, label_schedule::alternate);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(ds.labels[k], k % 2);
    auto h0 = generate_role(c, data_role::calibration, 5, label_schedule::all_h0);
    for (auto l : h0.labels) EXPECT_EQ(l, 0);
}

TEST(Generation, PaddingRowsStayZero) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 4, label_schedule::alternate);
    const std::size_t h = ds.size, C = ds.channels;
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t s = 0; s < ds.su_count; ++s) {
            auto p = ds.su_planes(k, s);
            for (std::size_t t = 0; t < ds.seq_len; ++t)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < h; ++j)
                        if (i >= ds.antennas || j >= ds.antennas) {
                            for (std::size_t ch = 0; ch < C; ++ch) EXPECT_EQ(p[((t * h + i) * h + j) * C + ch], 0.0);
                        }
        }
}

TEST(Generation, NoiseNormalizedDiagonalNearOneUnderH0) {
    auto c = tiny_config();
    c.scenario.samples = 400;
    auto ds = generate_role(c, data_role::calibration, 40, label_schedule::all_h0);
    double mean = 0.0;
    for (std::size_t k = 0; k < ds.count(); ++k) mean += cooperative_energy(ds, k);
    EXPECT_NEAR(mean / static_cast<double>(ds.count()), 1.0, 0.03);
}

TEST(Generation, IndexCsvHasOneRowPerSequence) {
    auto c = tiny_config();
    auto ds = generate_role(c, data_role::train, 5, label_schedule::alternate);
    std::ostringstream os;
    export_index_csv(ds, os);
    const auto text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 5 * 3);
    EXPECT_NE(text.find("1,2,1,2,3"), std::string::npos);
}

TEST(Generation, MoreAntennasThanPlaneSizeIsConfigError) {
    auto c = tiny_config();
    c.data.plane_size = 2;
    EXPECT_THROW(generate_role(c, data_role::train, 1, label_schedule::alternate), config_error);
}
