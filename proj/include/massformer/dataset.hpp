#pragma once

// Covariance matrices, λ-length sequences, channel planes and the on-disk
// dataset container.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "massformer/errors.hpp"
#include "massformer/mobility_channel.hpp"
#include "massformer/rng.hpp"

namespace massformer {

struct covariance_matrix {
    std::size_t size = 0;  // M
    std::vector<cplx> entries;
    std::size_t period_index = 0;
    std::size_t su_index = 0;
    int label = 0;

    cplx operator()(std::size_t i, std::size_t j) const { return entries[i * size + j]; }
    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < size; ++i) t += entries[i * size + i].real();
        return t;
    }
};

// R = (1/N)·Y·Yᴴ. Only the upper triangle is accumulated; the lower one is
// its conjugate, so R is Hermitian by construction.
inline covariance_matrix covariance(const signal_matrix& y) {
    if (y.cols == 0) throw contract_error("covariance: need at least one sample");
    const std::size_t M = y.rows, N = y.cols;
    covariance_matrix r;
    r.size = M;
    r.period_index = y.period_index;
    r.su_index = y.su_index;
    r.label = y.label;
    r.entries.assign(M * M, cplx{});
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < M; ++i) {
        const cplx* yi = y.entries.data() + i * N;
        for (std::size_t j = i; j < M; ++j) {
            const cplx* yj = y.entries.data() + j * N;
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                // yi * conj(yj)
                re += yi[n].real() * yj[n].real() + yi[n].imag() * yj[n].imag();
                im += yi[n].imag() * yj[n].real() - yi[n].real() * yj[n].imag();
            }
            r.entries[i * M + j] = {re * inv_n, im * inv_n};
            r.entries[j * M + i] = {re * inv_n, -im * inv_n};
        }
    }
    return r;
}

struct sample_sequence {
    std::vector<covariance_matrix> cms;
    int label = 0;
};

// One cooperative sample: the aligned sequences of all SUs under one label.
struct css_sample {
    std::vector<sample_sequence> per_su;
    int label = 0;
};

// Splits a stream of CMs into consecutive, non-overlapping blocks of λ; a
// trailing partial block is dropped.
inline std::vector<sample_sequence> assemble_sequences(std::span<const covariance_matrix> stream, std::size_t lambda) {
    if (lambda == 0) throw contract_error("assemble_sequences: lambda must be positive");
    std::vector<sample_sequence> out;
    const std::size_t blocks = stream.size() / lambda;
    out.reserve(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        sample_sequence seq;
        seq.label = stream[b * lambda].label;
        for (std::size_t k = 0; k < lambda; ++k) {
            const auto& cm = stream[b * lambda + k];
            if (cm.label != seq.label)
                throw contract_error("assemble_sequences: mixed labels inside block " + std::to_string(b));
            seq.cms.push_back(cm);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

enum class plane_layout { real_imag_magnitude, real_imag };

inline std::size_t channel_count(plane_layout layout) { return layout == plane_layout::real_imag ? 2 : 3; }

// λ×H×H×C real planes of one SU's sequence, row-major (time, row, col, channel).
struct channel_planes {
    std::size_t seq_len = 0;
    std::size_t size = 0;  // H
    std::size_t channels = 0;
    std::vector<double> values;

    double at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const {
        return values[((t * size + i) * size + j) * channels + c];
    }
};

inline std::size_t plane_volume(std::size_t lambda, std::size_t h, std::size_t c) { return lambda * h * h * c; }

// Writes the padded planes of one sequence into `out` (length λ·H·H·C).
// Entries are divided by `power_scale` first (the noise power when inputs
// are noise-normalized).
inline void write_channel_planes(const sample_sequence& seq, std::size_t h, plane_layout layout, double power_scale,
                                 std::span<double> out) {
    const std::size_t C = channel_count(layout);
    const std::size_t lambda = seq.cms.size();
    if (out.size() != plane_volume(lambda, h, C)) throw shape_error("channel planes: output buffer size mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    const double inv = 1.0 / power_scale;
    for (std::size_t t = 0; t < lambda; ++t) {
        const auto& cm = seq.cms[t];
        if (cm.size > h)
            throw config_error("channel planes: M=" + std::to_string(cm.size) + " exceeds plane size H=" +
                               std::to_string(h));
        for (std::size_t i = 0; i < cm.size; ++i)
            for (std::size_t j = 0; j < cm.size; ++j) {
                const cplx v = cm(i, j) * inv;
                double* px = out.data() + ((t * h + i) * h + j) * C;
                px[0] = v.real();
                px[1] = v.imag();
                if (C == 3) px[2] = std::abs(v);
            }
    }
}

inline channel_planes to_channel_planes(const sample_sequence& seq, std::size_t h,
                                        plane_layout layout = plane_layout::real_imag_magnitude,
                                        double power_scale = 1.0) {
    channel_planes p;
    p.seq_len = seq.cms.size();
    p.size = h;
    p.channels = channel_count(layout);
    p.values.resize(plane_volume(p.seq_len, h, p.channels));
    write_channel_planes(seq, h, layout, power_scale, p.values);
    return p;
}

// Per-channel affine standardization, fitted on a training split.
struct channel_stats {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool empty() const { return mean.empty(); }

    void apply(std::span<double> planes) const {
        const std::size_t C = mean.size();
        for (std::size_t i = 0; i < planes.size(); ++i) planes[i] = (planes[i] - mean[i % C]) / stddev[i % C];
    }
};

inline channel_stats fit_channel_stats(std::span<const double> planes, std::size_t channels) {
    channel_stats st;
    st.mean.assign(channels, 0.0);
    st.stddev.assign(channels, 0.0);
    const std::size_t per = planes.size() / channels;
    for (std::size_t i = 0; i < planes.size(); ++i) st.mean[i % channels] += planes[i];
    for (auto& m : st.mean) m /= static_cast<double>(per);
    for (std::size_t i = 0; i < planes.size(); ++i) {
        const double d = planes[i] - st.mean[i % channels];
        st.stddev[i % channels] += d * d;
    }
    for (auto& s : st.stddev) {
        s = std::sqrt(s / static_cast<double>(per));
        if (!(s > 1e-12)) s = 1.0;
    }
    return st;
}

// Planes for `count` cooperative samples: sample k, SU s occupies the block
// at (k·S + s)·volume.
struct plane_dataset {
    std::uint64_t config_hash = 0;
    std::size_t su_count = 0;
    std::size_t antennas = 0;
    std::size_t samples = 0;  // N
    std::size_t seq_len = 0;
    std::size_t size = 0;  // H
    std::size_t channels = 0;
    double n0_dbm_per_hz = 0.0;
    std::vector<double> planes;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint64_t> first_period;  // per sample

    std::size_t count() const { return labels.size(); }
    std::size_t volume() const { return plane_volume(seq_len, size, channels); }
    std::span<const double> su_planes(std::size_t k, std::size_t s) const {
        return std::span<const double>(planes).subspan((k * su_count + s) * volume(), volume());
    }
    std::span<double> su_planes(std::size_t k, std::size_t s) {
        return std::span<double>(planes).subspan((k * su_count + s) * volume(), volume());
    }

    std::uint64_t content_hash() const {
        fnv1a h;
        h.update_value(config_hash);
        for (auto v : {su_count, antennas, samples, seq_len, size, channels}) h.update_value(static_cast<std::uint64_t>(v));
        h.update_value(n0_dbm_per_hz);
        h.update(std::span<const double>(planes));
        h.update(labels.data(), labels.size());
        return h.digest();
    }

    bool operator==(const plane_dataset&) const = default;
};

namespace detail {

inline constexpr char dataset_magic[8] = {'M', 'S', 'F', 'D', 'S', 'E', 'T', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw parse_error(std::string("dataset: truncated while reading ") + what);
    return v;
}

}  // namespace detail

inline void save_dataset(const plane_dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    os.write(detail::dataset_magic, sizeof(detail::dataset_magic));
    detail::put<std::uint64_t>(os, ds.config_hash);
    for (auto v : {ds.su_count, ds.antennas, ds.samples, ds.seq_len, ds.size, ds.channels})
        detail::put<std::uint64_t>(os, v);
    detail::put<double>(os, ds.n0_dbm_per_hz);
    detail::put<std::uint64_t>(os, ds.count());
    detail::put<std::uint64_t>(os, ds.planes.size());
    os.write(reinterpret_cast<const char*>(ds.planes.data()),
             static_cast<std::streamsize>(ds.planes.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(ds.labels.data()), static_cast<std::streamsize>(ds.labels.size()));
    os.write(reinterpret_cast<const char*>(ds.first_period.data()),
             static_cast<std::streamsize>(ds.first_period.size() * sizeof(std::uint64_t)));
    if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

// Reads a container; when expected_hash is non-zero it must match the header.
inline plane_dataset load_dataset(const std::string& path, std::uint64_t expected_hash = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw parse_error("load_dataset: cannot open " + path);
    char magic[sizeof(detail::dataset_magic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, detail::dataset_magic, sizeof(magic)) != 0)
        throw parse_error("load_dataset: bad magic in " + path);
    plane_dataset ds;
    ds.config_hash = detail::take<std::uint64_t>(is, "config hash");
    if (expected_hash != 0 && ds.config_hash != expected_hash)
        throw version_error("load_dataset: " + path + " was generated for config " + hex64(ds.config_hash) +
                            ", current config is " + hex64(expected_hash));
    std::size_t* dims[] = {&ds.su_count, &ds.antennas, &ds.samples, &ds.seq_len, &ds.size, &ds.channels};
    for (auto* d : dims) *d = detail::take<std::uint64_t>(is, "dimensions");
    ds.n0_dbm_per_hz = detail::take<double>(is, "noise density");
    const auto count = detail::take<std::uint64_t>(is, "sample count");
    const auto plane_count = detail::take<std::uint64_t>(is, "plane count");
    if (ds.channels != 2 && ds.channels != 3) throw parse_error("load_dataset: bad channel count");
    if (plane_count != count * ds.su_count * ds.volume())
        throw parse_error("load_dataset: header counts disagree with plane payload size");
    if (plane_count > (std::uint64_t{1} << 36)) throw parse_error("load_dataset: implausible payload size");
    ds.planes.resize(plane_count);
    if (!is.read(reinterpret_cast<char*>(ds.planes.data()), static_cast<std::streamsize>(plane_count * sizeof(double))))
        throw parse_error("load_dataset: truncated plane payload");
    ds.labels.resize(count);
    if (!is.read(reinterpret_cast<char*>(ds.labels.data()), static_cast<std::streamsize>(count)))
        throw parse_error("load_dataset: truncated labels");
    ds.first_period.resize(count);
    if (!is.read(reinterpret_cast<char*>(ds.first_period.data()),
                 static_cast<std::streamsize>(count * sizeof(std::uint64_t))))
        throw parse_error("load_dataset: truncated period index");
    for (auto l : ds.labels)
        if (l > 1) throw parse_error("load_dataset: label out of range");
    if (is.peek() != std::char_traits<char>::eof()) throw parse_error("load_dataset: trailing bytes");
    return ds;
}

// One row per (sample, SU) sequence.
inline void export_index_csv(const plane_dataset& ds, std::ostream& os) {
    os << "sample,su,label,period_first,period_last\n";
    for (std::size_t k = 0; k < ds.count(); ++k)
        for (std::size_t s = 0; s < ds.su_count; ++s)
            os << k << ',' << s << ',' << int(ds.labels[k]) << ',' << ds.first_period[k] << ','
               << ds.first_period[k] + ds.seq_len - 1 << '\n';
}

}  // namespace massformer
