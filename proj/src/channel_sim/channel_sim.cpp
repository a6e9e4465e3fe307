// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/channel_sim.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace phymt::chan {

using nlohmann::json;

void SceneConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) fail(ErrorKind::kValidation, std::string("scene: ") + what);
    };
    require(n_h >= 1 && n_v >= 1, "antenna counts must be >= 1");
    require(users >= 1, "users must be >= 1");
    require(subcarriers >= 1, "subcarriers must be >= 1");
    require(clusters >= 1 && paths_per_cluster >= 1, "cluster and path counts must be >= 1");
    require(subcarrier_spacing_hz > 0, "subcarrier spacing must be > 0");
    require(carrier_hz > 0, "carrier frequency must be > 0");
    require(delay_spread_s >= 0 && angle_spread_rad >= 0, "spreads must be >= 0");
    require(azimuth_min <= azimuth_max, "azimuth range empty");
    require(elevation_min <= elevation_max, "elevation range empty");
    require(velocity_min_mps >= 0 && velocity_min_mps <= velocity_max_mps, "velocity range empty");
    require(distance_min_m > 0 && distance_min_m <= distance_max_m, "distance range empty");
    require(slot_duration_s > 0, "slot duration must be > 0");
}

void to_json(json& j, const SceneConfig& s) {
    j = json{{"n_h", s.n_h},
             {"n_v", s.n_v},
             {"users", s.users},
             {"subcarriers", s.subcarriers},
             {"subcarrier_spacing_hz", s.subcarrier_spacing_hz},
             {"carrier_hz", s.carrier_hz},
             {"clusters", s.clusters},
             {"paths_per_cluster", s.paths_per_cluster},
             {"delay_spread_s", s.delay_spread_s},
             {"angle_spread_rad", s.angle_spread_rad},
             {"azimuth_min", s.azimuth_min},
             {"azimuth_max", s.azimuth_max},
             {"elevation_min", s.elevation_min},
             {"elevation_max", s.elevation_max},
             {"velocity_min_mps", s.velocity_min_mps},
             {"velocity_max_mps", s.velocity_max_mps},
             {"distance_min_m", s.distance_min_m},
             {"distance_max_m", s.distance_max_m},
             {"slot_duration_s", s.slot_duration_s}};
}

void from_json(const json& j, SceneConfig& s) {
    SceneConfig d;
    s.n_h = j.value("n_h", d.n_h);
    s.n_v = j.value("n_v", d.n_v);
    s.users = j.value("users", d.users);
    s.subcarriers = j.value("subcarriers", d.subcarriers);
    s.subcarrier_spacing_hz = j.value("subcarrier_spacing_hz", d.subcarrier_spacing_hz);
    s.carrier_hz = j.value("carrier_hz", d.carrier_hz);
    s.clusters = j.value("clusters", d.clusters);
    s.paths_per_cluster = j.value("paths_per_cluster", d.paths_per_cluster);
    s.delay_spread_s = j.value("delay_spread_s", d.delay_spread_s);
    s.angle_spread_rad = j.value("angle_spread_rad", d.angle_spread_rad);
    s.azimuth_min = j.value("azimuth_min", d.azimuth_min);
    s.azimuth_max = j.value("azimuth_max", d.azimuth_max);
    s.elevation_min = j.value("elevation_min", d.elevation_min);
    s.elevation_max = j.value("elevation_max", d.elevation_max);
    s.velocity_min_mps = j.value("velocity_min_mps", d.velocity_min_mps);
    s.velocity_max_mps = j.value("velocity_max_mps", d.velocity_max_mps);
    s.distance_min_m = j.value("distance_min_m", d.distance_min_m);
    s.distance_max_m = j.value("distance_max_m", d.distance_max_m);
    s.slot_duration_s = j.value("slot_duration_s", d.slot_duration_s);
}

ComplexVector upa_steering(int n_h, int n_v, double azimuth, double elevation) {
    if (n_h < 1 || n_v < 1) fail(ErrorKind::kInvalidInput, "upa_steering: antenna counts must be >= 1");
    const double u = std::sin(azimuth) * std::cos(elevation);
    const double w = std::sin(elevation);
    ComplexVector a(n_h * n_v);
    for (int i = 0; i < n_h; ++i) {
        for (int j = 0; j < n_v; ++j) {
            const double phase = M_PI * (i * u + j * w);
            a(i * n_v + j) = Complex(std::cos(phase), std::sin(phase));
        }
    }
    return a;
}

namespace {

double laplacian(SeededRng& rng, double scale) {
    const double u = rng.uniform() - 0.5;
    const double mag = 1.0 - 2.0 * std::abs(u);
    if (mag <= 0.0) return 0.0;
    return -scale * (u < 0 ? -1.0 : 1.0) * std::log(mag);
}

double exponential(SeededRng& rng, double mean) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return -mean * std::log(u);
}

}  // namespace

PathSet draw_paths(const SceneConfig& scene, SeededRng& rng) {
    scene.validate();
    PathSet set;
    set.velocity_mps = rng.uniform(scene.velocity_min_mps, scene.velocity_max_mps);
    set.distance_m = rng.uniform(scene.distance_min_m, scene.distance_max_m);
    const double base_delay = set.distance_m / kSpeedOfLight;
    const double max_doppler = set.velocity_mps / scene.wavelength();
    const int total = scene.clusters * scene.paths_per_cluster;
    const double gain_scale = 1.0 / std::sqrt(static_cast<double>(total));
    // Laplacian with standard deviation equal to the configured spread.
    const double lap_scale = scene.angle_spread_rad / std::sqrt(2.0);

    set.paths.reserve(static_cast<std::size_t>(total));
    for (int c = 0; c < scene.clusters; ++c) {
        const double az_c = rng.uniform(scene.azimuth_min, scene.azimuth_max);
        const double el_c = rng.uniform(scene.elevation_min, scene.elevation_max);
        for (int p = 0; p < scene.paths_per_cluster; ++p) {
            Path path;
            path.azimuth = std::clamp(az_c + laplacian(rng, lap_scale), -M_PI, M_PI);
            path.elevation = std::clamp(el_c + laplacian(rng, lap_scale), -M_PI / 2, M_PI / 2);
            path.delay_s = base_delay + exponential(rng, scene.delay_spread_s);
            path.doppler_hz = max_doppler * std::cos(rng.uniform(0.0, 2.0 * M_PI));
            path.gain = gain_scale * rng.cnormal();
            set.paths.push_back(path);
        }
    }
    return set;
}

CsiSequence csi_sequence(const PathSet& paths, const SceneConfig& scene, int slots, int user) {
    if (slots < 1) fail(ErrorKind::kInvalidInput, "csi_sequence: slot count must be >= 1");
    const int n_t = scene.n_t();
    const int m = scene.subcarriers;
    const auto n_paths = static_cast<Eigen::Index>(paths.paths.size());

    ComplexMatrix steering(n_t, n_paths);
    ComplexMatrix freq(n_paths, m);
    for (Eigen::Index p = 0; p < n_paths; ++p) {
        const Path& path = paths.paths[static_cast<std::size_t>(p)];
        steering.col(p) = upa_steering(scene.n_h, scene.n_v, path.azimuth, path.elevation);
        for (int k = 0; k < m; ++k) {
            const double phase = -2.0 * M_PI * path.delay_s * scene.subcarrier_offset_hz(k);
            freq(p, k) = std::polar(1.0, phase);
        }
    }

    CsiSequence seq;
    seq.user = user;
    seq.slots.reserve(static_cast<std::size_t>(slots));
    ComplexVector weights(n_paths);
    for (int t = 0; t < slots; ++t) {
        for (Eigen::Index p = 0; p < n_paths; ++p) {
            const Path& path = paths.paths[static_cast<std::size_t>(p)];
            const double phase = 2.0 * M_PI * path.doppler_hz * t * scene.slot_duration_s;
            weights(p) = path.gain * std::polar(1.0, phase);
        }
        seq.slots.emplace_back(steering * weights.asDiagonal() * freq);
    }
    return seq;
}

ComplexMatrix add_awgn(const ComplexMatrix& h, double snr_db, SeededRng& rng) {
    const double energy = h.cwiseAbs2().mean();
    if (!(energy > 0.0)) fail(ErrorKind::kInvalidInput, "add_awgn: channel is all zero");
    if (std::isinf(snr_db) && snr_db > 0) return h;
    const double std_dev = std::sqrt(energy / std::pow(10.0, snr_db / 10.0));
    ComplexMatrix out = h;
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += std_dev * rng.cnormal();
    return out;
}

ComplexMatrix stack_users(const std::vector<CsiSequence>& users, int slot, int subcarrier) {
    if (users.empty()) fail(ErrorKind::kInvalidInput, "stack_users: no users");
    const auto n_t = users.front().slots.at(static_cast<std::size_t>(slot)).rows();
    ComplexMatrix h(n_t, static_cast<Eigen::Index>(users.size()));
    for (std::size_t k = 0; k < users.size(); ++k) {
        h.col(static_cast<Eigen::Index>(k)) = users[k].slots.at(static_cast<std::size_t>(slot)).col(subcarrier);
    }
    return h;
}

namespace {

constexpr std::array<char, 8> kDatasetMagic = {'P', 'H', 'Y', 'M', 'T', '\x01', '\x00', '\x00'};

void write_u64(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t read_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    if (is.gcount() != 8) fail(ErrorKind::kCorruptFile, "dataset: truncated header length");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    write_u64(os, bits);
}

json read_header(std::istream& is) {
    std::array<char, 8> magic{};
    is.read(magic.data(), 8);
    if (is.gcount() != 8 || magic != kDatasetMagic) fail(ErrorKind::kFormat, "dataset: bad magic bytes");
    const std::uint64_t len = read_u64(is);
    if (len > (1ULL << 32)) fail(ErrorKind::kCorruptFile, "dataset: implausible header length");
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(is.gcount()) != len) fail(ErrorKind::kCorruptFile, "dataset: truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::kCorruptFile, std::string("dataset: header is not JSON: ") + e.what());
    }
    if (header.value("format", "") != "phymt-dataset" || header.value("version", 0) != 1) {
        fail(ErrorKind::kFormat, "dataset: unsupported format or version");
    }
    return header;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
    const int n_t = data.scene.n_t();
    const int m = data.scene.subcarriers;
    if (data.tags.size() != data.sequences.size() && !data.tags.empty()) {
        fail(ErrorKind::kInvalidInput, "save_dataset: tag count differs from sequence count");
    }
    json records = json::array();
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        const CsiSequence& s = data.sequences[i];
        if (s.slot_count() != data.slots) fail(ErrorKind::kInvalidInput, "save_dataset: inconsistent slot count");
        for (const auto& slot : s.slots) {
            if (slot.rows() != n_t || slot.cols() != m) fail(ErrorKind::kInvalidInput, "save_dataset: slot shape mismatch");
        }
        json rec{{"user", s.user}};
        rec["tags"] = data.tags.empty() ? json::object() : data.tags[i];
        records.push_back(std::move(rec));
    }
    json header{{"format", "phymt-dataset"},
                {"version", 1},
                {"task", data.task},
                {"scene", data.scene},
                {"K", data.users},
                {"N_T", n_t},
                {"M", m},
                {"T", data.slots},
                {"count", data.sequences.size()},
                {"dtype", "complex128-le"},
                {"records", std::move(records)},
                {"extra", data.extra}};
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::kIo, "save_dataset: cannot open " + path.string());
    os.write(kDatasetMagic.data(), 8);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& s : data.sequences) {
        for (const auto& slot : s.slots) {
            for (Eigen::Index i = 0; i < slot.size(); ++i) {
                write_f64(os, slot.data()[i].real());
                write_f64(os, slot.data()[i].imag());
            }
        }
    }
    if (!os) fail(ErrorKind::kIo, "save_dataset: write failed for " + path.string());
}

json read_dataset_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::kIo, "load_dataset: cannot open " + path.string());
    return read_header(is);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::kIo, "load_dataset: cannot open " + path.string());
    const json header = read_header(is);

    Dataset data;
    try {
        data.task = header.at("task").get<std::string>();
        data.scene = header.at("scene").get<SceneConfig>();
        data.users = header.at("K").get<int>();
        data.slots = header.at("T").get<int>();
        data.extra = header.value("extra", json::object());
    } catch (const json::exception& e) {
        fail(ErrorKind::kCorruptFile, std::string("dataset: malformed header: ") + e.what());
    }
    const int n_t = header.at("N_T").get<int>();
    const int m = header.at("M").get<int>();
    if (n_t != data.scene.n_t() || m != data.scene.subcarriers) fail(ErrorKind::kCorruptFile, "dataset: header dimensions disagree with scene");
    const auto& records = header.at("records");
    const std::size_t count = header.at("count").get<std::size_t>();
    if (records.size() != count) fail(ErrorKind::kCorruptFile, "dataset: record count mismatch");

    const std::size_t per_slot = static_cast<std::size_t>(n_t) * static_cast<std::size_t>(m);
    std::vector<char> buf(per_slot * 16);
    data.sequences.reserve(count);
    data.tags.reserve(count);
    for (std::size_t r = 0; r < count; ++r) {
        CsiSequence seq;
        seq.user = records[r].value("user", 0);
        for (int t = 0; t < data.slots; ++t) {
            is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            if (static_cast<std::size_t>(is.gcount()) != buf.size()) fail(ErrorKind::kCorruptFile, "dataset: truncated payload");
            ComplexMatrix slot(n_t, m);
            for (std::size_t i = 0; i < per_slot; ++i) {
                double re, im;
                std::uint64_t bits_re = 0, bits_im = 0;
                for (int b = 0; b < 8; ++b) {
                    bits_re |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[16 * i + static_cast<std::size_t>(b)])) << (8 * b);
                    bits_im |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[16 * i + 8 + static_cast<std::size_t>(b)])) << (8 * b);
                }
                std::memcpy(&re, &bits_re, 8);
                std::memcpy(&im, &bits_im, 8);
                slot.data()[i] = Complex(re, im);
            }
            seq.slots.push_back(std::move(slot));
        }
        data.sequences.push_back(std::move(seq));
        data.tags.push_back(records[r].value("tags", json::object()));
    }
    if (is.peek() != std::char_traits<char>::eof()) fail(ErrorKind::kCorruptFile, "dataset: trailing bytes after payload");
    return data;
}

}  // namespace phymt::chan
