// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "phymt/numerics.hpp"

namespace phymt::chan {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

inline double kmh_to_mps(double kmh) { return kmh / 3.6; }
inline double mps_to_kmh(double mps) { return mps * 3.6; }

/// Clustered multipath scene. Defaults are desk scale; the full-scale
/// array is n_h = 16, n_v = 8, subcarriers = 48.
struct SceneConfig {
    int n_h = 4;
    int n_v = 4;
    int users = 4;
    int subcarriers = 8;
    double subcarrier_spacing_hz = 180e3;
    double carrier_hz = 2.4e9;
    int clusters = 21;
    int paths_per_cluster = 20;
    double delay_spread_s = 100e-9;
    double angle_spread_rad = 5.0 * M_PI / 180.0;  // intra-cluster Laplacian scale
    double azimuth_min = -M_PI / 2;
    double azimuth_max = M_PI / 2;
    double elevation_min = -M_PI / 12;
    double elevation_max = M_PI / 12;
    double velocity_min_mps = 10.0 / 3.6;
    double velocity_max_mps = 100.0 / 3.6;
    double distance_min_m = 20.0;
    double distance_max_m = 100.0;
    double slot_duration_s = 0.5e-3;

    int n_t() const { return n_h * n_v; }
    double wavelength() const { return kSpeedOfLight / carrier_hz; }
    int central_subcarrier() const { return subcarriers / 2; }
    /// Baseband offset of subcarrier m from the carrier.
    double subcarrier_offset_hz(int m) const { return (m - central_subcarrier()) * subcarrier_spacing_hz; }

    /// Throws kValidation on a malformed configuration.
    void validate() const;
};

void to_json(nlohmann::json& j, const SceneConfig& s);
void from_json(const nlohmann::json& j, SceneConfig& s);

struct Path {
    Complex gain;
    double delay_s = 0.0;
    double azimuth = 0.0;
    double elevation = 0.0;
    double doppler_hz = 0.0;
};

struct PathSet {
    std::vector<Path> paths;
    double velocity_mps = 0.0;
    double distance_m = 0.0;
};

/// One user's channel over time: slots[t] is N_T x M.
struct CsiSequence {
    int user = 0;
    std::vector<ComplexMatrix> slots;

    int slot_count() const { return static_cast<int>(slots.size()); }
};

/// Half-wavelength UPA response; entry i * n_v + j carries
/// exp(j*pi*(i*sin(az)*cos(el) + j*sin(el))).
ComplexVector upa_steering(int n_h, int n_v, double azimuth, double elevation);

PathSet draw_paths(const SceneConfig& scene, SeededRng& rng);

/// h(t, m) = sum_p g_p a_p exp(j*2*pi*(nu_p * t * slot - tau_p * f_m)).
CsiSequence csi_sequence(const PathSet& paths, const SceneConfig& scene, int slots, int user = 0);

/// Adds CN noise with per-entry variance mean(|H|^2) / 10^(snr_db/10).
/// snr_db = kNoiselessSnr returns H unchanged.
ComplexMatrix add_awgn(const ComplexMatrix& h, double snr_db, SeededRng& rng);

/// Multi-user channel at one subcarrier and slot, N_T x users.
ComplexMatrix stack_users(const std::vector<CsiSequence>& users, int slot, int subcarrier);

struct Dataset {
    std::string task;
    SceneConfig scene;
    int users = 0;       // K stored in the header
    int slots = 0;       // T of every sequence
    std::vector<CsiSequence> sequences;
    std::vector<nlohmann::json> tags;  // one object per sequence
    nlohmann::json extra = nlohmann::json::object();
};

/// File layout: 8-byte magic "PHYMT\x01\x00\x00", u64 little-endian header
/// length, UTF-8 JSON header, then little-endian float64 (re, im) pairs for
/// every sequence, slot, antenna and subcarrier in that order.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);
nlohmann::json read_dataset_header(const std::filesystem::path& path);

}  // namespace phymt::chan
