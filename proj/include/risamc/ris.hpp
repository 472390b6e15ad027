#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "risamc/common.hpp"
#include "risamc/impairments.hpp"

namespace risamc::ris {

inline constexpr int kPixelsPerRis = 152; // effective phase-binary units
inline constexpr int kNumRis = 2;
inline constexpr int kTotalPixels = kPixelsPerRis * kNumRis; // 304

enum class Endpoint : int { tx = 0, user1 = 1, user2 = 2 };
enum class User : int { user1 = 0, user2 = 1 };

inline Endpoint endpoint_of(User u) {
    return u == User::user1 ? Endpoint::user1 : Endpoint::user2;
}
std::string_view user_name(User u);

// Binary phase state of every pixel: bit 0 -> phase 0, bit 1 -> phase pi.
// The standard scene has 304 bits (two RISs x 152); toy scenes may be
// smaller.
class RisConfig {
public:
    RisConfig() = default;
    explicit RisConfig(size_t n, int fill = 0) : bits_(n, static_cast<uint8_t>(fill)) {}

    static RisConfig random(size_t n, Rng& rng);
    // Hex string, most-significant pixel first: pixel 0 is the MSB of the
    // first hex digit. nbits defaults to the standard 304-pixel scene.
    static RisConfig from_hex(std::string_view hex, size_t nbits = kTotalPixels);
    std::string to_hex() const;

    size_t size() const { return bits_.size(); }
    int bit(size_t i) const { return bits_[i]; }
    void set(size_t i, int v) { bits_[i] = static_cast<uint8_t>(v != 0); }
    void flip(size_t i) { bits_[i] ^= 1u; }
    // e^{j*pi*bit}: +1 for phase 0, -1 for phase pi
    double sign(size_t i) const { return bits_[i] ? -1.0 : 1.0; }

    bool operator==(const RisConfig&) const = default;

private:
    std::vector<uint8_t> bits_;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// Pixel grid in the y-z plane with normal +x. Angles are spherical about the
// RIS: elevation from +z, azimuth in the x-y plane, so elevation 90 deg at
// azimuth 0 is broadside.
struct SceneGeometry {
    double tx_az_deg = 0.0, tx_el_deg = 110.0;
    double user1_az_deg = 0.0, user1_el_deg = 120.0;
    double user2_az_deg = 0.0, user2_el_deg = 35.0;
    double tx_distance_m = 1.5;    // d0
    double user1_distance_m = 2.0; // d1
    double user2_distance_m = 3.0; // d2

    double tx_gain_db = 0.0;
    std::array<double, 2> rx_gain_db = {45.0, 62.0};
    double tx_power_dbm = 0.0;
    // Receiver-referred noise level per user (each SDR front end has its own
    // gain setting); produced by the calibration procedure.
    std::array<double, 2> noise_floor_dbm = {-31.0, -35.0};

    double carrier_freq_hz = 5e9;
    double pixel_pitch_m = 0.03; // half wavelength at 5 GHz
    int grid_rows = 8;
    int grid_cols = 19;
    int num_ris = kNumRis;
    double ris_center_offset_m = 0.30; // the two RISs sit at y = -+offset
    double element_pattern_exponent = 1.0;

    int total_pixels() const { return num_ris * grid_rows * grid_cols; }
    double wavelength_m() const { return kSpeedOfLight / carrier_freq_hz; }
    Vec3 pixel_position(int pixel_index) const;
    Vec3 endpoint_position(Endpoint e) const;

    void validate() const;

    // Small scene for oracle tests: a single row of n pixels, broadside-ish
    // endpoints at modest distances.
    static SceneGeometry toy(int n_pixels);
};

// One leg of the cascade: amplitude sqrt(G_elem(theta)) * lambda/(4*pi*d),
// phase -2*pi*d/lambda, with d the exact pixel-to-endpoint distance.
cd pixel_path_gain(const SceneGeometry& g, int pixel_index, Endpoint e);

// Per-pixel cascade terms t_n = a_n(tx) * a_n(user).
std::vector<cd> cascade_terms(const SceneGeometry& g, User u);

// h_u = sum_n t_n * e^{j*pi*b_n}; no direct Tx-user path.
cd cascaded_gain(const RisConfig& cfg, const SceneGeometry& g, User u);
cd cascaded_gain(const RisConfig& cfg, std::span<const cd> terms);

// Incremental update after flipping one bit: h' = h - 2*s_old*t_n.
cd cascaded_gain_after_flip(cd h, const RisConfig& cfg_before_flip, size_t n,
                            std::span<const cd> terms);

// Link budget: tx_power + tx_gain + 20*log10|h| + rx_gain - noise_floor.
// |h| = 0 returns -inf.
double received_snr_db(const RisConfig& cfg, const SceneGeometry& g, User u);
double snr_from_gain_db(const SceneGeometry& g, User u, double abs_h);

// AWGN SNR floor used when a configuration yields a degenerate gain.
inline constexpr double kSnrFloorDb = -60.0;

// Equivalent to impair() with the profile's snr_db replaced by
// received_snr_db, after rotating the frame by the cascade phase arg(h).
sig::LabeledFrame apply_channel(const sig::LabeledFrame& f, const RisConfig& cfg,
                                const SceneGeometry& g, User u,
                                const chan::ImpairmentProfile& profile, Rng& rng);

// Best achievable |h| under per-pixel binary phase alignment: scans reference
// directions and picks each sign to maximize the projection. Used by the
// calibration procedure and as a near-optimal bound in tests.
double best_aligned_gain(const SceneGeometry& g, User u, int direction_samples = 720);

// Calibration procedure: pick per-user noise floors so a fully aligned
// configuration lands on target_opt_snr_db for each user. Random
// configurations then start ~20*log10((2/pi)*sqrt(N)) lower, i.e. at
// chance-level classification accuracy.
struct CalibrationTargets {
    std::array<double, 2> target_opt_snr_db = {12.0, 7.5};
};
void calibrate_noise_floors(SceneGeometry& g, const CalibrationTargets& targets);

} // namespace risamc::ris
