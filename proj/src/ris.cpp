#include "risamc/ris.hpp"

#include <cmath>

#include "risamc/error.hpp"

namespace risamc::ris {

std::string_view user_name(User u) {
    return u == User::user1 ? "user1" : "user2";
}

RisConfig RisConfig::random(size_t n, Rng& rng) {
    RisConfig c(n);
    for (size_t i = 0; i < n; ++i)
        c.bits_[i] = static_cast<uint8_t>(rng.bit());
    return c;
}

RisConfig RisConfig::from_hex(std::string_view hex, size_t nbits) {
    const size_t want = (nbits + 3) / 4;
    if (hex.size() != want)
        throw FormatError("config hex length " + std::to_string(hex.size()) +
                          ", expected " + std::to_string(want));
    RisConfig c(nbits);
    for (size_t i = 0; i < nbits; ++i) {
        const char ch = hex[i / 4];
        int v;
        if (ch >= '0' && ch <= '9')
            v = ch - '0';
        else if (ch >= 'a' && ch <= 'f')
            v = ch - 'a' + 10;
        else if (ch >= 'A' && ch <= 'F')
            v = ch - 'A' + 10;
        else
            throw FormatError("invalid hex digit in config string");
        c.bits_[i] = static_cast<uint8_t>((v >> (3 - i % 4)) & 1);
    }
    return c;
}

std::string RisConfig::to_hex() const {
    static const char* digits = "0123456789abcdef";
    const size_t nchars = (bits_.size() + 3) / 4;
    std::string s(nchars, '0');
    for (size_t c = 0; c < nchars; ++c) {
        int v = 0;
        for (size_t b = 0; b < 4; ++b) {
            const size_t i = c * 4 + b;
            if (i < bits_.size() && bits_[i])
                v |= 1 << (3 - b);
        }
        s[c] = digits[v];
    }
    return s;
}

void SceneGeometry::validate() const {
    if (tx_distance_m <= 0.0 || user1_distance_m <= 0.0 || user2_distance_m <= 0.0)
        throw Error(ExitCode::data, "distances must be positive");
    for (double el : {tx_el_deg, user1_el_deg, user2_el_deg})
        if (el < 0.0 || el > 180.0)
            throw Error(ExitCode::data, "elevation must be in [0, 180] deg");
    for (double az : {tx_az_deg, user1_az_deg, user2_az_deg})
        if (az < -180.0 || az > 180.0)
            throw Error(ExitCode::data, "azimuth must be in [-180, 180] deg");
    if (grid_rows <= 0 || grid_cols <= 0 || num_ris <= 0)
        throw Error(ExitCode::data, "grid dimensions must be positive");
    if (pixel_pitch_m <= 0.0 || carrier_freq_hz <= 0.0)
        throw Error(ExitCode::data, "pitch and carrier frequency must be positive");
}

Vec3 SceneGeometry::pixel_position(int pixel_index) const {
    const int per_ris = grid_rows * grid_cols;
    const int r = pixel_index / per_ris;
    const int p = pixel_index % per_ris;
    const int row = p / grid_cols;
    const int col = p % grid_cols;
    double center_y = 0.0;
    if (num_ris == 2)
        center_y = (r == 0) ? -ris_center_offset_m : ris_center_offset_m;
    else if (num_ris > 2)
        center_y = (r - 0.5 * (num_ris - 1)) * 2.0 * ris_center_offset_m;
    Vec3 v;
    v.x = 0.0;
    v.y = center_y + (col - 0.5 * (grid_cols - 1)) * pixel_pitch_m;
    v.z = (row - 0.5 * (grid_rows - 1)) * pixel_pitch_m;
    return v;
}

Vec3 SceneGeometry::endpoint_position(Endpoint e) const {
    double az, el, d;
    switch (e) {
    case Endpoint::tx: az = tx_az_deg; el = tx_el_deg; d = tx_distance_m; break;
    case Endpoint::user1: az = user1_az_deg; el = user1_el_deg; d = user1_distance_m; break;
    case Endpoint::user2: az = user2_az_deg; el = user2_el_deg; d = user2_distance_m; break;
    default: throw Error(ExitCode::data, "unknown endpoint");
    }
    const double azr = deg_to_rad(az);
    const double elr = deg_to_rad(el);
    Vec3 v;
    v.x = d * std::sin(elr) * std::cos(azr);
    v.y = d * std::sin(elr) * std::sin(azr);
    v.z = d * std::cos(elr);
    return v;
}

SceneGeometry SceneGeometry::toy(int n_pixels) {
    SceneGeometry g;
    g.num_ris = 1;
    g.grid_rows = 1;
    g.grid_cols = n_pixels;
    g.ris_center_offset_m = 0.0;
    g.tx_el_deg = 80.0;
    g.user1_el_deg = 100.0;
    g.user2_el_deg = 60.0;
    g.tx_distance_m = 1.0;
    g.user1_distance_m = 1.5;
    g.user2_distance_m = 1.5;
    return g;
}

cd pixel_path_gain(const SceneGeometry& g, int pixel_index, Endpoint e) {
    if (pixel_index < 0 || pixel_index >= g.total_pixels())
        throw IndexOutOfRange("pixel index " + std::to_string(pixel_index) +
                              " outside [0, " + std::to_string(g.total_pixels()) + ")");
    const Vec3 p = g.pixel_position(pixel_index);
    const Vec3 q = g.endpoint_position(e);
    const double dx = q.x - p.x, dy = q.y - p.y, dz = q.z - p.z;
    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double cos_theta = dx / d; // element normal is +x
    if (cos_theta <= 0.0)
        return cd(0.0, 0.0); // behind the surface
    const double g_elem = std::pow(cos_theta, g.element_pattern_exponent);
    const double lambda = g.wavelength_m();
    const double amp = std::sqrt(g_elem) * lambda / (4.0 * kPi * d);
    const double phase = -2.0 * kPi * d / lambda;
    return amp * cd(std::cos(phase), std::sin(phase));
}

std::vector<cd> cascade_terms(const SceneGeometry& g, User u) {
    g.validate();
    const int n = g.total_pixels();
    std::vector<cd> t(static_cast<size_t>(n));
    const Endpoint eu = endpoint_of(u);
    for (int i = 0; i < n; ++i)
        t[static_cast<size_t>(i)] =
            pixel_path_gain(g, i, Endpoint::tx) * pixel_path_gain(g, i, eu);
    return t;
}

cd cascaded_gain(const RisConfig& cfg, std::span<const cd> terms) {
    if (cfg.size() != terms.size())
        throw ShapeMismatch("config size does not match pixel count");
    cd h(0.0, 0.0);
    for (size_t i = 0; i < terms.size(); ++i)
        h += cfg.sign(i) * terms[i];
    return h;
}

cd cascaded_gain(const RisConfig& cfg, const SceneGeometry& g, User u) {
    const std::vector<cd> t = cascade_terms(g, u);
    return cascaded_gain(cfg, t);
}

cd cascaded_gain_after_flip(cd h, const RisConfig& cfg_before_flip, size_t n,
                            std::span<const cd> terms) {
    return h - 2.0 * cfg_before_flip.sign(n) * terms[n];
}

double snr_from_gain_db(const SceneGeometry& g, User u, double abs_h) {
    if (abs_h <= 0.0)
        return -std::numeric_limits<double>::infinity();
    const size_t ui = static_cast<size_t>(u);
    return g.tx_power_dbm + g.tx_gain_db + 20.0 * std::log10(abs_h) +
           g.rx_gain_db[ui] - g.noise_floor_dbm[ui];
}

double received_snr_db(const RisConfig& cfg, const SceneGeometry& g, User u) {
    return snr_from_gain_db(g, u, std::abs(cascaded_gain(cfg, g, u)));
}

sig::LabeledFrame apply_channel(const sig::LabeledFrame& f, const RisConfig& cfg,
                                const SceneGeometry& g, User u,
                                const chan::ImpairmentProfile& profile, Rng& rng) {
    const cd h = cascaded_gain(cfg, g, u);
    const double snr = std::max(snr_from_gain_db(g, u, std::abs(h)), kSnrFloorDb);
    sig::LabeledFrame rotated = f;
    if (std::abs(h) > 0.0) {
        const cd phase = h / std::abs(h);
        for (cd& v : rotated.samples)
            v *= phase;
    }
    chan::ImpairmentProfile p = profile;
    p.snr_db = snr;
    return chan::impair(rotated, p, rng);
}

double best_aligned_gain(const SceneGeometry& g, User u, int direction_samples) {
    const std::vector<cd> t = cascade_terms(g, u);
    double best = 0.0;
    for (int k = 0; k < direction_samples; ++k) {
        const double theta = kPi * k / direction_samples;
        const cd ref(std::cos(theta), std::sin(theta));
        cd h(0.0, 0.0);
        for (const cd& term : t) {
            const double proj = term.real() * ref.real() + term.imag() * ref.imag();
            h += (proj >= 0.0) ? term : -term;
        }
        best = std::max(best, std::abs(h));
    }
    return best;
}

void calibrate_noise_floors(SceneGeometry& g, const CalibrationTargets& targets) {
    for (User u : {User::user1, User::user2}) {
        const size_t ui = static_cast<size_t>(u);
        const double h_opt = best_aligned_gain(g, u);
        if (h_opt <= 0.0)
            throw Error(ExitCode::data, "calibration: degenerate geometry, |h_opt| = 0");
        g.noise_floor_dbm[ui] = g.tx_power_dbm + g.tx_gain_db +
                                20.0 * std::log10(h_opt) + g.rx_gain_db[ui] -
                                targets.target_opt_snr_db[ui];
    }
}

} // namespace risamc::ris
