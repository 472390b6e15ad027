#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "risamc/common.hpp"

namespace risamc::sig {

inline constexpr size_t kFrameLen = 2048;
inline constexpr double kSampleRateHz = 200e3;

enum class Mod : int { bpsk = 0, qpsk = 1, psk8 = 2, qam16 = 3, qam64 = 4 };

inline constexpr std::array<Mod, 5> kAllMods = {Mod::bpsk, Mod::qpsk, Mod::psk8,
                                                Mod::qam16, Mod::qam64};
inline constexpr size_t kNumClasses = 5;

int bits_per_symbol(Mod m);
std::string_view mod_name(Mod m);
Mod mod_from_name(std::string_view name);

// Gray-labeled constellation with unit average symbol energy.
// labels[i] holds the bit label of points[i], MSB-first in the low
// bits_per_symbol bits.
struct ConstellationMap {
    std::vector<cd> points;
    std::vector<uint32_t> labels;
    int bits = 0;

    std::string bit_label(size_t i) const;
    // Index of the point carrying a given label; points.size() if absent.
    size_t index_of_label(uint32_t label) const;
    double mean_energy() const;
};

// Deterministic per scheme. PSK points start at angle pi/M; QAM uses
// per-axis reflected Gray labels on the odd-integer grid.
ConstellationMap gray_constellation(Mod m);

// bits are 0/1 values, grouped MSB-first into symbols.
std::vector<cd> modulate(const std::vector<uint8_t>& bits, Mod m);

// Nearest-point demapper (minimum Euclidean distance, lowest index on ties).
std::vector<uint8_t> demap_nearest(const std::vector<cd>& symbols, Mod m);

struct ShapingConfig {
    int samples_per_symbol = 8;
    double rolloff = 0.35;
    int filter_span_symbols = 8; // even

    void validate() const;
};

// Unit-energy root-raised-cosine taps, length span*sps + 1 (odd, symmetric).
std::vector<double> rrc_taps(const ShapingConfig& cfg);

// Upsample, filter, and trim the group delay so symbol k sits at sample
// k*samples_per_symbol. Output length = symbols.size() * samples_per_symbol.
std::vector<cd> pulse_shape(const std::vector<cd>& symbols, const ShapingConfig& cfg);

// Matched filter + symbol-instant sampling; inverse of pulse_shape up to
// edge transients. Test and demod helper.
std::vector<cd> matched_filter_symbols(const std::vector<cd>& frame, const ShapingConfig& cfg);

struct LabeledFrame {
    std::vector<cd> samples; // kFrameLen complex baseband samples
    Mod label = Mod::bpsk;
    uint64_t seed = 0;
    double rms = 0.0; // RMS after the producing stage's normalization
};

// Random payload from the seeded generator, pulse shaped, unit RMS.
LabeledFrame synthesize_frame(Mod m, const ShapingConfig& cfg, uint64_t seed);

} // namespace risamc::sig
