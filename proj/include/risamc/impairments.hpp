#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "risamc/sigsynth.hpp"

namespace risamc::chan {

struct ImpairmentProfile {
    double snr_db = 10.0;
    double rician_k = 4.0; // linear power ratio
    double max_doppler_hz = 10.0;
    double clock_offset_ppm = 5.0;
    double carrier_freq_hz = 5e9;
    double sample_rate_hz = sig::kSampleRateHz;

    void validate() const;
};

inline constexpr double kSnrSkip = std::numeric_limits<double>::infinity();
// K at or above this is treated as a pure LOS gain of exactly 1.
inline constexpr double kRicianLosOnly = 1e6;
// Number of equal-power sinusoids in the diffuse-component synthesis.
inline constexpr int kDopplerSinusoids = 48;

// Adds circularly-symmetric complex Gaussian noise at the given SNR relative
// to the measured signal power. snr_db = +inf skips.
sig::LabeledFrame apply_awgn(const sig::LabeledFrame& f, double snr_db, Rng& rng);

// Carrier frequency offset of ppm*1e-6*fc plus resampling by (1 + ppm*1e-6),
// re-trimmed to the original length.
sig::LabeledFrame apply_clock_offset(const sig::LabeledFrame& f, double ppm, double fc, double fs);

// Time-varying Rician gain g(n) with K-factor k and maximum Doppler fd,
// diffuse part synthesized as a sum of sinusoids; E|g|^2 = 1.
sig::LabeledFrame apply_rician(const sig::LabeledFrame& f, double k, double fd, double fs, Rng& rng);

// Draw one Rician gain sample (t = 0) from fresh phases; test oracle helper
// for amplitude statistics.
cd rician_gain_sample(double k, Rng& rng);

// Full chain: Rician fading -> clock/frequency offset -> AWGN -> unit-RMS
// renormalization. Label, seed, and length are preserved.
sig::LabeledFrame impair(const sig::LabeledFrame& f, const ImpairmentProfile& p, Rng& rng);

struct DatasetSpec {
    int frames_per_class = 5000;
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    ImpairmentProfile profile;
    sig::ShapingConfig shaping;
    uint64_t master_seed = 1;

    void validate() const;
};

enum class Split : int { train = 0, val = 1, test = 2 };

std::string_view split_name(Split s);
Split split_from_name(std::string_view name);

struct Dataset {
    std::vector<sig::LabeledFrame> frames;
    std::vector<Split> splits; // parallel to frames

    std::vector<size_t> indices(Split s) const;
};

// Streaming generation: invokes sink(index, frame, split) for every frame in
// a fixed deterministic order (class-major, then frame index). Frames are
// generated in parallel but delivered in order.
void for_each_dataset_frame(const DatasetSpec& spec,
                            const std::function<void(size_t, const sig::LabeledFrame&, Split)>& sink);

Dataset generate_dataset(const DatasetSpec& spec);

// Seed derivation shared with the manifest: stage 0 = payload bits,
// stage 1 = impairment chain.
uint64_t frame_seed(uint64_t master, int class_index, int frame_index, int stage);

} // namespace risamc::chan
