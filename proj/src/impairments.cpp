#include "risamc/impairments.hpp"

#include <cmath>

#include "risamc/error.hpp"

namespace risamc::chan {

void ImpairmentProfile::validate() const {
    if (!(sample_rate_hz > 2.0 * max_doppler_hz))
        throw Error(ExitCode::data, "sample_rate_hz must exceed 2 * max_doppler_hz");
    if (std::isnan(snr_db))
        throw Error(ExitCode::data, "snr_db must not be NaN");
    if (rician_k < 0.0)
        throw Error(ExitCode::data, "rician_k must be >= 0");
    if (max_doppler_hz < 0.0)
        throw Error(ExitCode::data, "max_doppler_hz must be >= 0");
    if (std::abs(clock_offset_ppm) >= 100.0)
        throw Error(ExitCode::data, "|clock_offset_ppm| must be < 100");
}

sig::LabeledFrame apply_awgn(const sig::LabeledFrame& f, double snr_db, Rng& rng) {
    sig::LabeledFrame out = f;
    if (snr_db == kSnrSkip)
        return out;
    const double sig_power = mean_power(out.samples);
    const double noise_power = sig_power / db_to_lin(snr_db);
    const double scale = std::sqrt(noise_power);
    for (cd& v : out.samples)
        v += scale * rng.cgaussian();
    return out;
}

namespace {

// 8-tap Hann-windowed-sinc fractional interpolator, edge-clamped. The drift
// over one frame at a few ppm is a hundredth of a sample, so the short
// kernel is spectrally more than adequate.
cd interp_fractional(const std::vector<cd>& x, double t) {
    const long n = static_cast<long>(x.size());
    const long i0 = static_cast<long>(std::floor(t)) - 3;
    cd acc(0.0, 0.0);
    double wsum = 0.0;
    for (long i = i0; i < i0 + 8; ++i) {
        const double d = t - static_cast<double>(i);
        double w;
        if (std::abs(d) < 1e-12) {
            w = 1.0;
        } else {
            const double s = std::sin(kPi * d) / (kPi * d);
            const double hann = 0.5 * (1.0 + std::cos(kPi * d / 4.0));
            w = s * hann;
        }
        const long idx = std::clamp(i, 0l, n - 1);
        acc += w * x[static_cast<size_t>(idx)];
        wsum += w;
    }
    return acc / wsum;
}

} // namespace

sig::LabeledFrame apply_clock_offset(const sig::LabeledFrame& f, double ppm, double fc, double fs) {
    if (std::abs(ppm) >= 100.0)
        throw Error(ExitCode::data, "|ppm| must be < 100");
    sig::LabeledFrame out = f;
    if (ppm == 0.0)
        return out;
    const double delta = ppm * 1e-6;
    const double dphi = 2.0 * kPi * (delta * fc) / fs; // CFO phase step per sample
    // carrier offset via phasor recurrence
    std::vector<cd> rotated(f.samples.size());
    const cd step(std::cos(dphi), std::sin(dphi));
    cd ph(1.0, 0.0);
    for (size_t n = 0; n < f.samples.size(); ++n) {
        rotated[n] = f.samples[n] * ph;
        ph *= step;
    }
    // sample-rate offset: the receiver clock runs fast by (1 + delta), so it
    // samples the waveform at instants n / (1 + delta)
    const double rate = 1.0 / (1.0 + delta);
    for (size_t n = 0; n < out.samples.size(); ++n)
        out.samples[n] = interp_fractional(rotated, static_cast<double>(n) * rate);
    return out;
}

cd rician_gain_sample(double k, Rng& rng) {
    if (k >= kRicianLosOnly)
        return cd(1.0, 0.0);
    const double los_amp = std::sqrt(k / (k + 1.0));
    const double diffuse_amp = std::sqrt(1.0 / (k + 1.0));
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double per = 1.0 / std::sqrt(static_cast<double>(kDopplerSinusoids));
    cd d(0.0, 0.0);
    for (int m = 0; m < kDopplerSinusoids; ++m) {
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        d += cd(std::cos(phi), std::sin(phi));
    }
    d *= per;
    return los_amp * cd(std::cos(theta), std::sin(theta)) + diffuse_amp * d;
}

sig::LabeledFrame apply_rician(const sig::LabeledFrame& f, double k, double fd, double fs, Rng& rng) {
    if (k < 0.0 || fd < 0.0)
        throw Error(ExitCode::data, "apply_rician: k and fd must be >= 0");
    sig::LabeledFrame out = f;
    if (k >= kRicianLosOnly)
        return out; // pure LOS, unit gain

    const size_t n = f.samples.size();
    const double los_amp = std::sqrt(k / (k + 1.0));
    const double diffuse_amp = std::sqrt(1.0 / (k + 1.0));
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const cd los = los_amp * cd(std::cos(theta), std::sin(theta));

    // Diffuse part: equal-power sinusoids at Doppler frequencies
    // fd*cos(alpha_m) with evenly spread arrival angles and i.i.d. random
    // phases; E|d|^2 = 1 exactly.
    const int m_count = kDopplerSinusoids;
    const double per = 1.0 / std::sqrt(static_cast<double>(m_count));
    std::vector<cd> gain(n, los);
    for (int m = 0; m < m_count; ++m) {
        const double alpha = 2.0 * kPi * (m + 0.5) / m_count;
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double dphi = 2.0 * kPi * fd * std::cos(alpha) / fs;
        const cd step(std::cos(dphi), std::sin(dphi));
        cd ph(std::cos(phi), std::sin(phi));
        const double amp = diffuse_amp * per;
        for (size_t i = 0; i < n; ++i) {
            gain[i] += amp * ph;
            ph *= step;
        }
    }
    for (size_t i = 0; i < n; ++i)
        out.samples[i] = f.samples[i] * gain[i];
    return out;
}

sig::LabeledFrame impair(const sig::LabeledFrame& f, const ImpairmentProfile& p, Rng& rng) {
    p.validate();
    sig::LabeledFrame out = apply_rician(f, p.rician_k, p.max_doppler_hz, p.sample_rate_hz, rng);
    out = apply_clock_offset(out, p.clock_offset_ppm, p.carrier_freq_hz, p.sample_rate_hz);
    out = apply_awgn(out, p.snr_db, rng);
    normalize_rms(out.samples);
    out.rms = rms(out.samples);
    return out;
}

void DatasetSpec::validate() const {
    if (frames_per_class <= 0)
        throw InvalidSplit("frames_per_class must be positive");
    const double sum = train_frac + val_frac + test_frac;
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidSplit("split fractions must sum to 1.0");
    for (double frac : {train_frac, val_frac, test_frac}) {
        if (frac < 0.0)
            throw InvalidSplit("split fractions must be non-negative");
        const double count = frac * frames_per_class;
        if (std::abs(count - std::round(count)) > 1e-9)
            throw InvalidSplit("frames_per_class * fraction must be an integer");
    }
    profile.validate();
    shaping.validate();
}

std::string_view split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    throw Error(ExitCode::data, "unknown split");
}

Split split_from_name(std::string_view name) {
    if (name == "train")
        return Split::train;
    if (name == "val")
        return Split::val;
    if (name == "test")
        return Split::test;
    throw FormatError("unknown split name: " + std::string(name));
}

std::vector<size_t> Dataset::indices(Split s) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s)
            idx.push_back(i);
    return idx;
}

uint64_t frame_seed(uint64_t master, int class_index, int frame_index, int stage) {
    return derive_seed(master, {static_cast<uint64_t>(class_index),
                                static_cast<uint64_t>(frame_index),
                                static_cast<uint64_t>(stage)});
}

void for_each_dataset_frame(const DatasetSpec& spec,
                            const std::function<void(size_t, const sig::LabeledFrame&, Split)>& sink) {
    spec.validate();
    const int fpc = spec.frames_per_class;
    const int n_train = static_cast<int>(std::lround(spec.train_frac * fpc));
    const int n_val = static_cast<int>(std::lround(spec.val_frac * fpc));
    const size_t total = sig::kNumClasses * static_cast<size_t>(fpc);

    // Frames are independent given their derived seeds; generate in chunks in
    // parallel, deliver in order.
    const size_t chunk = 256;
    std::vector<sig::LabeledFrame> buf;
    for (size_t start = 0; start < total; start += chunk) {
        const size_t end = std::min(start + chunk, total);
        buf.assign(end - start, {});
#pragma omp parallel for schedule(dynamic)
        for (size_t i = start; i < end; ++i) {
            const int c = static_cast<int>(i / static_cast<size_t>(fpc));
            const int k = static_cast<int>(i % static_cast<size_t>(fpc));
            const sig::LabeledFrame clean = sig::synthesize_frame(
                sig::kAllMods[static_cast<size_t>(c)], spec.shaping,
                frame_seed(spec.master_seed, c, k, 0));
            Rng imp_rng(frame_seed(spec.master_seed, c, k, 1));
            buf[i - start] = impair(clean, spec.profile, imp_rng);
        }
        for (size_t i = start; i < end; ++i) {
            const int k = static_cast<int>(i % static_cast<size_t>(fpc));
            Split s = Split::test;
            if (k < n_train)
                s = Split::train;
            else if (k < n_train + n_val)
                s = Split::val;
            sink(i, buf[i - start], s);
        }
    }
}

Dataset generate_dataset(const DatasetSpec& spec) {
    Dataset ds;
    ds.frames.reserve(sig::kNumClasses * static_cast<size_t>(spec.frames_per_class));
    for_each_dataset_frame(spec, [&](size_t, const sig::LabeledFrame& f, Split s) {
        ds.frames.push_back(f);
        ds.splits.push_back(s);
    });
    return ds;
}

} // namespace risamc::chan
