#include <doctest.h>

#include "risamc/error.hpp"
#include "risamc/impairments.hpp"
#include "test_util.hpp"

using namespace risamc;
using namespace risamc::chan;

namespace {

sig::LabeledFrame make_frame(sig::Mod m = sig::Mod::qpsk, uint64_t seed = 3) {
    return sig::synthesize_frame(m, sig::ShapingConfig{}, seed);
}

sig::LabeledFrame make_tone(double freq_hz, double fs) {
    sig::LabeledFrame f;
    f.samples.resize(sig::kFrameLen);
    for (size_t n = 0; n < f.samples.size(); ++n) {
        const double ph = 2.0 * kPi * freq_hz * static_cast<double>(n) / fs;
        f.samples[n] = cd(std::cos(ph), std::sin(ph));
    }
    f.rms = rms(f.samples);
    return f;
}

} // namespace

TEST_CASE("awgn skip sentinel leaves the frame untouched") {
    const sig::LabeledFrame f = make_frame();
    Rng rng(1);
    const sig::LabeledFrame out = apply_awgn(f, kSnrSkip, rng);
    CHECK(out.samples == f.samples);
}

TEST_CASE("awgn empirical noise power at 0 dB") {
    // over ~1e6 samples the measured noise power must match the configured
    // one within 2%
    Rng rng(11);
    double noise_power = 0.0;
    size_t count = 0;
    for (int i = 0; i < 500; ++i) {
        const sig::LabeledFrame f = make_frame(sig::Mod::qpsk, static_cast<uint64_t>(i));
        const sig::LabeledFrame out = apply_awgn(f, 0.0, rng);
        for (size_t n = 0; n < f.samples.size(); ++n)
            noise_power += std::norm(out.samples[n] - f.samples[n]);
        count += f.samples.size();
    }
    noise_power /= static_cast<double>(count);
    CHECK(noise_power == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("awgn empirical SNR within 0.2 dB across -10..30 dB") {
    for (double target : {-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0}) {
        Rng rng(static_cast<uint64_t>(target * 7 + 1000));
        double sp = 0.0, np = 0.0;
        for (int i = 0; i < 100; ++i) {
            const sig::LabeledFrame f = make_frame(sig::Mod::psk8, static_cast<uint64_t>(i));
            const sig::LabeledFrame out = apply_awgn(f, target, rng);
            for (size_t n = 0; n < f.samples.size(); ++n) {
                sp += std::norm(f.samples[n]);
                np += std::norm(out.samples[n] - f.samples[n]);
            }
        }
        const double measured = 10.0 * std::log10(sp / np);
        CHECK(std::abs(measured - target) < 0.2);
    }
}

TEST_CASE("clock offset with zero ppm is the identity") {
    const sig::LabeledFrame f = make_frame();
    const sig::LabeledFrame out = apply_clock_offset(f, 0.0, 5e9, sig::kSampleRateHz);
    CHECK(out.samples == f.samples);
}

TEST_CASE("5 ppm at 5 GHz shifts a tone by 25 kHz") {
    const double fs = sig::kSampleRateHz;
    const sig::LabeledFrame tone = make_tone(-20e3, fs); // keep the result in-band
    const sig::LabeledFrame out = apply_clock_offset(tone, 5.0, 5e9, fs);
    const std::vector<cd> spec = fft(out.samples);
    size_t peak = 0;
    for (size_t k = 1; k < spec.size(); ++k)
        if (std::abs(spec[k]) > std::abs(spec[peak]))
            peak = k;
    double f_peak = static_cast<double>(peak) / static_cast<double>(spec.size()) * fs;
    if (f_peak > fs / 2)
        f_peak -= fs;
    const double bin = fs / static_cast<double>(spec.size()); // 97.6 Hz
    CHECK(std::abs(f_peak - (-20e3 + 25e3)) <= bin + 1e-9);
}

TEST_CASE("5 ppm CFO rotates BPSK through a full circle every 8 samples") {
    const double fs = sig::kSampleRateHz;
    const sig::LabeledFrame f = make_frame(sig::Mod::bpsk, 17);
    const sig::LabeledFrame out = apply_clock_offset(f, 5.0, 5e9, fs);
    // squaring removes the +-1 modulation; the squared signal rotates at
    // twice the offset. weighted phase-increment average = 2*2*pi*df/fs
    cd acc(0.0, 0.0);
    for (size_t n = 0; n + 1 < out.samples.size(); ++n) {
        const cd a = out.samples[n] * out.samples[n];
        const cd b = out.samples[n + 1] * out.samples[n + 1];
        acc += b * std::conj(a);
    }
    const double slope = std::arg(acc); // radians per sample, doubled CFO
    const double expect = 2.0 * 2.0 * kPi * 25e3 / fs; // = pi/2 (8 samples/cycle)
    CHECK(slope == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("rician k >= 1e6 behaves as unit LOS gain") {
    const sig::LabeledFrame f = make_frame();
    Rng rng(5);
    const sig::LabeledFrame out = apply_rician(f, kRicianLosOnly, 10.0, sig::kSampleRateHz, rng);
    for (size_t n = 0; n < f.samples.size(); ++n)
        CHECK(std::abs(out.samples[n] - f.samples[n]) < 1e-3);
}

TEST_CASE("rician k=0 is Rayleigh with unit mean power") {
    Rng rng(21);
    double p = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i)
        p += std::norm(rician_gain_sample(0.0, rng));
    p /= draws;
    CHECK(p == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("rician k=4 moment-based K estimate") {
    // oracle: for |g|^2 with mean m and variance v, r = v/m^2 and
    // K = (1 - r + sqrt(1 - r)) / r
    Rng rng(22);
    const int draws = 1000000;
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double p = std::norm(rician_gain_sample(4.0, rng));
        m1 += p;
        m2 += p * p;
    }
    m1 /= draws;
    m2 /= draws;
    const double var = m2 - m1 * m1;
    const double r = var / (m1 * m1);
    const double k_hat = (1.0 - r + std::sqrt(1.0 - r)) / r;
    CHECK(k_hat > 3.2);
    CHECK(k_hat < 4.8);
    CHECK(m1 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("time-varying fading preserves mean power") {
    Rng rng(23);
    sig::LabeledFrame ones;
    ones.samples.assign(sig::kFrameLen, cd(1.0, 0.0));
    double p = 0.0;
    size_t count = 0;
    for (int i = 0; i < 500; ++i) {
        const sig::LabeledFrame out = apply_rician(ones, 4.0, 10.0, sig::kSampleRateHz, rng);
        for (const cd& v : out.samples)
            p += std::norm(v);
        count += out.samples.size();
    }
    CHECK(p / static_cast<double>(count) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("impair identity chain") {
    ImpairmentProfile p;
    p.snr_db = kSnrSkip;
    p.rician_k = kRicianLosOnly;
    p.clock_offset_ppm = 0.0;
    const sig::LabeledFrame f = make_frame();
    Rng rng(9);
    const sig::LabeledFrame out = impair(f, p, rng);
    REQUIRE(out.samples.size() == f.samples.size());
    for (size_t n = 0; n < f.samples.size(); ++n)
        CHECK(std::abs(out.samples[n] - f.samples[n]) < 1e-9);
}

TEST_CASE("impair is deterministic and preserves length/label") {
    ImpairmentProfile p; // defaults: k=4, fd=10, 5 ppm, snr 10
    const sig::LabeledFrame f = make_frame(sig::Mod::qam16, 31);
    Rng r1(77), r2(77);
    const sig::LabeledFrame a = impair(f, p, r1);
    const sig::LabeledFrame b = impair(f, p, r2);
    CHECK(a.samples == b.samples);
    CHECK(a.samples.size() == sig::kFrameLen);
    CHECK(a.label == sig::Mod::qam16);
    CHECK(rms(a.samples) == doctest::Approx(1.0).epsilon(1e-9));
    Rng r3(78);
    const sig::LabeledFrame c = impair(f, p, r3);
    CHECK(a.samples != c.samples);
}

TEST_CASE("profile validation") {
    ImpairmentProfile p;
    p.max_doppler_hz = 150e3; // above fs/2
    CHECK_THROWS_AS(p.validate(), Error);
    p = ImpairmentProfile{};
    p.clock_offset_ppm = 200.0;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("dataset generation: stratified split, determinism") {
    DatasetSpec spec;
    spec.frames_per_class = 10;
    spec.master_seed = 5;
    const Dataset a = generate_dataset(spec);
    CHECK(a.frames.size() == 50);
    CHECK(a.indices(Split::train).size() == 40);
    CHECK(a.indices(Split::val).size() == 5);
    CHECK(a.indices(Split::test).size() == 5);
    // every class equally represented in each partition
    for (Split s : {Split::train, Split::val, Split::test}) {
        std::array<int, 5> per_class{};
        for (size_t i : a.indices(s))
            ++per_class[static_cast<size_t>(a.frames[i].label)];
        for (int c : per_class)
            CHECK(c == per_class[0]);
    }
    const Dataset b = generate_dataset(spec);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].samples == b.frames[i].samples);
        CHECK(a.splits[i] == b.splits[i]);
    }
}

TEST_CASE("dataset split validation") {
    DatasetSpec spec;
    spec.frames_per_class = 10;
    spec.train_frac = 0.7; // sums to 0.9
    CHECK_THROWS_AS(spec.validate(), InvalidSplit);
    spec = DatasetSpec{};
    spec.frames_per_class = 3; // 0.8*3 not integral
    CHECK_THROWS_AS(spec.validate(), InvalidSplit);
    spec = DatasetSpec{};
    spec.frames_per_class = 10;
    CHECK_NOTHROW(spec.validate());
}
