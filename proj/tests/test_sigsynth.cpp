#include <doctest.h>

#include <set>

#include "risamc/error.hpp"
#include "risamc/sigsynth.hpp"
#include "test_util.hpp"

using namespace risamc;
using namespace risamc::sig;

TEST_CASE("constellations have unit mean energy") {
    for (Mod m : kAllMods) {
        const ConstellationMap c = gray_constellation(m);
        CHECK(c.points.size() == (1u << bits_per_symbol(m)));
        CHECK(c.mean_energy() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("16QAM mean power by direct enumeration") {
    // independent oracle: enumerate the odd-integer grid and scale by 1/sqrt(10)
    double acc = 0.0;
    int count = 0;
    for (int i = -3; i <= 3; i += 2)
        for (int q = -3; q <= 3; q += 2) {
            acc += (i * i + q * q) / 10.0;
            ++count;
        }
    const double expected = acc / count; // = 1 exactly
    CHECK(expected == doctest::Approx(1.0).epsilon(1e-15));
    const ConstellationMap c = gray_constellation(Mod::qam16);
    CHECK(c.mean_energy() == doctest::Approx(expected).epsilon(1e-12));
    // all points on the scaled grid
    for (const cd& p : c.points) {
        const double re = p.real() * std::sqrt(10.0);
        const double im = p.imag() * std::sqrt(10.0);
        CHECK(std::abs(re - std::round(re)) < 1e-9);
        CHECK(std::abs(im - std::round(im)) < 1e-9);
        CHECK(static_cast<int>(std::abs(std::round(re))) % 2 == 1);
    }
}

TEST_CASE("bit labels are a permutation of all k-bit strings") {
    for (Mod m : kAllMods) {
        const ConstellationMap c = gray_constellation(m);
        std::set<uint32_t> seen(c.labels.begin(), c.labels.end());
        CHECK(seen.size() == c.points.size());
        for (uint32_t l : c.labels)
            CHECK(l < c.points.size());
    }
}

TEST_CASE("BPSK convention") {
    const ConstellationMap c = gray_constellation(Mod::bpsk);
    CHECK(c.points[0] == cd(1.0, 0.0));
    CHECK(c.points[1] == cd(-1.0, 0.0));
    CHECK(c.bit_label(0) == "0");
    CHECK(c.bit_label(1) == "1");
}

TEST_CASE("QPSK points at pi/4 + k*pi/2 with Gray neighbours") {
    const ConstellationMap c = gray_constellation(Mod::qpsk);
    for (size_t i = 0; i < 4; ++i) {
        const double ang = kPi / 4 + 2.0 * kPi * static_cast<double>(i) / 4;
        CHECK(c.points[i].real() == doctest::Approx(std::cos(ang)));
        CHECK(c.points[i].imag() == doctest::Approx(std::sin(ang)));
    }
}

namespace {

int popcount_diff(uint32_t a, uint32_t b) { return __builtin_popcount(a ^ b); }

} // namespace

TEST_CASE("Gray property: PSK angular neighbours differ in one bit") {
    for (Mod m : {Mod::bpsk, Mod::qpsk, Mod::psk8}) {
        const ConstellationMap c = gray_constellation(m);
        const size_t n = c.points.size();
        for (size_t i = 0; i < n; ++i)
            CHECK(popcount_diff(c.labels[i], c.labels[(i + 1) % n]) == 1);
    }
}

TEST_CASE("Gray property: QAM per-axis neighbours differ in one sub-label bit") {
    for (Mod m : {Mod::qam16, Mod::qam64}) {
        const ConstellationMap c = gray_constellation(m);
        const int side_bits = bits_per_symbol(m) / 2;
        const uint32_t side = 1u << side_bits;
        const uint32_t mask = side - 1;
        // points were emitted I-major: index = ri*side + rq
        for (uint32_t ri = 0; ri < side; ++ri)
            for (uint32_t rq = 0; rq < side; ++rq) {
                const uint32_t label = c.labels[ri * side + rq];
                if (ri + 1 < side) {
                    const uint32_t right = c.labels[(ri + 1) * side + rq];
                    CHECK(popcount_diff(label >> side_bits, right >> side_bits) == 1);
                    CHECK((label & mask) == (right & mask));
                }
                if (rq + 1 < side) {
                    const uint32_t up = c.labels[ri * side + rq + 1];
                    CHECK(popcount_diff(label & mask, up & mask) == 1);
                    CHECK((label >> side_bits) == (up >> side_bits));
                }
            }
    }
}

TEST_CASE("gray_constellation is deterministic") {
    for (Mod m : kAllMods) {
        const ConstellationMap a = gray_constellation(m);
        const ConstellationMap b = gray_constellation(m);
        CHECK(a.points == b.points);
        CHECK(a.labels == b.labels);
    }
}

TEST_CASE("modulate basics") {
    CHECK(modulate({0}, Mod::bpsk) == std::vector<cd>{cd(1.0, 0.0)});
    CHECK(modulate({1, 1, 1, 1}, Mod::bpsk) ==
          std::vector<cd>(4, cd(-1.0, 0.0)));
    CHECK_THROWS_AS((void)modulate({0, 1, 0}, Mod::qpsk), IndivisibleBitCount);
}

TEST_CASE("QAM64 label round trip over all 64 groups") {
    // exhaustive oracle: every 6-bit label maps to a unique point and back
    for (uint32_t v = 0; v < 64; ++v) {
        std::vector<uint8_t> bits(6);
        for (int b = 0; b < 6; ++b)
            bits[static_cast<size_t>(b)] = static_cast<uint8_t>((v >> (5 - b)) & 1u);
        const std::vector<cd> sym = modulate(bits, Mod::qam64);
        REQUIRE(sym.size() == 1);
        CHECK(demap_nearest(sym, Mod::qam64) == bits);
    }
}

TEST_CASE("demodulation round trip for random payloads") {
    Rng rng(123);
    for (Mod m : kAllMods) {
        const int bps = bits_per_symbol(m);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<uint8_t> bits(static_cast<size_t>(bps) * 64);
            for (uint8_t& b : bits)
                b = static_cast<uint8_t>(rng.bit());
            CHECK(demap_nearest(modulate(bits, m), m) == bits);
        }
    }
}

TEST_CASE("rrc filter is unit energy and symmetric") {
    ShapingConfig cfg;
    const std::vector<double> h = rrc_taps(cfg);
    CHECK(h.size() == static_cast<size_t>(cfg.filter_span_symbols * cfg.samples_per_symbol + 1));
    double e = 0.0;
    for (double v : h)
        e += v * v;
    CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
    for (size_t i = 0; i < h.size(); ++i)
        CHECK(h[i] == doctest::Approx(h[h.size() - 1 - i]).epsilon(1e-12));
}

TEST_CASE("pulse_shape of a single impulse reproduces the filter taps") {
    ShapingConfig cfg;
    const std::vector<double> h = rrc_taps(cfg);
    const int delay = cfg.filter_span_symbols * cfg.samples_per_symbol / 2;
    const std::vector<cd> out = pulse_shape({cd(1.0, 0.0)}, cfg);
    REQUIRE(out.size() == static_cast<size_t>(cfg.samples_per_symbol));
    // output sample n equals tap delay+n; the filter peak (center tap) is present
    for (size_t n = 0; n < out.size(); ++n)
        CHECK(out[n].real() ==
              doctest::Approx(h[static_cast<size_t>(delay) + n]).epsilon(1e-12));
    CHECK(std::abs(out[0]) == doctest::Approx(h[static_cast<size_t>(delay)]));
}

TEST_CASE("pulse_shape rejects empty input") {
    ShapingConfig cfg;
    CHECK_THROWS_AS((void)pulse_shape({}, cfg), EmptyInput);
}

TEST_CASE("pulse_shape energy accounting on random symbols") {
    ShapingConfig cfg;
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<uint8_t> bits(2 * 256);
        for (uint8_t& b : bits)
            b = static_cast<uint8_t>(rng.bit());
        const std::vector<cd> syms = modulate(bits, Mod::qpsk);
        const std::vector<cd> out = pulse_shape(syms, cfg);
        double ein = 0.0, eout = 0.0;
        for (const cd& s : syms)
            ein += std::norm(s);
        for (const cd& s : out)
            eout += std::norm(s);
        // unit-energy filter preserves energy up to the trimmed transients
        CHECK(eout / ein > 0.9);
        CHECK(eout / ein < 1.1);
    }
}

TEST_CASE("spectral containment of shaped frames") {
    ShapingConfig cfg;
    const double fs = kSampleRateHz;
    const double symbol_rate = fs / cfg.samples_per_symbol;
    const double band = (1.0 + cfg.rolloff) * symbol_rate / 2.0;
    for (Mod m : kAllMods) {
        const LabeledFrame f = synthesize_frame(m, cfg, 99);
        CHECK(testutil::in_band_energy_fraction(f.samples, fs, band) > 0.99);
    }
}

TEST_CASE("synthesize_frame: length, RMS, determinism") {
    ShapingConfig cfg;
    for (Mod m : kAllMods) {
        const LabeledFrame f = synthesize_frame(m, cfg, 7);
        CHECK(f.samples.size() == kFrameLen);
        CHECK(f.rms == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(rms(f.samples) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(f.label == m);
    }
    const LabeledFrame a = synthesize_frame(Mod::bpsk, cfg, 7);
    const LabeledFrame b = synthesize_frame(Mod::bpsk, cfg, 7);
    CHECK(a.samples == b.samples); // bit identical
    const LabeledFrame c = synthesize_frame(Mod::bpsk, cfg, 8);
    CHECK(a.samples != c.samples);
}

TEST_CASE("shaped frame round trips through the matched filter") {
    ShapingConfig cfg;
    Rng rng(42);
    for (Mod m : kAllMods) {
        const int bps = bits_per_symbol(m);
        std::vector<uint8_t> bits(static_cast<size_t>(bps) * 256);
        for (uint8_t& b : bits)
            b = static_cast<uint8_t>(rng.bit());
        std::vector<cd> frame = pulse_shape(modulate(bits, m), cfg);
        const std::vector<uint8_t> rec = testutil::demod_frame_bits(frame, m, cfg, 4);
        // interior bits only
        const std::vector<uint8_t> want(bits.begin() + 4 * bps, bits.end() - 4 * bps);
        CHECK(rec == want);
    }
}
