#include "risamc/sigsynth.hpp"

#include <algorithm>
#include <cmath>

#include "risamc/error.hpp"

namespace risamc::sig {

int bits_per_symbol(Mod m) {
    switch (m) {
    case Mod::bpsk: return 1;
    case Mod::qpsk: return 2;
    case Mod::psk8: return 3;
    case Mod::qam16: return 4;
    case Mod::qam64: return 6;
    }
    throw Error(ExitCode::data, "unknown modulation");
}

std::string_view mod_name(Mod m) {
    switch (m) {
    case Mod::bpsk: return "BPSK";
    case Mod::qpsk: return "QPSK";
    case Mod::psk8: return "8PSK";
    case Mod::qam16: return "16QAM";
    case Mod::qam64: return "64QAM";
    }
    throw Error(ExitCode::data, "unknown modulation");
}

Mod mod_from_name(std::string_view name) {
    for (Mod m : kAllMods)
        if (mod_name(m) == name)
            return m;
    throw FormatError("unknown modulation name: " + std::string(name));
}

std::string ConstellationMap::bit_label(size_t i) const {
    std::string s(static_cast<size_t>(bits), '0');
    for (int b = 0; b < bits; ++b)
        if (labels[i] >> (bits - 1 - b) & 1u)
            s[static_cast<size_t>(b)] = '1';
    return s;
}

size_t ConstellationMap::index_of_label(uint32_t label) const {
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label)
            return i;
    return points.size();
}

double ConstellationMap::mean_energy() const {
    double acc = 0.0;
    for (const cd& p : points)
        acc += std::norm(p);
    return acc / static_cast<double>(points.size());
}

namespace {

inline uint32_t binary_to_gray(uint32_t v) { return v ^ (v >> 1); }

// M-PSK on the unit circle, first point at angle pi/M, labels in Gray order
// around the circle so angular neighbours differ in one bit.
ConstellationMap make_psk(int bits) {
    const uint32_t m = 1u << bits;
    ConstellationMap c;
    c.bits = bits;
    c.points.resize(m);
    c.labels.resize(m);
    for (uint32_t i = 0; i < m; ++i) {
        const double ang = kPi / m + 2.0 * kPi * i / m;
        c.points[i] = cd(std::cos(ang), std::sin(ang));
        c.labels[i] = binary_to_gray(i);
    }
    return c;
}

// Square QAM on the odd-integer grid, normalized to unit mean energy.
// The label splits into I bits (high half) and Q bits (low half); each axis
// carries a reflected Gray code over its amplitude ranks.
ConstellationMap make_qam(int bits) {
    const int side_bits = bits / 2;
    const uint32_t side = 1u << side_bits;
    ConstellationMap c;
    c.bits = bits;
    // mean energy of the odd-integer grid: two axes, each E[a^2] over
    // {+-1, +-3, ...}
    double axis_e = 0.0;
    for (uint32_t r = 0; r < side; ++r) {
        const double a = 2.0 * static_cast<double>(r) - static_cast<double>(side - 1);
        axis_e += a * a;
    }
    axis_e /= static_cast<double>(side);
    const double scale = 1.0 / std::sqrt(2.0 * axis_e);
    for (uint32_t ri = 0; ri < side; ++ri) {
        const double re = (2.0 * ri - (side - 1.0)) * scale;
        for (uint32_t rq = 0; rq < side; ++rq) {
            const double im = (2.0 * rq - (side - 1.0)) * scale;
            c.points.emplace_back(re, im);
            c.labels.push_back((binary_to_gray(ri) << side_bits) | binary_to_gray(rq));
        }
    }
    return c;
}

} // namespace

ConstellationMap gray_constellation(Mod m) {
    switch (m) {
    case Mod::bpsk: {
        // canonical antipodal convention: bit 0 -> +1, bit 1 -> -1
        ConstellationMap c;
        c.bits = 1;
        c.points = {cd(1.0, 0.0), cd(-1.0, 0.0)};
        c.labels = {0u, 1u};
        return c;
    }
    case Mod::qpsk: return make_psk(2);
    case Mod::psk8: return make_psk(3);
    case Mod::qam16: return make_qam(4);
    case Mod::qam64: return make_qam(6);
    }
    throw Error(ExitCode::data, "unknown modulation");
}

std::vector<cd> modulate(const std::vector<uint8_t>& bits, Mod m) {
    const ConstellationMap c = gray_constellation(m);
    const int bps = c.bits;
    if (bits.size() % static_cast<size_t>(bps) != 0)
        throw IndivisibleBitCount("bit count " + std::to_string(bits.size()) +
                                  " not divisible by " + std::to_string(bps));
    // label -> point index lookup
    std::vector<size_t> inv(c.points.size());
    for (size_t i = 0; i < c.labels.size(); ++i)
        inv[c.labels[i]] = i;

    const size_t nsym = bits.size() / static_cast<size_t>(bps);
    std::vector<cd> out(nsym);
    for (size_t s = 0; s < nsym; ++s) {
        uint32_t label = 0;
        for (int b = 0; b < bps; ++b)
            label = (label << 1) | (bits[s * static_cast<size_t>(bps) + static_cast<size_t>(b)] & 1u);
        out[s] = c.points[inv[label]];
    }
    return out;
}

std::vector<uint8_t> demap_nearest(const std::vector<cd>& symbols, Mod m) {
    const ConstellationMap c = gray_constellation(m);
    const int bps = c.bits;
    std::vector<uint8_t> bits;
    bits.reserve(symbols.size() * static_cast<size_t>(bps));
    for (const cd& s : symbols) {
        size_t best = 0;
        double bestd = std::norm(s - c.points[0]);
        for (size_t i = 1; i < c.points.size(); ++i) {
            const double d = std::norm(s - c.points[i]);
            if (d < bestd) {
                bestd = d;
                best = i;
            }
        }
        const uint32_t label = c.labels[best];
        for (int b = bps - 1; b >= 0; --b)
            bits.push_back(static_cast<uint8_t>((label >> b) & 1u));
    }
    return bits;
}

void ShapingConfig::validate() const {
    if (samples_per_symbol < 2)
        throw Error(ExitCode::data, "samples_per_symbol must be >= 2");
    if (!(rolloff > 0.0 && rolloff <= 1.0))
        throw Error(ExitCode::data, "rolloff must be in (0, 1]");
    if (filter_span_symbols <= 0 || filter_span_symbols % 2 != 0)
        throw Error(ExitCode::data, "filter_span_symbols must be a positive even integer");
}

std::vector<double> rrc_taps(const ShapingConfig& cfg) {
    cfg.validate();
    const int sps = cfg.samples_per_symbol;
    const double beta = cfg.rolloff;
    const int n = cfg.filter_span_symbols * sps + 1;
    const int mid = (n - 1) / 2;
    std::vector<double> h(static_cast<size_t>(n));
    const double eps = 1e-10;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i - mid) / sps; // in symbol periods
        double v;
        if (std::abs(t) < eps) {
            v = 1.0 - beta + 4.0 * beta / kPi;
        } else if (std::abs(std::abs(t) - 1.0 / (4.0 * beta)) < eps) {
            v = beta / std::sqrt(2.0) *
                ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * beta)) +
                 (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * beta)));
        } else {
            const double num = std::sin(kPi * t * (1.0 - beta)) +
                               4.0 * beta * t * std::cos(kPi * t * (1.0 + beta));
            const double den = kPi * t * (1.0 - 16.0 * beta * beta * t * t);
            v = num / den;
        }
        h[static_cast<size_t>(i)] = v;
    }
    double e = 0.0;
    for (double v : h)
        e += v * v;
    const double g = 1.0 / std::sqrt(e);
    for (double& v : h)
        v *= g;
    return h;
}

std::vector<cd> pulse_shape(const std::vector<cd>& symbols, const ShapingConfig& cfg) {
    if (symbols.empty())
        throw EmptyInput("pulse_shape: empty symbol sequence");
    const std::vector<double> h = rrc_taps(cfg);
    const int sps = cfg.samples_per_symbol;
    const int delay = cfg.filter_span_symbols * sps / 2;
    const size_t nout = symbols.size() * static_cast<size_t>(sps);
    std::vector<cd> out(nout, cd(0.0, 0.0));
    // y[n] = sum_k h[k] * up[n + delay - k], up[i] = symbols[i/sps] at i%sps==0
    // Iterate over symbols (sparse upsampled input) instead of taps.
    for (size_t s = 0; s < symbols.size(); ++s) {
        const cd sym = symbols[s];
        const long base = static_cast<long>(s) * sps; // position of the impulse
        for (long k = 0; k < static_cast<long>(h.size()); ++k) {
            const long n = base + k - delay;
            if (n >= 0 && n < static_cast<long>(nout))
                out[static_cast<size_t>(n)] += sym * h[static_cast<size_t>(k)];
        }
    }
    return out;
}

std::vector<cd> matched_filter_symbols(const std::vector<cd>& frame, const ShapingConfig& cfg) {
    if (frame.empty())
        throw EmptyInput("matched_filter_symbols: empty frame");
    const std::vector<double> h = rrc_taps(cfg);
    const int sps = cfg.samples_per_symbol;
    const int delay = cfg.filter_span_symbols * sps / 2;
    const size_t nsym = frame.size() / static_cast<size_t>(sps);
    std::vector<cd> sym(nsym, cd(0.0, 0.0));
    for (size_t s = 0; s < nsym; ++s) {
        const long center = static_cast<long>(s) * sps;
        cd acc(0.0, 0.0);
        for (long k = 0; k < static_cast<long>(h.size()); ++k) {
            const long n = center + delay - k;
            if (n >= 0 && n < static_cast<long>(frame.size()))
                acc += frame[static_cast<size_t>(n)] * h[static_cast<size_t>(k)];
        }
        sym[s] = acc;
    }
    return sym;
}

LabeledFrame synthesize_frame(Mod m, const ShapingConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (kFrameLen % static_cast<size_t>(cfg.samples_per_symbol) != 0)
        throw Error(ExitCode::data, "frame length not divisible by samples_per_symbol");
    const size_t nsym = kFrameLen / static_cast<size_t>(cfg.samples_per_symbol);
    const int bps = bits_per_symbol(m);

    Rng rng(seed);
    std::vector<uint8_t> bits(nsym * static_cast<size_t>(bps));
    for (uint8_t& b : bits)
        b = static_cast<uint8_t>(rng.bit());

    std::vector<cd> shaped = pulse_shape(modulate(bits, m), cfg);
    normalize_rms(shaped);

    LabeledFrame f;
    f.samples = std::move(shaped);
    f.label = m;
    f.seed = seed;
    f.rms = rms(f.samples);
    return f;
}

} // namespace risamc::sig
