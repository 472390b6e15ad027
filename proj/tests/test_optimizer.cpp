#include <doctest.h>

#include <algorithm>

#include "risamc/error.hpp"
#include "risamc/optimizer.hpp"
#include "test_util.hpp"

using namespace risamc;
using namespace risamc::opt;

namespace {

// Deterministic stand-in for the trained CNN: matched-filter symbols, best
// constant phase over a grid, EVM against the true constellation. Confident
// frames get the true label, noise-dominated frames collapse to 64QAM, which
// pins chance-level accuracy at 0.2 like a saturated classifier.
struct EvmStubClassifier {
    sig::ShapingConfig shaping;
    double evm_threshold = 0.35;

    std::vector<int> operator()(const std::vector<sig::LabeledFrame>& frames) const {
        std::vector<int> out(frames.size());
        for (size_t i = 0; i < frames.size(); ++i) {
            const sig::Mod truth = frames[i].label;
            std::vector<cd> syms = sig::matched_filter_symbols(frames[i].samples, shaping);
            syms.erase(syms.begin(), syms.begin() + 4);
            syms.resize(syms.size() - 4);
            double p = 0.0;
            for (const cd& s : syms)
                p += std::norm(s);
            const double scale = std::sqrt(p / static_cast<double>(syms.size()));
            const sig::ConstellationMap map = sig::gray_constellation(truth);
            double best_evm = 1e300;
            for (int k = 0; k < 64; ++k) {
                const double ph = 2.0 * kPi * k / 64.0;
                const cd rot(std::cos(ph), std::sin(ph));
                double err = 0.0;
                for (const cd& s : syms) {
                    const cd y = s * rot / scale;
                    double d = 1e300;
                    for (const cd& c : map.points)
                        d = std::min(d, std::norm(y - c));
                    err += d;
                }
                best_evm = std::min(best_evm, std::sqrt(err / static_cast<double>(syms.size())));
            }
            out[i] = best_evm < evm_threshold ? static_cast<int>(truth)
                                              : static_cast<int>(sig::Mod::qam64);
        }
        return out;
    }
};

chan::ImpairmentProfile clean_profile() {
    chan::ImpairmentProfile p;
    p.rician_k = chan::kRicianLosOnly;
    p.clock_offset_ppm = 0.0;
    return p;
}

AccuracyObjectiveConfig small_cfg(Target t, uint64_t seed) {
    AccuracyObjectiveConfig c;
    c.target = t;
    c.eval_frames_per_class = 5;
    c.run_seed = seed;
    return c;
}

} // namespace

TEST_CASE("gain objective: caching, determinism, evaluation counting") {
    ris::SceneGeometry g = ris::SceneGeometry::toy(12);
    GainObjective obj(g, ris::User::user1);
    Rng rng(1);
    const ris::RisConfig c = ris::RisConfig::random(12, rng);
    const double v1 = obj.value(c);
    CHECK(obj.evaluations() == 1);
    const double v2 = obj.value(c); // served from cache
    CHECK(obj.evaluations() == 1);
    CHECK(v1 == v2);
    // recomputation through a fresh instance matches the cached value
    GainObjective obj2(g, ris::User::user1);
    CHECK(obj2.value(c) == v1);
    CHECK(std::isnan(obj.cached_value(ris::RisConfig(12))));
}

TEST_CASE("random_search basics") {
    ris::SceneGeometry g = ris::SceneGeometry::toy(8);
    GainObjective obj(g, ris::User::user1);
    Rng rng(2);
    const OptimizationResult one = random_search(obj, 1, rng);
    CHECK(one.trace.size() == 1);
    CHECK(one.best_value == one.trace[0].value);

    const OptimizationResult res = random_search(obj, 200, rng);
    CHECK(res.trace.size() == 200);
    for (size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i].best >= res.trace[i - 1].best);

    // exhaustive distribution oracle: best-of-200 lands in the top 5%
    GainObjective full(g, ris::User::user1);
    std::vector<int> bits(8);
    for (int i = 0; i < 8; ++i)
        bits[static_cast<size_t>(i)] = i;
    const OptimizationResult ex = exhaustive(full, ris::RisConfig(8), bits);
    std::vector<double> values;
    for (const auto& tp : ex.trace)
        values.push_back(tp.value);
    std::sort(values.begin(), values.end());
    const double q95 = values[static_cast<size_t>(0.95 * (values.size() - 1))];
    CHECK(res.best_value >= q95);
}

TEST_CASE("exhaustive: limits and dominance") {
    ris::SceneGeometry g = ris::SceneGeometry::toy(4);
    GainObjective obj(g, ris::User::user2);
    CHECK_THROWS_AS((void)exhaustive(obj, ris::RisConfig(24), std::vector<int>(21, 0)),
                    SubsetTooLarge);

    const OptimizationResult two = exhaustive(obj, ris::RisConfig(4), {2});
    CHECK(two.trace.size() == 2);

    std::vector<int> all = {0, 1, 2, 3};
    const OptimizationResult ex = exhaustive(obj, ris::RisConfig(4), all);
    CHECK(ex.trace.size() == 16);
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        const OptimizationResult rs = random_search(obj, 10, rng);
        CHECK(ex.best_value >= rs.best_value);
    }
}

TEST_CASE("greedy from an already-optimal start: zero flips, one sweep") {
    ris::SceneGeometry g = ris::SceneGeometry::toy(10);
    GainObjective probe(g, ris::User::user1);
    std::vector<int> all(10);
    for (int i = 0; i < 10; ++i)
        all[static_cast<size_t>(i)] = i;
    const OptimizationResult ex = exhaustive(probe, ris::RisConfig(10), all);

    GainObjective obj(g, ris::User::user1);
    Rng rng(4);
    GreedyOptions opts;
    opts.max_sweeps = 8;
    const OptimizationResult res = greedy_bitflip(obj, ex.best_config, opts, rng);
    CHECK(res.best_value == doctest::Approx(ex.best_value).epsilon(1e-12));
    CHECK(res.best_config == ex.best_config);
    // initial evaluation + one full verification sweep, nothing accepted
    CHECK(res.trace.size() == 11);
    CHECK(res.evaluations == 11);
}

TEST_CASE("greedy matches exhaustive on 20 random toy geometries") {
    Rng geo_rng(5);
    for (int inst = 0; inst < 20; ++inst) {
        ris::SceneGeometry g = ris::SceneGeometry::toy(12);
        g.tx_el_deg = geo_rng.uniform(60.0, 120.0);
        g.user1_el_deg = geo_rng.uniform(40.0, 140.0);
        g.tx_distance_m = geo_rng.uniform(0.8, 2.5);
        g.user1_distance_m = geo_rng.uniform(0.8, 3.5);

        std::vector<int> all(12);
        for (int i = 0; i < 12; ++i)
            all[static_cast<size_t>(i)] = i;
        GainObjective obj_ex(g, ris::User::user1);
        const OptimizationResult ex = exhaustive(obj_ex, ris::RisConfig(12), all);

        GainObjective obj_gr(g, ris::User::user1);
        Rng rng(static_cast<uint64_t>(100 + inst));
        GreedyOptions opts;
        opts.max_sweeps = 50;
        opts.restarts = 15;
        const OptimizationResult gr =
            greedy_bitflip(obj_gr, ris::RisConfig::random(12, rng), opts, rng);

        CHECK(gr.best_value == doctest::Approx(ex.best_value).epsilon(1e-12));
        CHECK(ex.best_value >= gr.best_value - 1e-15); // oracle dominance
        for (size_t i = 1; i < gr.trace.size(); ++i)
            CHECK(gr.trace[i].best >= gr.trace[i - 1].best);
    }
}

TEST_CASE("greedy respects the evaluation budget") {
    ris::SceneGeometry g = ris::SceneGeometry::toy(16);
    GainObjective obj(g, ris::User::user1);
    Rng rng(6);
    GreedyOptions opts;
    opts.max_sweeps = 100;
    opts.restarts = 100;
    opts.warmup_samples = 10;
    opts.eval_budget = 40;
    const OptimizationResult res =
        greedy_bitflip(obj, ris::RisConfig::random(16, rng), opts, rng);
    CHECK(res.evaluations <= 40);
}

TEST_CASE("accuracy objective equals the direct apply_channel path") {
    ris::SceneGeometry g;
    const chan::ImpairmentProfile profile = clean_profile();
    EvmStubClassifier stub;
    AccuracyObjective obj(stub, g, profile, sig::ShapingConfig{},
                          small_cfg(Target::user1, 77));
    Rng cfg_rng(7);
    for (int trial = 0; trial < 3; ++trial) {
        const ris::RisConfig cfg = ris::RisConfig::random(obj.num_pixels(), cfg_rng);
        const double from_obj = obj.value(cfg);

        // direct path: synthesize the same frames, run apply_channel with the
        // same derived seeds, classify with the same stub
        std::vector<sig::LabeledFrame> frames;
        for (size_t c = 0; c < sig::kNumClasses; ++c)
            for (int i = 0; i < 5; ++i) {
                const sig::LabeledFrame clean = sig::synthesize_frame(
                    sig::kAllMods[c], {}, derive_seed(77, {c, static_cast<uint64_t>(i), 0}));
                Rng rng(derive_seed(77, {c, static_cast<uint64_t>(i), 1, 0}));
                frames.push_back(
                    ris::apply_channel(clean, cfg, g, ris::User::user1, profile, rng));
            }
        const std::vector<int> cls = stub(frames);
        int correct = 0;
        for (size_t i = 0; i < frames.size(); ++i)
            if (cls[i] == static_cast<int>(frames[i].label))
                ++correct;
        const double direct = static_cast<double>(correct) / static_cast<double>(frames.size());
        CHECK(from_obj == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("accuracy objective: saturation high, chance low") {
    ris::SceneGeometry g; // placeholder budget: aligned config ~18 dB
    EvmStubClassifier stub;
    AccuracyObjective obj(stub, g, clean_profile(), sig::ShapingConfig{},
                          small_cfg(Target::user1, 78));
    // per-pixel aligned configuration: high SNR, accuracy >= 0.95
    const std::vector<cd> terms = ris::cascade_terms(g, ris::User::user1);
    ris::RisConfig aligned(terms.size());
    for (size_t i = 0; i < terms.size(); ++i)
        aligned.set(i, terms[i].real() >= 0.0 ? 0 : 1);
    CHECK(obj.received_snr_db(aligned, ris::User::user1) >= 15.0);
    CHECK(obj.value(aligned) >= 0.95);
    // typical random configurations sit at chance
    Rng rng(8);
    double acc_sum = 0.0;
    for (int i = 0; i < 5; ++i)
        acc_sum += obj.value(ris::RisConfig::random(terms.size(), rng));
    CHECK(acc_sum / 5.0 == doctest::Approx(0.2).epsilon(0.5)); // 0.1 .. 0.3
}

TEST_CASE("joint targets combine per-user accuracies") {
    ris::SceneGeometry g;
    EvmStubClassifier stub;
    AccuracyObjective jmin(stub, g, clean_profile(), sig::ShapingConfig{},
                           small_cfg(Target::joint_min, 79));
    AccuracyObjective jmean(stub, g, clean_profile(), sig::ShapingConfig{},
                            small_cfg(Target::joint_mean, 79));
    Rng rng(9);
    const ris::RisConfig cfg = ris::RisConfig::random(jmin.num_pixels(), rng);
    auto [a1, a2] = jmin.both_accuracies(cfg);
    CHECK(jmin.value(cfg) == doctest::Approx(std::min(a1, a2)));
    CHECK(jmean.value(cfg) == doctest::Approx(0.5 * (a1 + a2)));
}

TEST_CASE("multi-user sweep: impossible threshold yields an empty pass set") {
    ris::SceneGeometry g;
    EvmStubClassifier stub;
    AccuracyObjective obj(stub, g, clean_profile(), sig::ShapingConfig{},
                          small_cfg(Target::joint_min, 80));
    Rng rng(10);
    std::vector<ris::RisConfig> cfgs;
    for (int i = 0; i < 5; ++i)
        cfgs.push_back(ris::RisConfig::random(obj.num_pixels(), rng));
    const std::vector<PairRow> rows = multi_user_sweep(obj, cfgs);
    CHECK(rows.size() == 5);
    int above = 0;
    for (const auto& r : rows)
        if (std::min(r.acc_user1, r.acc_user2) > 1.01)
            ++above;
    CHECK(above == 0);
}

TEST_CASE("symmetric toy geometry: per-user accuracies indistinguishable") {
    // mirrored users at equal distance and equal budget: acc1 and acc2 are
    // identically distributed; two-sample KS over 100 random configs
    ris::SceneGeometry g = ris::SceneGeometry::toy(10);
    g.tx_el_deg = 90.0;
    g.user1_el_deg = 70.0;
    g.user2_el_deg = 110.0;
    g.user1_distance_m = 1.5;
    g.user2_distance_m = 1.5;
    g.rx_gain_db = {45.0, 45.0};
    g.noise_floor_dbm = {-42.0, -42.0};
    EvmStubClassifier stub;
    AccuracyObjective obj(stub, g, clean_profile(), sig::ShapingConfig{},
                          small_cfg(Target::joint_mean, 81));
    Rng rng(11);
    std::vector<double> a1s, a2s;
    for (int i = 0; i < 100; ++i) {
        const ris::RisConfig cfg = ris::RisConfig::random(10, rng);
        auto [a1, a2] = obj.both_accuracies(cfg);
        a1s.push_back(a1);
        a2s.push_back(a2);
    }
    CHECK(testutil::ks_test_p(a1s, a2s) > 0.01);
}

TEST_CASE("target name round trip") {
    for (Target t : {Target::user1, Target::user2, Target::joint_min, Target::joint_mean})
        CHECK(target_from_name(target_name(t)) == t);
    CHECK_THROWS_AS((void)target_from_name("bogus"), FormatError);
}
