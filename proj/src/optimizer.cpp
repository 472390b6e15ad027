#include "risamc/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "risamc/error.hpp"

namespace risamc::opt {

std::string_view target_name(Target t) {
    switch (t) {
    case Target::user1: return "user1";
    case Target::user2: return "user2";
    case Target::joint_min: return "joint-min";
    case Target::joint_mean: return "joint-mean";
    }
    throw Error(ExitCode::data, "unknown target");
}

Target target_from_name(std::string_view name) {
    for (Target t : {Target::user1, Target::user2, Target::joint_min, Target::joint_mean})
        if (target_name(t) == name)
            return t;
    throw FormatError("unknown optimization target: " + std::string(name));
}

double ObjectiveBase::value(const ris::RisConfig& cfg) {
    const std::string key = cfg.to_hex();
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end())
            return it->second;
    }
    const double v = compute(cfg);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto [it, inserted] = cache_.emplace(key, v);
        if (inserted) {
            visited_.push_back(key);
            ++evals_;
        }
        return it->second;
    }
}

double ObjectiveBase::cached_value(const ris::RisConfig& cfg) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(cfg.to_hex());
    return it == cache_.end() ? std::nan("") : it->second;
}

GainObjective::GainObjective(const ris::SceneGeometry& g, ris::User u)
    : terms_(ris::cascade_terms(g, u)) {}

double GainObjective::compute(const ris::RisConfig& cfg) {
    return std::abs(ris::cascaded_gain(cfg, terms_));
}

AccuracyObjective::AccuracyObjective(BatchClassifier classify, const ris::SceneGeometry& g,
                                     const chan::ImpairmentProfile& profile,
                                     const sig::ShapingConfig& shaping,
                                     const AccuracyObjectiveConfig& cfg)
    : classify_(std::move(classify)), geom_(g), profile_(profile), cfg_(cfg),
      redraw_rng_(derive_seed(cfg.run_seed, {0xDEADull})) {
    profile_.validate();
    const int fpc = cfg_.eval_frames_per_class;
    if (fpc <= 0)
        throw Error(ExitCode::data, "eval_frames_per_class must be positive");
    users_[0].terms = ris::cascade_terms(g, ris::User::user1);
    users_[1].terms = ris::cascade_terms(g, ris::User::user2);

    // Fixed evaluation frames; the fading/offset prefix and the unit noise
    // vector are drawn once per (frame, user) from seeds derived from the
    // run seed, mirroring the draw order of the direct impair() chain.
    const size_t total = sig::kNumClasses * static_cast<size_t>(fpc);
    labels_.resize(total);
    for (int u = 0; u < 2; ++u) {
        users_[static_cast<size_t>(u)].prefix.resize(total);
        users_[static_cast<size_t>(u)].noise.resize(total);
        users_[static_cast<size_t>(u)].prefix_power.resize(total);
    }
    for (size_t c = 0; c < sig::kNumClasses; ++c) {
        for (int i = 0; i < fpc; ++i) {
            const size_t idx = c * static_cast<size_t>(fpc) + static_cast<size_t>(i);
            labels_[idx] = static_cast<int>(c);
            const sig::LabeledFrame clean = sig::synthesize_frame(
                sig::kAllMods[c], shaping,
                derive_seed(cfg_.run_seed, {c, static_cast<uint64_t>(i), 0}));
            for (int u = 0; u < 2; ++u) {
                Rng rng(derive_seed(cfg_.run_seed,
                                    {c, static_cast<uint64_t>(i), 1, static_cast<uint64_t>(u)}));
                sig::LabeledFrame pre = chan::apply_rician(
                    clean, profile_.rician_k, profile_.max_doppler_hz,
                    profile_.sample_rate_hz, rng);
                pre = chan::apply_clock_offset(pre, profile_.clock_offset_ppm,
                                               profile_.carrier_freq_hz,
                                               profile_.sample_rate_hz);
                auto& ud = users_[static_cast<size_t>(u)];
                ud.prefix_power[idx] = mean_power(pre.samples);
                std::vector<cd> noise(pre.samples.size());
                for (cd& nv : noise)
                    nv = rng.cgaussian();
                ud.prefix[idx] = std::move(pre.samples);
                ud.noise[idx] = std::move(noise);
            }
        }
    }
}

size_t AccuracyObjective::num_pixels() const { return users_[0].terms.size(); }

double AccuracyObjective::received_snr_db(const ris::RisConfig& cfg, ris::User u) const {
    const auto& ud = users_[static_cast<size_t>(u)];
    const cd h = ris::cascaded_gain(cfg, ud.terms);
    return ris::snr_from_gain_db(geom_, u, std::abs(h));
}

double AccuracyObjective::compute_user(const ris::RisConfig& cfg, int u) {
    auto& ud = users_[static_cast<size_t>(u)];
    const cd h = ris::cascaded_gain(cfg, ud.terms);
    const double abs_h = std::abs(h);
    const cd phase = abs_h > 0.0 ? h / abs_h : cd(1.0, 0.0);
    const double snr_db = std::max(
        ris::snr_from_gain_db(geom_, u == 0 ? ris::User::user1 : ris::User::user2, abs_h),
        ris::kSnrFloorDb);
    const double snr_lin = db_to_lin(snr_db);

    const size_t total = labels_.size();
    if (cfg_.redraw_noise) {
        for (size_t f = 0; f < total; ++f)
            for (cd& v : ud.noise[f])
                v = redraw_rng_.cgaussian();
    }
    std::vector<sig::LabeledFrame> frames(total);
#pragma omp parallel for schedule(static)
    for (size_t f = 0; f < total; ++f) {
        const double sigma = std::sqrt(ud.prefix_power[f] / snr_lin);
        std::vector<cd> y(ud.prefix[f].size());
        for (size_t n = 0; n < y.size(); ++n)
            y[n] = ud.prefix[f][n] * phase + sigma * ud.noise[f][n];
        normalize_rms(y);
        frames[f].samples = std::move(y);
        frames[f].label = static_cast<sig::Mod>(labels_[f]);
    }
    const std::vector<int> cls = classify_(frames);
    int64_t correct = 0;
    for (size_t f = 0; f < total; ++f)
        if (cls[f] == labels_[f])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(total);
}

double AccuracyObjective::user_accuracy(const ris::RisConfig& cfg, ris::User u) {
    const size_t ui = static_cast<size_t>(u);
    const std::string key = cfg.to_hex();
    {
        std::lock_guard<std::mutex> lock(user_mu_);
        auto it = user_cache_[ui].find(key);
        if (it != user_cache_[ui].end())
            return it->second;
    }
    const double v = compute_user(cfg, static_cast<int>(ui));
    std::lock_guard<std::mutex> lock(user_mu_);
    return user_cache_[ui].emplace(key, v).first->second;
}

std::pair<double, double> AccuracyObjective::both_accuracies(const ris::RisConfig& cfg) {
    return {user_accuracy(cfg, ris::User::user1), user_accuracy(cfg, ris::User::user2)};
}

double AccuracyObjective::cached_user_accuracy(const ris::RisConfig& cfg, ris::User u) const {
    std::lock_guard<std::mutex> lock(user_mu_);
    const auto& m = user_cache_[static_cast<size_t>(u)];
    auto it = m.find(cfg.to_hex());
    return it == m.end() ? std::nan("") : it->second;
}

double AccuracyObjective::compute(const ris::RisConfig& cfg) {
    switch (cfg_.target) {
    case Target::user1: return user_accuracy(cfg, ris::User::user1);
    case Target::user2: return user_accuracy(cfg, ris::User::user2);
    case Target::joint_min: {
        auto [a1, a2] = both_accuracies(cfg);
        return std::min(a1, a2);
    }
    case Target::joint_mean: {
        auto [a1, a2] = both_accuracies(cfg);
        return 0.5 * (a1 + a2);
    }
    }
    throw Error(ExitCode::data, "unknown target");
}

namespace {

struct Tracer {
    OptimizationResult& res;
    int64_t iter = 0;

    double eval(ObjectiveBase& obj, const ris::RisConfig& cfg) {
        const double v = obj.value(cfg);
        ++iter;
        if (v > res.best_value) {
            res.best_value = v;
            res.best_config = cfg;
        }
        res.trace.push_back({iter, cfg.to_hex(), v, res.best_value});
        return v;
    }
};

} // namespace

OptimizationResult random_search(ObjectiveBase& obj, int n_samples, Rng& rng) {
    if (n_samples < 1)
        throw Error(ExitCode::data, "random_search: n_samples must be >= 1");
    OptimizationResult res;
    Tracer tr{res};
    const int64_t before = obj.evaluations();
    for (int i = 0; i < n_samples; ++i)
        tr.eval(obj, ris::RisConfig::random(obj.num_pixels(), rng));
    res.evaluations = obj.evaluations() - before;
    return res;
}

OptimizationResult greedy_bitflip(ObjectiveBase& obj, const ris::RisConfig& init,
                                  const GreedyOptions& opts, Rng& rng) {
    if (opts.max_sweeps < 1)
        throw Error(ExitCode::data, "greedy_bitflip: max_sweeps must be >= 1");
    OptimizationResult res;
    Tracer tr{res};
    const int64_t before = obj.evaluations();
    const size_t n = obj.num_pixels();
    auto budget_left = [&] { return obj.evaluations() - before < opts.eval_budget; };

    ris::RisConfig start = init;
    // warm start: best of a random sample
    if (opts.warmup_samples > 0) {
        double best_w = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < opts.warmup_samples && budget_left(); ++i) {
            ris::RisConfig c = (i == 0) ? init : ris::RisConfig::random(n, rng);
            const double v = tr.eval(obj, c);
            if (v > best_w) {
                best_w = v;
                start = c;
            }
        }
    }

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i)
        order[i] = i;

    for (int pass = 0; pass <= opts.restarts && budget_left(); ++pass) {
        ris::RisConfig cur = (pass == 0) ? start : ris::RisConfig::random(n, rng);
        double cur_v = tr.eval(obj, cur);
        for (int sweep = 0; sweep < opts.max_sweeps && budget_left(); ++sweep) {
            rng.shuffle(order);
            bool improved = false;
            for (size_t i = 0; i < n && budget_left(); ++i) {
                cur.flip(order[i]);
                const double v = tr.eval(obj, cur);
                if (v > cur_v) {
                    cur_v = v;
                    improved = true;
                } else {
                    cur.flip(order[i]); // revert
                }
            }
            if (!improved)
                break; // 1-flip local optimum for this pass
        }
    }
    res.evaluations = obj.evaluations() - before;
    return res;
}

OptimizationResult exhaustive(ObjectiveBase& obj, const ris::RisConfig& base,
                              const std::vector<int>& free_bits) {
    if (free_bits.size() > 20)
        throw SubsetTooLarge("exhaustive: " + std::to_string(free_bits.size()) +
                             " free bits exceeds the limit of 20");
    OptimizationResult res;
    Tracer tr{res};
    const int64_t before = obj.evaluations();
    const uint64_t count = 1ull << free_bits.size();
    ris::RisConfig cfg = base;
    for (uint64_t v = 0; v < count; ++v) {
        for (size_t b = 0; b < free_bits.size(); ++b)
            cfg.set(static_cast<size_t>(free_bits[b]), static_cast<int>((v >> b) & 1ull));
        tr.eval(obj, cfg);
    }
    res.evaluations = obj.evaluations() - before;
    return res;
}

std::vector<PairRow> multi_user_sweep(AccuracyObjective& obj,
                                      const std::vector<ris::RisConfig>& cfgs) {
    std::vector<PairRow> rows;
    rows.reserve(cfgs.size());
    for (const ris::RisConfig& c : cfgs) {
        auto [a1, a2] = obj.both_accuracies(c);
        rows.push_back({c.to_hex(), a1, a2});
    }
    return rows;
}

} // namespace risamc::opt
