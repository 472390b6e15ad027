#pragma once

#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "risamc/ris.hpp"

namespace risamc::opt {

enum class Target : int { user1 = 0, user2 = 1, joint_min = 2, joint_mean = 3 };

std::string_view target_name(Target t);
Target target_from_name(std::string_view name);

// Cached objective over RIS configurations. value() is deterministic within
// one instance (fixed evaluation seeds); every cache miss counts as one
// configuration evaluation.
class ObjectiveBase {
public:
    virtual ~ObjectiveBase() = default;

    double value(const ris::RisConfig& cfg);
    int64_t evaluations() const { return evals_; }
    virtual size_t num_pixels() const = 0;
    // configs in first-evaluation order
    const std::vector<std::string>& visited() const { return visited_; }
    // nan when the config has not been evaluated
    double cached_value(const ris::RisConfig& cfg) const;

protected:
    virtual double compute(const ris::RisConfig& cfg) = 0;

private:
    mutable std::mutex mu_;
    std::unordered_map<std::string, double> cache_;
    std::vector<std::string> visited_;
    int64_t evals_ = 0;
};

// SNR-proxy objective |h_u|: fast mode for oracle comparisons, where
// accuracy would saturate and hide channel differences.
class GainObjective : public ObjectiveBase {
public:
    GainObjective(const ris::SceneGeometry& g, ris::User u);
    size_t num_pixels() const override { return terms_.size(); }

protected:
    double compute(const ris::RisConfig& cfg) override;

private:
    std::vector<cd> terms_;
};

// Classifies a batch of channel-impaired frames into class indices.
using BatchClassifier =
    std::function<std::vector<int>(const std::vector<sig::LabeledFrame>&)>;

struct AccuracyObjectiveConfig {
    Target target = Target::user1;
    int eval_frames_per_class = 50;
    uint64_t run_seed = 42;
    // Re-draw the AWGN realization on every evaluation instead of scaling a
    // per-frame fixed noise vector (robustness studies; breaks determinism).
    bool redraw_noise = false;
};

// Classification accuracy through the RIS channel. The evaluation frame set
// and all impairment seeds are fixed per instance, so the objective is a
// deterministic function of the configuration. The fading/offset part of the
// chain does not depend on the configuration and is precomputed per frame;
// per evaluation only the cascade phase rotation, the noise scaling and the
// renormalization are applied (identical to the direct apply_channel path).
class AccuracyObjective : public ObjectiveBase {
public:
    AccuracyObjective(BatchClassifier classify, const ris::SceneGeometry& g,
                      const chan::ImpairmentProfile& profile,
                      const sig::ShapingConfig& shaping,
                      const AccuracyObjectiveConfig& cfg);

    size_t num_pixels() const override;
    // Per-user accuracy (cached independently of the target objective).
    double user_accuracy(const ris::RisConfig& cfg, ris::User u);
    std::pair<double, double> both_accuracies(const ris::RisConfig& cfg);
    // nan when not evaluated for that user
    double cached_user_accuracy(const ris::RisConfig& cfg, ris::User u) const;
    double received_snr_db(const ris::RisConfig& cfg, ris::User u) const;
    const ris::SceneGeometry& geometry() const { return geom_; }

protected:
    double compute(const ris::RisConfig& cfg) override;

private:
    double compute_user(const ris::RisConfig& cfg, int u);

    BatchClassifier classify_;
    ris::SceneGeometry geom_;
    chan::ImpairmentProfile profile_;
    AccuracyObjectiveConfig cfg_;
    std::vector<int> labels_;
    struct UserData {
        std::vector<cd> terms;
        std::vector<std::vector<cd>> prefix; // faded + offset clean frames
        std::vector<std::vector<cd>> noise;  // unit-power CN base per frame
        std::vector<double> prefix_power;
    };
    std::array<UserData, 2> users_;
    std::array<std::unordered_map<std::string, double>, 2> user_cache_;
    mutable std::mutex user_mu_;
    Rng redraw_rng_;
};

struct TracePoint {
    int64_t iteration = 0; // 1-based evaluation counter within the run
    std::string cfg_hex;
    double value = 0.0;
    double best = 0.0;
};

struct OptimizationResult {
    ris::RisConfig best_config;
    double best_value = -std::numeric_limits<double>::infinity();
    std::vector<TracePoint> trace;
    int64_t evaluations = 0;
};

OptimizationResult random_search(ObjectiveBase& obj, int n_samples, Rng& rng);

struct GreedyOptions {
    int max_sweeps = 8;
    // Evaluate this many random configurations first and start the sweeps
    // from the best; lifts the start out of the flat chance-accuracy region.
    int warmup_samples = 0;
    int restarts = 0; // additional greedy passes from fresh random configs
    int64_t eval_budget = std::numeric_limits<int64_t>::max();
};

// Sweeps pixels in seeded random order, flipping a bit iff the objective
// strictly improves; a full sweep with no accepted flip terminates the pass.
OptimizationResult greedy_bitflip(ObjectiveBase& obj, const ris::RisConfig& init,
                                  const GreedyOptions& opts, Rng& rng);

// Global optimum over <= 20 free bits (others frozen at base).
OptimizationResult exhaustive(ObjectiveBase& obj, const ris::RisConfig& base,
                              const std::vector<int>& free_bits);

struct PairRow {
    std::string cfg_hex;
    double acc_user1 = 0.0;
    double acc_user2 = 0.0;
};

// Both users' accuracies for every configuration in the list.
std::vector<PairRow> multi_user_sweep(AccuracyObjective& obj,
                                      const std::vector<ris::RisConfig>& cfgs);

} // namespace risamc::opt
