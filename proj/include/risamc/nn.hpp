#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "risamc/sigsynth.hpp"

namespace risamc::nn {

// Six conv blocks (conv -> batchnorm -> relu -> maxpool/2) and one
// fully-connected softmax head by default. Filter counts, kernel width and
// input length are configurable; tests use smaller variants.
struct Architecture {
    int in_channels = 2;
    int input_len = static_cast<int>(sig::kFrameLen);
    std::vector<int> conv_filters = {16, 24, 32, 48, 64, 96};
    int kernel = 8;
    int num_classes = static_cast<int>(sig::kNumClasses);
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    int blocks() const { return static_cast<int>(conv_filters.size()); }
    int out_len() const { return input_len >> blocks(); }
    int fc_inputs() const {
        return conv_filters.empty() ? in_channels * input_len
                                    : conv_filters.back() * out_len();
    }
    int64_t parameter_count() const;
    void validate() const;
};

struct EpochStats {
    int epoch = 0; // 1-based
    int iterations = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

template <typename S>
struct Model {
    Architecture arch;
    struct Block {
        std::vector<S> w; // [filters, in_ch * kernel], row-major; no bias (BN follows)
        std::vector<S> gamma, beta;        // [filters]
        std::vector<S> run_mean, run_var;  // [filters]
    };
    std::vector<Block> blocks;
    std::vector<S> fc_w; // [num_classes, fc_inputs], row-major
    std::vector<S> fc_b; // [num_classes]
    std::vector<EpochStats> history;
};

template <typename S>
struct NamedParam {
    std::string name;
    std::vector<S>* data;
    std::vector<int64_t> shape;
};

template <typename S>
std::vector<NamedParam<S>> trainable_params(Model<S>& m);
template <typename S>
std::vector<NamedParam<S>> state_buffers(Model<S>& m); // batchnorm running stats

// He-uniform conv/FC weights, gamma = 1, beta = 0, deterministic per seed.
template <typename S>
Model<S> build_model(const Architecture& arch, uint64_t seed);

enum class Mode { train, infer };

// Probabilities, row-major [batch, num_classes]. x is [batch, in_channels,
// input_len] row-major. Train mode uses batch statistics (running stats are
// not touched); infer mode uses running statistics.
template <typename S>
std::vector<S> forward(const Model<S>& m, std::span<const S> x, int64_t batch, Mode mode);

struct TrainConfig {
    int batch_size = 256;
    double initial_lr = 0.02;
    double momentum = 0.9;
    double lr_drop_factor = 10.0;
    int lr_drop_period_epochs = 9;
    int max_epochs = 12;
    uint64_t shuffle_seed = 0x5eed;

    void validate() const;
};

struct TrainData {
    int64_t n = 0;
    int64_t channels = 2;
    int64_t len = static_cast<int64_t>(sig::kFrameLen);
    std::vector<float> x; // [n, channels, len] row-major
    std::vector<int> labels;
};

TrainData to_train_data(const std::vector<sig::LabeledFrame>& frames,
                        const std::vector<size_t>& indices);
TrainData to_train_data(const std::vector<sig::LabeledFrame>& frames);

struct TrainResult {
    Model<float> final_model;
    Model<float> best; // highest validation accuracy checkpoint
};

// Mini-batch cross-entropy SGDM with the piecewise-constant LR schedule.
// Iterations per epoch = floor(n_train / batch_size) (the trailing partial
// batch is dropped; shuffling re-covers it across epochs). Throws
// NonFiniteLoss with the offending global batch index.
TrainResult train(const Model<float>& init, const TrainData& train_set,
                  const TrainData& val_set, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

struct GradCheckResult {
    double max_rel_error = 0.0;
    int64_t checked = 0;
    int64_t kink_resamples = 0;
};

// Central finite differences (step 1e-4) against the analytic gradients on a
// seeded random subset of each parameter tensor. Evaluations that land on a
// ReLU/maxpool kink (activation mask changes between the +-h points) are
// resampled; the result reports how many.
GradCheckResult gradient_check(const Model<double>& m, std::span<const double> x,
                               std::span<const int> labels, int64_t batch,
                               int samples_per_tensor = 15, uint64_t seed = 1234);

// Mean cross-entropy of one batch in train mode; helper for descent tests.
// When update is non-null performs one SGDM step with the given velocities.
double sgdm_step(Model<float>& m, std::span<const float> x, std::span<const int> labels,
                 int64_t batch, double lr, double momentum,
                 std::vector<std::vector<float>>* velocities);

// Reusable inference engine (buffers survive across calls).
class Predictor {
public:
    explicit Predictor(const Model<float>& m);
    ~Predictor();
    Predictor(const Predictor&) = delete;
    Predictor& operator=(const Predictor&) = delete;

    // Classes for a batch of frames (frames are RMS-normalized first).
    std::vector<int> classify(std::span<const sig::LabeledFrame> frames);
    // Row-major [n, num_classes] probabilities.
    std::vector<float> probabilities(std::span<const sig::LabeledFrame> frames);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// argmax with lowest-index tie break; probabilities as doubles.
std::pair<int, std::array<double, 5>> predict(const Model<float>& m,
                                              const sig::LabeledFrame& frame);

struct ConfusionMatrix {
    std::array<std::array<int64_t, 5>, 5> counts{}; // [truth][prediction]
    int64_t total() const;
    int64_t trace() const;
    double accuracy() const;
};

ConfusionMatrix evaluate(const Model<float>& m, std::span<const sig::LabeledFrame> frames);

extern template struct Model<float>;
extern template struct Model<double>;
extern template Model<float> build_model<float>(const Architecture&, uint64_t);
extern template Model<double> build_model<double>(const Architecture&, uint64_t);
extern template std::vector<float> forward<float>(const Model<float>&, std::span<const float>,
                                                  int64_t, Mode);
extern template std::vector<double> forward<double>(const Model<double>&, std::span<const double>,
                                                    int64_t, Mode);
extern template std::vector<NamedParam<float>> trainable_params<float>(Model<float>&);
extern template std::vector<NamedParam<double>> trainable_params<double>(Model<double>&);
extern template std::vector<NamedParam<float>> state_buffers<float>(Model<float>&);
extern template std::vector<NamedParam<double>> state_buffers<double>(Model<double>&);

} // namespace risamc::nn
