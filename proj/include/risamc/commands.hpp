#pragma once

#include <optional>
#include <ostream>
#include <string>

#include <cstdint>

namespace risamc::cmd {

struct GenOptions {
    std::string scenario;
    std::string out_dir;
    std::optional<int> frames_per_class;
    std::optional<uint64_t> seed;
    std::optional<double> snr_db;
};
int run_gen(const GenOptions& opt, std::ostream& log);

struct TrainOptions {
    std::string scenario;
    std::string dataset;
    std::string out_dir;
    std::optional<uint64_t> seed;
    std::optional<int> max_epochs;
    std::optional<int> batch_size;
};
int run_train(const TrainOptions& opt, std::ostream& log);

struct EvaluateOptions {
    std::string checkpoint;
    std::string out_dir;
    // dataset mode
    std::string dataset;
    std::string split = "test";
    // channel mode
    std::string scenario;
    std::string config_hex;
    int user = 1;
    std::optional<int> frames_per_class;
    uint64_t seed = 99;
};
int run_evaluate(const EvaluateOptions& opt, std::ostream& log);

struct OptimizeOptions {
    std::string checkpoint;
    std::string scenario;
    std::string out_dir;
    std::string target = "all"; // all | user1 | user2 | joint-min | joint-mean
    std::string strategy = "greedy";
    std::optional<int64_t> budget;
    std::optional<int> warmup;
    std::optional<int> max_sweeps;
    std::optional<int> eval_frames_per_class;
    uint64_t seed = 7;
};
int run_optimize(const OptimizeOptions& opt, std::ostream& log);

struct SpectrogramOptions {
    std::string input;
    int record = 0;
    std::string out;
};
int run_spectrogram(const SpectrogramOptions& opt, std::ostream& log);

} // namespace risamc::cmd
