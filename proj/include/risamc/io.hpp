#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "risamc/impairments.hpp"
#include "risamc/nn.hpp"
#include "risamc/optimizer.hpp"
#include "risamc/ris.hpp"

namespace risamc::io {

// Provenance stamped into every emitted artifact.
struct Provenance {
    uint64_t seed = 0;
    std::string scenario_fnv1a = "none"; // hex hash of the scenario file
};

// ---------------------------------------------------------------------------
// Scenario file: flat INI-style key=value text with sections per module.
// ---------------------------------------------------------------------------

struct OptimizerSettings {
    int eval_frames_per_class = 50;
    int report_frames_per_class = 100;
    int warmup_samples = 200;
    int max_sweeps = 8;
    int64_t eval_budget = 2000;
    double pair_threshold = 0.80;
};

struct Scenario {
    ris::SceneGeometry geometry;
    chan::ImpairmentProfile profile;
    sig::ShapingConfig shaping;
    nn::Architecture arch;
    nn::TrainConfig train;
    OptimizerSettings optimizer;
    int frames_per_class = 5000;
    double train_frac = 0.8, val_frac = 0.1, test_frac = 0.1;
    uint64_t master_seed = 1;

    chan::DatasetSpec dataset_spec() const;
};

Scenario parse_scenario(const std::string& path);
void write_scenario(const std::string& path, const Scenario& s);

// ---------------------------------------------------------------------------
// Dataset container: 32-byte header + records of 2048 complex samples as
// little-endian float32 interleaved I/Q, plus a text manifest sidecar.
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[9] = "RAMCDAT1";
inline constexpr size_t kDatasetHeaderBytes = 32;

std::string manifest_path_for(const std::string& bin_path);

class DatasetWriter {
public:
    DatasetWriter(const std::string& bin_path, uint64_t record_count, uint32_t samples_per_frame);
    void append(const sig::LabeledFrame& f, chan::Split split);
    // writes the manifest sidecar; call after all records are appended
    void finalize(const chan::DatasetSpec& spec, const Provenance& prov);

private:
    std::string bin_path_;
    uint64_t expect_ = 0;
    uint32_t spf_ = 0;
    std::vector<std::string> record_lines_;
    uint64_t written_ = 0;
    struct FileHandle;
    std::shared_ptr<FileHandle> out_;
};

struct LoadedDataset {
    std::vector<sig::LabeledFrame> frames;
    std::vector<chan::Split> splits;
    std::map<std::string, std::string> manifest; // raw key/value pairs
    uint64_t master_seed = 0;

    std::vector<size_t> indices(chan::Split s) const;
};

LoadedDataset read_dataset(const std::string& bin_path);

// ---------------------------------------------------------------------------
// Checkpoint container: magic + JSON descriptor (architecture, tensor
// directory, history, provenance) + raw little-endian float32 tensor data.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "RAMCCKP1";

void save_checkpoint(const std::string& path, const nn::Model<float>& m,
                     const Provenance& prov);
nn::Model<float> load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Tabular report emitters. All formats carry a magic first line, a format
// version, and provenance comments.
// ---------------------------------------------------------------------------

void write_history(const std::string& path, const std::vector<nn::EpochStats>& history,
                   const Provenance& prov);

void write_confusion(const std::string& path, const nn::ConfusionMatrix& cm,
                     const Provenance& prov,
                     const std::vector<std::pair<std::string, std::string>>& context = {});

// Columns: iteration, config hex, per-user instantaneous accuracy (nan when
// that user was not evaluated for the config), best-so-far of the target.
void write_trace(const std::string& path, const opt::OptimizationResult& res,
                 const opt::AccuracyObjective* pair_source, const Provenance& prov,
                 const std::vector<std::pair<std::string, std::string>>& context = {});

void write_multiuser_table(const std::string& path, const std::vector<opt::PairRow>& rows,
                           double threshold, const Provenance& prov);

// Short-time DFT magnitude grid: Hann window 128, hop 64, fftshifted bins,
// peak normalized to 1. Rows are time steps.
std::vector<std::vector<double>> compute_spectrogram(const std::vector<cd>& samples,
                                                     int window = 128, int hop = 64);

void write_spectrogram(const std::string& path, const std::vector<std::vector<double>>& grid,
                       double sample_rate_hz, const Provenance& prov);

} // namespace risamc::io
