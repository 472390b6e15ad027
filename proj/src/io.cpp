#include "risamc/io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "risamc/error.hpp"

namespace risamc::io {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_acc(double v) {
    if (std::isnan(v))
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; ++i)
        s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
        v = (v << 8) | p[i];
    return v;
}

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | p[i];
    return v;
}

// float32 little-endian (de)serialization independent of host byte order
void put_f32(std::string& s, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(s, v);
}

float get_f32(const unsigned char* p) {
    const uint32_t v = get_u32(p);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void write_provenance(std::ostream& os, const Provenance& prov) {
    os << "# seed = " << prov.seed << "\n";
    os << "# scenario_fnv1a = " << prov.scenario_fnv1a << "\n";
}

} // namespace

// ---------------------------------------------------------------------------
// Scenario file.
// ---------------------------------------------------------------------------

chan::DatasetSpec Scenario::dataset_spec() const {
    chan::DatasetSpec spec;
    spec.frames_per_class = frames_per_class;
    spec.train_frac = train_frac;
    spec.val_frac = val_frac;
    spec.test_frac = test_frac;
    spec.profile = profile;
    spec.shaping = shaping;
    spec.master_seed = master_seed;
    return spec;
}

namespace {

struct IniData {
    // section -> key -> value
    std::map<std::string, std::map<std::string, std::string>> kv;
};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

IniData parse_ini(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open scenario file: " + path);
    IniData ini;
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected key = value");
        ini.kv[section][trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return ini;
}

class SectionReader {
public:
    SectionReader(const IniData& ini, const std::string& section, const std::string& path)
        : path_(path), section_(section) {
        auto it = ini.kv.find(section);
        if (it != ini.kv.end())
            kv_ = &it->second;
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        if (!kv_)
            return;
        auto it = kv_->find(key);
        if (it == kv_->end())
            return;
        seen_.push_back(key);
        parse(it->second, out);
    }

    void check_unknown() const {
        if (!kv_)
            return;
        for (const auto& [k, v] : *kv_) {
            (void)v;
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw FormatError(path_ + ": unknown key '" + k + "' in section [" +
                                  section_ + "]");
        }
    }

private:
    void parse(const std::string& s, double& out) { out = std::stod(s); }
    void parse(const std::string& s, int& out) { out = std::stoi(s); }
    void parse(const std::string& s, int64_t& out) { out = std::stoll(s); }
    void parse(const std::string& s, uint64_t& out) { out = std::stoull(s); }
    void parse(const std::string& s, std::string& out) { out = s; }
    void parse(const std::string& s, std::vector<int>& out) {
        out.clear();
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            out.push_back(std::stoi(trim(item)));
    }

    const std::string path_;
    const std::string section_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::vector<std::string> seen_;
};

} // namespace

Scenario parse_scenario(const std::string& path) {
    const IniData ini = parse_ini(path);
    Scenario s;

    SectionReader g(ini, "geometry", path);
    g.get("tx_az_deg", s.geometry.tx_az_deg);
    g.get("tx_el_deg", s.geometry.tx_el_deg);
    g.get("user1_az_deg", s.geometry.user1_az_deg);
    g.get("user1_el_deg", s.geometry.user1_el_deg);
    g.get("user2_az_deg", s.geometry.user2_az_deg);
    g.get("user2_el_deg", s.geometry.user2_el_deg);
    g.get("tx_distance_m", s.geometry.tx_distance_m);
    g.get("user1_distance_m", s.geometry.user1_distance_m);
    g.get("user2_distance_m", s.geometry.user2_distance_m);
    g.get("tx_gain_db", s.geometry.tx_gain_db);
    g.get("rx_gain_user1_db", s.geometry.rx_gain_db[0]);
    g.get("rx_gain_user2_db", s.geometry.rx_gain_db[1]);
    g.get("tx_power_dbm", s.geometry.tx_power_dbm);
    g.get("noise_floor_user1_dbm", s.geometry.noise_floor_dbm[0]);
    g.get("noise_floor_user2_dbm", s.geometry.noise_floor_dbm[1]);
    g.get("carrier_freq_hz", s.geometry.carrier_freq_hz);
    g.get("pixel_pitch_m", s.geometry.pixel_pitch_m);
    g.get("grid_rows", s.geometry.grid_rows);
    g.get("grid_cols", s.geometry.grid_cols);
    g.get("num_ris", s.geometry.num_ris);
    g.get("ris_center_offset_m", s.geometry.ris_center_offset_m);
    g.get("element_pattern_exponent", s.geometry.element_pattern_exponent);
    g.check_unknown();

    SectionReader im(ini, "impairments", path);
    im.get("snr_db", s.profile.snr_db);
    im.get("rician_k", s.profile.rician_k);
    im.get("max_doppler_hz", s.profile.max_doppler_hz);
    im.get("clock_offset_ppm", s.profile.clock_offset_ppm);
    im.get("carrier_freq_hz", s.profile.carrier_freq_hz);
    im.get("sample_rate_hz", s.profile.sample_rate_hz);
    im.check_unknown();

    SectionReader sh(ini, "shaping", path);
    sh.get("samples_per_symbol", s.shaping.samples_per_symbol);
    sh.get("rolloff", s.shaping.rolloff);
    sh.get("filter_span_symbols", s.shaping.filter_span_symbols);
    sh.check_unknown();

    SectionReader ds(ini, "dataset", path);
    ds.get("frames_per_class", s.frames_per_class);
    ds.get("train_frac", s.train_frac);
    ds.get("val_frac", s.val_frac);
    ds.get("test_frac", s.test_frac);
    ds.get("master_seed", s.master_seed);
    ds.check_unknown();

    SectionReader cn(ini, "cnn", path);
    cn.get("conv_filters", s.arch.conv_filters);
    cn.get("kernel_width", s.arch.kernel);
    cn.get("num_classes", s.arch.num_classes);
    cn.get("input_len", s.arch.input_len);
    cn.check_unknown();

    SectionReader tr(ini, "train", path);
    tr.get("batch_size", s.train.batch_size);
    tr.get("initial_lr", s.train.initial_lr);
    tr.get("momentum", s.train.momentum);
    tr.get("lr_drop_factor", s.train.lr_drop_factor);
    tr.get("lr_drop_period_epochs", s.train.lr_drop_period_epochs);
    tr.get("max_epochs", s.train.max_epochs);
    tr.check_unknown();

    SectionReader op(ini, "optimizer", path);
    op.get("eval_frames_per_class", s.optimizer.eval_frames_per_class);
    op.get("report_frames_per_class", s.optimizer.report_frames_per_class);
    op.get("warmup_samples", s.optimizer.warmup_samples);
    op.get("max_sweeps", s.optimizer.max_sweeps);
    op.get("eval_budget", s.optimizer.eval_budget);
    op.get("pair_threshold", s.optimizer.pair_threshold);
    op.check_unknown();

    return s;
}

void write_scenario(const std::string& path, const Scenario& s) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write scenario file: " + path);
    os << "# risamc scenario\n";
    os << "format = risamc-scenario/1\n\n";
    os << "[geometry]\n";
    os << "tx_az_deg = " << fmt_double(s.geometry.tx_az_deg) << "\n";
    os << "tx_el_deg = " << fmt_double(s.geometry.tx_el_deg) << "\n";
    os << "user1_az_deg = " << fmt_double(s.geometry.user1_az_deg) << "\n";
    os << "user1_el_deg = " << fmt_double(s.geometry.user1_el_deg) << "\n";
    os << "user2_az_deg = " << fmt_double(s.geometry.user2_az_deg) << "\n";
    os << "user2_el_deg = " << fmt_double(s.geometry.user2_el_deg) << "\n";
    os << "tx_distance_m = " << fmt_double(s.geometry.tx_distance_m) << "\n";
    os << "user1_distance_m = " << fmt_double(s.geometry.user1_distance_m) << "\n";
    os << "user2_distance_m = " << fmt_double(s.geometry.user2_distance_m) << "\n";
    os << "tx_gain_db = " << fmt_double(s.geometry.tx_gain_db) << "\n";
    os << "rx_gain_user1_db = " << fmt_double(s.geometry.rx_gain_db[0]) << "\n";
    os << "rx_gain_user2_db = " << fmt_double(s.geometry.rx_gain_db[1]) << "\n";
    os << "tx_power_dbm = " << fmt_double(s.geometry.tx_power_dbm) << "\n";
    os << "noise_floor_user1_dbm = " << fmt_double(s.geometry.noise_floor_dbm[0]) << "\n";
    os << "noise_floor_user2_dbm = " << fmt_double(s.geometry.noise_floor_dbm[1]) << "\n";
    os << "carrier_freq_hz = " << fmt_double(s.geometry.carrier_freq_hz) << "\n";
    os << "pixel_pitch_m = " << fmt_double(s.geometry.pixel_pitch_m) << "\n";
    os << "grid_rows = " << s.geometry.grid_rows << "\n";
    os << "grid_cols = " << s.geometry.grid_cols << "\n";
    os << "num_ris = " << s.geometry.num_ris << "\n";
    os << "ris_center_offset_m = " << fmt_double(s.geometry.ris_center_offset_m) << "\n";
    os << "element_pattern_exponent = " << fmt_double(s.geometry.element_pattern_exponent)
       << "\n\n";
    os << "[impairments]\n";
    os << "snr_db = " << fmt_double(s.profile.snr_db) << "\n";
    os << "rician_k = " << fmt_double(s.profile.rician_k) << "\n";
    os << "max_doppler_hz = " << fmt_double(s.profile.max_doppler_hz) << "\n";
    os << "clock_offset_ppm = " << fmt_double(s.profile.clock_offset_ppm) << "\n";
    os << "carrier_freq_hz = " << fmt_double(s.profile.carrier_freq_hz) << "\n";
    os << "sample_rate_hz = " << fmt_double(s.profile.sample_rate_hz) << "\n\n";
    os << "[shaping]\n";
    os << "samples_per_symbol = " << s.shaping.samples_per_symbol << "\n";
    os << "rolloff = " << fmt_double(s.shaping.rolloff) << "\n";
    os << "filter_span_symbols = " << s.shaping.filter_span_symbols << "\n\n";
    os << "[dataset]\n";
    os << "frames_per_class = " << s.frames_per_class << "\n";
    os << "train_frac = " << fmt_double(s.train_frac) << "\n";
    os << "val_frac = " << fmt_double(s.val_frac) << "\n";
    os << "test_frac = " << fmt_double(s.test_frac) << "\n";
    os << "master_seed = " << s.master_seed << "\n\n";
    os << "[cnn]\n";
    os << "conv_filters = ";
    for (size_t i = 0; i < s.arch.conv_filters.size(); ++i)
        os << (i ? "," : "") << s.arch.conv_filters[i];
    os << "\n";
    os << "kernel_width = " << s.arch.kernel << "\n";
    os << "num_classes = " << s.arch.num_classes << "\n";
    os << "input_len = " << s.arch.input_len << "\n\n";
    os << "[train]\n";
    os << "batch_size = " << s.train.batch_size << "\n";
    os << "initial_lr = " << fmt_double(s.train.initial_lr) << "\n";
    os << "momentum = " << fmt_double(s.train.momentum) << "\n";
    os << "lr_drop_factor = " << fmt_double(s.train.lr_drop_factor) << "\n";
    os << "lr_drop_period_epochs = " << s.train.lr_drop_period_epochs << "\n";
    os << "max_epochs = " << s.train.max_epochs << "\n\n";
    os << "[optimizer]\n";
    os << "eval_frames_per_class = " << s.optimizer.eval_frames_per_class << "\n";
    os << "report_frames_per_class = " << s.optimizer.report_frames_per_class << "\n";
    os << "warmup_samples = " << s.optimizer.warmup_samples << "\n";
    os << "max_sweeps = " << s.optimizer.max_sweeps << "\n";
    os << "eval_budget = " << s.optimizer.eval_budget << "\n";
    os << "pair_threshold = " << fmt_double(s.optimizer.pair_threshold) << "\n";
    if (!os)
        throw FormatError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Dataset container.
// ---------------------------------------------------------------------------

std::string manifest_path_for(const std::string& bin_path) {
    return bin_path + ".manifest";
}

struct DatasetWriter::FileHandle {
    std::ofstream out;
};

DatasetWriter::DatasetWriter(const std::string& bin_path, uint64_t record_count,
                             uint32_t samples_per_frame)
    : bin_path_(bin_path), expect_(record_count), spf_(samples_per_frame),
      out_(std::make_shared<FileHandle>()) {
    out_->out.open(bin_path, std::ios::binary | std::ios::trunc);
    if (!out_->out)
        throw FormatError("cannot open dataset file for writing: " + bin_path);
    std::string header(kDatasetMagic, 8);
    put_u32(header, 1u); // version
    put_u32(header, samples_per_frame);
    put_u64(header, record_count);
    put_u64(header, 0u); // reserved
    out_->out.write(header.data(), static_cast<std::streamsize>(header.size()));
}

void DatasetWriter::append(const sig::LabeledFrame& f, chan::Split split) {
    if (written_ >= expect_)
        throw FormatError("dataset writer: more records than declared");
    if (f.samples.size() != spf_)
        throw FormatError("dataset writer: frame length mismatch");
    std::string rec;
    rec.reserve(static_cast<size_t>(spf_) * 8);
    for (const cd& v : f.samples) {
        put_f32(rec, static_cast<float>(v.real()));
        put_f32(rec, static_cast<float>(v.imag()));
    }
    out_->out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    std::ostringstream line;
    line << "record " << written_ << " class=" << sig::mod_name(f.label)
         << " seed=" << f.seed << " split=" << chan::split_name(split);
    record_lines_.push_back(line.str());
    ++written_;
}

void DatasetWriter::finalize(const chan::DatasetSpec& spec, const Provenance& prov) {
    if (written_ != expect_)
        throw FormatError("dataset writer: record count mismatch at finalize");
    out_->out.flush();
    if (!out_->out)
        throw FormatError("dataset write failed: " + bin_path_);
    out_->out.close();

    std::ofstream mf(manifest_path_for(bin_path_));
    if (!mf)
        throw FormatError("cannot write manifest: " + manifest_path_for(bin_path_));
    mf << "format = risamc-dataset/1\n";
    mf << "records = " << written_ << "\n";
    mf << "samples_per_frame = " << spf_ << "\n";
    mf << "classes = ";
    for (size_t i = 0; i < sig::kAllMods.size(); ++i)
        mf << (i ? "," : "") << sig::mod_name(sig::kAllMods[i]);
    mf << "\n";
    mf << "master_seed = " << spec.master_seed << "\n";
    mf << "seed = " << prov.seed << "\n";
    mf << "scenario_fnv1a = " << prov.scenario_fnv1a << "\n";
    mf << "frames_per_class = " << spec.frames_per_class << "\n";
    mf << "train_frac = " << fmt_double(spec.train_frac) << "\n";
    mf << "val_frac = " << fmt_double(spec.val_frac) << "\n";
    mf << "test_frac = " << fmt_double(spec.test_frac) << "\n";
    mf << "profile.snr_db = " << fmt_double(spec.profile.snr_db) << "\n";
    mf << "profile.rician_k = " << fmt_double(spec.profile.rician_k) << "\n";
    mf << "profile.max_doppler_hz = " << fmt_double(spec.profile.max_doppler_hz) << "\n";
    mf << "profile.clock_offset_ppm = " << fmt_double(spec.profile.clock_offset_ppm) << "\n";
    mf << "profile.carrier_freq_hz = " << fmt_double(spec.profile.carrier_freq_hz) << "\n";
    mf << "profile.sample_rate_hz = " << fmt_double(spec.profile.sample_rate_hz) << "\n";
    mf << "shaping.samples_per_symbol = " << spec.shaping.samples_per_symbol << "\n";
    mf << "shaping.rolloff = " << fmt_double(spec.shaping.rolloff) << "\n";
    mf << "shaping.filter_span_symbols = " << spec.shaping.filter_span_symbols << "\n";
    for (const std::string& line : record_lines_)
        mf << line << "\n";
    if (!mf)
        throw FormatError("manifest write failed");
}

LoadedDataset read_dataset(const std::string& bin_path) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open dataset file: " + bin_path);
    in.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(in.tellg());
    in.seekg(0);
    if (file_size < kDatasetHeaderBytes)
        throw FormatError("dataset file smaller than header: " + bin_path);
    unsigned char header[kDatasetHeaderBytes];
    in.read(reinterpret_cast<char*>(header), kDatasetHeaderBytes);
    if (std::memcmp(header, kDatasetMagic, 8) != 0)
        throw FormatError("dataset magic mismatch: " + bin_path);
    const uint32_t version = get_u32(header + 8);
    if (version != 1)
        throw FormatError("unsupported dataset version " + std::to_string(version));
    const uint32_t spf = get_u32(header + 12);
    const uint64_t count = get_u64(header + 16);
    const uint64_t record_bytes = static_cast<uint64_t>(spf) * 8;
    const uint64_t expect = kDatasetHeaderBytes + count * record_bytes;
    if (file_size < expect) {
        const uint64_t idx = (file_size - kDatasetHeaderBytes) / record_bytes;
        throw TruncatedRecord("dataset truncated at record " + std::to_string(idx),
                              static_cast<long>(idx));
    }

    // manifest
    std::ifstream mf(manifest_path_for(bin_path));
    if (!mf)
        throw FormatError("missing manifest: " + manifest_path_for(bin_path));
    LoadedDataset ds;
    std::vector<sig::Mod> labels;
    std::vector<uint64_t> seeds;
    std::string line;
    while (std::getline(mf, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        if (t.rfind("record ", 0) == 0) {
            std::istringstream ss(t);
            std::string word;
            uint64_t idx;
            ss >> word >> idx;
            std::string cls, seedkv, splitkv;
            ss >> cls >> seedkv >> splitkv;
            auto val = [](const std::string& kv) {
                const size_t eq = kv.find('=');
                if (eq == std::string::npos)
                    throw FormatError("bad manifest record field: " + kv);
                return kv.substr(eq + 1);
            };
            if (idx != labels.size())
                throw FormatError("manifest records out of order at " + std::to_string(idx));
            labels.push_back(sig::mod_from_name(val(cls)));
            seeds.push_back(std::stoull(val(seedkv)));
            ds.splits.push_back(chan::split_from_name(val(splitkv)));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq != std::string::npos)
            ds.manifest[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    if (labels.size() != count)
        throw FormatError("manifest record count " + std::to_string(labels.size()) +
                          " disagrees with header count " + std::to_string(count));
    auto it = ds.manifest.find("master_seed");
    if (it != ds.manifest.end())
        ds.master_seed = std::stoull(it->second);

    ds.frames.resize(count);
    std::vector<unsigned char> rec(record_bytes);
    for (uint64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(record_bytes));
        if (static_cast<uint64_t>(in.gcount()) != record_bytes)
            throw TruncatedRecord("dataset truncated at record " + std::to_string(i),
                                  static_cast<long>(i));
        sig::LabeledFrame& f = ds.frames[i];
        f.samples.resize(spf);
        for (uint32_t s = 0; s < spf; ++s)
            f.samples[s] = cd(get_f32(rec.data() + s * 8), get_f32(rec.data() + s * 8 + 4));
        f.label = labels[i];
        f.seed = seeds[i];
        f.rms = rms(f.samples);
    }
    return ds;
}

std::vector<size_t> LoadedDataset::indices(chan::Split s) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s)
            idx.push_back(i);
    return idx;
}

// ---------------------------------------------------------------------------
// Checkpoint container.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const nn::Model<float>& m,
                     const Provenance& prov) {
    nn::Model<float>& mm = const_cast<nn::Model<float>&>(m);
    auto params = nn::trainable_params(mm);
    auto buffers = nn::state_buffers(mm);

    nlohmann::json j;
    j["format"] = "risamc-checkpoint/1";
    j["seed"] = prov.seed;
    j["scenario_fnv1a"] = prov.scenario_fnv1a;
    j["architecture"] = {
        {"in_channels", m.arch.in_channels},   {"input_len", m.arch.input_len},
        {"conv_filters", m.arch.conv_filters}, {"kernel", m.arch.kernel},
        {"num_classes", m.arch.num_classes},   {"bn_eps", m.arch.bn_eps},
        {"bn_momentum", m.arch.bn_momentum},
    };
    nlohmann::json tensors = nlohmann::json::array();
    auto add_tensor = [&tensors](const auto& p) {
        tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"count", p.data->size()}});
    };
    for (const auto& p : params)
        add_tensor(p);
    for (const auto& p : buffers)
        add_tensor(p);
    j["tensors"] = tensors;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : m.history)
        hist.push_back({{"epoch", e.epoch},
                        {"iterations", e.iterations},
                        {"lr", e.lr},
                        {"train_loss", e.train_loss},
                        {"train_acc", e.train_acc},
                        {"val_acc", e.val_acc}});
    j["history"] = hist;

    const std::string js = j.dump();
    std::string blob(kCheckpointMagic, 8);
    put_u64(blob, js.size());
    blob += js;
    for (const auto& p : params)
        for (float v : *p.data)
            put_f32(blob, v);
    for (const auto& p : buffers)
        for (float v : *p.data)
            put_f32(blob, v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot open checkpoint for writing: " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out)
        throw FormatError("checkpoint write failed: " + path);
}

nn::Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open checkpoint: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 16 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint magic mismatch: " + path);
    const uint64_t jlen = get_u64(reinterpret_cast<const unsigned char*>(data.data()) + 8);
    if (16 + jlen > data.size())
        throw FormatError("checkpoint descriptor truncated");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data.substr(16, jlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint descriptor parse error: ") + e.what());
    }
    if (j.value("format", "") != std::string("risamc-checkpoint/1"))
        throw FormatError("unsupported checkpoint format");

    nn::Architecture arch;
    const auto& ja = j.at("architecture");
    arch.in_channels = ja.at("in_channels").get<int>();
    arch.input_len = ja.at("input_len").get<int>();
    arch.conv_filters = ja.at("conv_filters").get<std::vector<int>>();
    arch.kernel = ja.at("kernel").get<int>();
    arch.num_classes = ja.at("num_classes").get<int>();
    arch.bn_eps = ja.at("bn_eps").get<double>();
    arch.bn_momentum = ja.at("bn_momentum").get<double>();

    nn::Model<float> m = nn::build_model<float>(arch, 0);
    m.history.clear();
    for (const auto& je : j.at("history")) {
        nn::EpochStats e;
        e.epoch = je.at("epoch").get<int>();
        e.iterations = je.at("iterations").get<int>();
        e.lr = je.at("lr").get<double>();
        e.train_loss = je.at("train_loss").get<double>();
        e.train_acc = je.at("train_acc").get<double>();
        e.val_acc = je.at("val_acc").get<double>();
        m.history.push_back(e);
    }

    auto params = nn::trainable_params(m);
    auto buffers = nn::state_buffers(m);
    std::vector<std::vector<float>*> order;
    for (auto& p : params)
        order.push_back(p.data);
    for (auto& p : buffers)
        order.push_back(p.data);

    const auto& jt = j.at("tensors");
    if (jt.size() != order.size())
        throw ShapeMismatch("checkpoint tensor count does not match architecture");
    size_t off = 16 + jlen;
    size_t ti = 0;
    for (auto* vec : order) {
        const uint64_t count = jt[ti].at("count").get<uint64_t>();
        if (count != vec->size())
            throw ShapeMismatch("checkpoint tensor '" +
                                jt[ti].at("name").get<std::string>() +
                                "' size does not match architecture");
        if (off + count * 4 > data.size())
            throw FormatError("checkpoint data truncated in tensor " +
                              jt[ti].at("name").get<std::string>());
        for (uint64_t i = 0; i < count; ++i)
            (*vec)[i] = get_f32(reinterpret_cast<const unsigned char*>(data.data()) + off + i * 4);
        off += count * 4;
        ++ti;
    }
    if (off != data.size())
        throw FormatError("checkpoint has trailing bytes");
    return m;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

void write_history(const std::string& path, const std::vector<nn::EpochStats>& history,
                   const Provenance& prov) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write history: " + path);
    os << "# risamc-history/1\n";
    write_provenance(os, prov);
    os << "epoch\titerations\tlr\ttrain_loss\ttrain_acc\tval_acc\n";
    for (const auto& e : history)
        os << e.epoch << "\t" << e.iterations << "\t" << fmt_double(e.lr) << "\t"
           << fmt_double(e.train_loss) << "\t" << fmt_double(e.train_acc) << "\t"
           << fmt_double(e.val_acc) << "\n";
    if (!os)
        throw FormatError("history write failed");
}

void write_confusion(const std::string& path, const nn::ConfusionMatrix& cm,
                     const Provenance& prov,
                     const std::vector<std::pair<std::string, std::string>>& context) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write confusion matrix: " + path);
    os << "# risamc-confusion/1\n";
    write_provenance(os, prov);
    for (const auto& [k, v] : context)
        os << "# " << k << " = " << v << "\n";
    os << "# rows = ground truth, columns = prediction\n";
    os << "classes\t";
    for (size_t i = 0; i < sig::kAllMods.size(); ++i)
        os << (i ? "\t" : "") << sig::mod_name(sig::kAllMods[i]);
    os << "\n";
    os << "counts\n";
    for (const auto& row : cm.counts) {
        for (size_t j = 0; j < row.size(); ++j)
            os << (j ? "\t" : "") << row[j];
        os << "\n";
    }
    os << "row_percent\n";
    for (const auto& row : cm.counts) {
        int64_t sum = 0;
        for (int64_t v : row)
            sum += v;
        for (size_t j = 0; j < row.size(); ++j) {
            const double pct = sum > 0 ? 100.0 * static_cast<double>(row[j]) /
                                             static_cast<double>(sum)
                                       : 0.0;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", pct);
            os << (j ? "\t" : "") << buf;
        }
        os << "\n";
    }
    os << "accuracy = " << fmt_double(cm.accuracy()) << "\n";
    if (!os)
        throw FormatError("confusion write failed");
}

void write_trace(const std::string& path, const opt::OptimizationResult& res,
                 const opt::AccuracyObjective* pair_source, const Provenance& prov,
                 const std::vector<std::pair<std::string, std::string>>& context) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write trace: " + path);
    os << "# risamc-trace/1\n";
    write_provenance(os, prov);
    for (const auto& [k, v] : context)
        os << "# " << k << " = " << v << "\n";
    os << "# best_config = " << res.best_config.to_hex() << "\n";
    os << "# best_value = " << fmt_double(res.best_value) << "\n";
    os << "# evaluations = " << res.evaluations << "\n";
    os << "iteration\tconfig_hex\tacc_user1\tacc_user2\tbest\n";
    for (const auto& tp : res.trace) {
        double a1 = std::nan(""), a2 = std::nan("");
        if (pair_source) {
            const ris::RisConfig c =
                ris::RisConfig::from_hex(tp.cfg_hex, pair_source->num_pixels());
            a1 = pair_source->cached_user_accuracy(c, ris::User::user1);
            a2 = pair_source->cached_user_accuracy(c, ris::User::user2);
        }
        os << tp.iteration << "\t" << tp.cfg_hex << "\t" << fmt_acc(a1) << "\t" << fmt_acc(a2)
           << "\t" << fmt_acc(tp.best) << "\n";
    }
    if (!os)
        throw FormatError("trace write failed");
}

void write_multiuser_table(const std::string& path, const std::vector<opt::PairRow>& rows,
                           double threshold, const Provenance& prov) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write multi-user table: " + path);
    os << "# risamc-multiuser/1\n";
    write_provenance(os, prov);
    os << "# threshold = " << fmt_double(threshold) << "\n";
    os << "config_hex\tacc_user1\tacc_user2\tmin_acc\tboth_above_threshold\n";
    for (const auto& r : rows) {
        const double mn = std::min(r.acc_user1, r.acc_user2);
        os << r.cfg_hex << "\t" << fmt_acc(r.acc_user1) << "\t" << fmt_acc(r.acc_user2) << "\t"
           << fmt_acc(mn) << "\t" << (mn > threshold ? 1 : 0) << "\n";
    }
    if (!os)
        throw FormatError("multi-user table write failed");
}

std::vector<std::vector<double>> compute_spectrogram(const std::vector<cd>& samples,
                                                     int window, int hop) {
    if (samples.size() < static_cast<size_t>(window))
        throw Error(ExitCode::data, "spectrogram: frame shorter than the window");
    const size_t rows = (samples.size() - static_cast<size_t>(window)) /
                            static_cast<size_t>(hop) + 1;
    std::vector<std::vector<double>> grid(rows, std::vector<double>(static_cast<size_t>(window)));
    std::vector<double> hann(static_cast<size_t>(window));
    for (int n = 0; n < window; ++n)
        hann[static_cast<size_t>(n)] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / window));
    double peak = 0.0;
    std::vector<cd> buf(static_cast<size_t>(window));
    for (size_t r = 0; r < rows; ++r) {
        for (int n = 0; n < window; ++n)
            buf[static_cast<size_t>(n)] =
                samples[r * static_cast<size_t>(hop) + static_cast<size_t>(n)] *
                hann[static_cast<size_t>(n)];
        fft_inplace(buf, -1);
        for (int k = 0; k < window; ++k) {
            // fftshift: output column 0 is -fs/2
            const int src = (k + window / 2) % window;
            const double mag = std::abs(buf[static_cast<size_t>(src)]);
            grid[r][static_cast<size_t>(k)] = mag;
            peak = std::max(peak, mag);
        }
    }
    if (peak > 0.0)
        for (auto& row : grid)
            for (double& v : row)
                v /= peak;
    return grid;
}

void write_spectrogram(const std::string& path, const std::vector<std::vector<double>>& grid,
                       double sample_rate_hz, const Provenance& prov) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot write spectrogram: " + path);
    os << "# risamc-spectrogram/1\n";
    write_provenance(os, prov);
    os << "# rows = " << grid.size() << " (time), cols = "
       << (grid.empty() ? 0 : grid[0].size()) << " (frequency, fftshifted)\n";
    os << "# sample_rate_hz = " << fmt_double(sample_rate_hz) << "\n";
    os << "# peak normalized to 1\n";
    for (const auto& row : grid) {
        for (size_t j = 0; j < row.size(); ++j) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6e", row[j]);
            os << (j ? "\t" : "") << buf;
        }
        os << "\n";
    }
    if (!os)
        throw FormatError("spectrogram write failed");
}

} // namespace risamc::io
