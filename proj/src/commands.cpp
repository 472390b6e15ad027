#include "risamc/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "risamc/error.hpp"
#include "risamc/io.hpp"

namespace fs = std::filesystem;

namespace risamc::cmd {

namespace {

io::Provenance make_provenance(const std::string& scenario_path, uint64_t seed) {
    io::Provenance p;
    p.seed = seed;
    if (!scenario_path.empty())
        p.scenario_fnv1a = to_hex_u64(fnv1a64_file(scenario_path));
    return p;
}

void ensure_dir(const std::string& dir) {
    if (dir.empty())
        throw Error(ExitCode::usage, "output directory must be given");
    fs::create_directories(dir);
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

} // namespace

int run_gen(const GenOptions& opt, std::ostream& log) {
    io::Scenario sc = io::parse_scenario(opt.scenario);
    chan::DatasetSpec spec = sc.dataset_spec();
    if (opt.frames_per_class)
        spec.frames_per_class = *opt.frames_per_class;
    if (opt.seed)
        spec.master_seed = *opt.seed;
    if (opt.snr_db)
        spec.profile.snr_db = *opt.snr_db;
    spec.validate();
    ensure_dir(opt.out_dir);

    const std::string bin = join(opt.out_dir, "dataset.bin");
    const uint64_t total = sig::kNumClasses * static_cast<uint64_t>(spec.frames_per_class);
    io::DatasetWriter writer(bin, total, static_cast<uint32_t>(sig::kFrameLen));
    chan::for_each_dataset_frame(spec,
                                 [&](size_t, const sig::LabeledFrame& f, chan::Split s) {
                                     writer.append(f, s);
                                 });
    writer.finalize(spec, make_provenance(opt.scenario, spec.master_seed));
    log << "gen: wrote " << total << " frames (" << spec.frames_per_class
        << " per class) to " << bin << "\n";
    return 0;
}

int run_train(const TrainOptions& opt, std::ostream& log) {
    io::Scenario sc = io::parse_scenario(opt.scenario);
    if (opt.max_epochs)
        sc.train.max_epochs = *opt.max_epochs;
    if (opt.batch_size)
        sc.train.batch_size = *opt.batch_size;
    ensure_dir(opt.out_dir);

    io::LoadedDataset ds = io::read_dataset(opt.dataset);
    const nn::TrainData train_set = nn::to_train_data(ds.frames, ds.indices(chan::Split::train));
    const nn::TrainData val_set = nn::to_train_data(ds.frames, ds.indices(chan::Split::val));
    log << "train: " << train_set.n << " train / " << val_set.n << " val frames\n";

    const uint64_t seed = opt.seed ? *opt.seed : ds.master_seed;
    sc.train.shuffle_seed = derive_seed(seed, {0x54ull});
    nn::Model<float> init = nn::build_model<float>(sc.arch, derive_seed(seed, {0x1417ull}));
    const nn::TrainResult res = nn::train(init, train_set, val_set, sc.train, &log);

    const io::Provenance prov = make_provenance(opt.scenario, seed);
    io::save_checkpoint(join(opt.out_dir, "checkpoint.ckpt"), res.best, prov);
    io::write_history(join(opt.out_dir, "history.tsv"), res.final_model.history, prov);
    double best_val = 0.0;
    for (const auto& e : res.final_model.history)
        best_val = std::max(best_val, e.val_acc);
    log << "train: best validation accuracy " << best_val << ", checkpoint written\n";
    return 0;
}

int run_evaluate(const EvaluateOptions& opt, std::ostream& log) {
    ensure_dir(opt.out_dir);
    nn::Model<float> model = io::load_checkpoint(opt.checkpoint);

    nn::ConfusionMatrix cm;
    std::vector<std::pair<std::string, std::string>> context;
    io::Provenance prov;

    if (!opt.dataset.empty()) {
        io::LoadedDataset ds = io::read_dataset(opt.dataset);
        const auto idx = ds.indices(chan::split_from_name(opt.split));
        if (idx.empty())
            throw Error(ExitCode::data, "evaluate: selected split is empty");
        std::vector<sig::LabeledFrame> frames;
        frames.reserve(idx.size());
        for (size_t i : idx)
            frames.push_back(ds.frames[i]);
        cm = nn::evaluate(model, frames);
        prov.seed = ds.master_seed;
        auto it = ds.manifest.find("scenario_fnv1a");
        if (it != ds.manifest.end())
            prov.scenario_fnv1a = it->second;
        context = {{"mode", "dataset"}, {"dataset", opt.dataset}, {"split", opt.split}};
    } else if (!opt.scenario.empty()) {
        io::Scenario sc = io::parse_scenario(opt.scenario);
        if (opt.user != 1 && opt.user != 2)
            throw Error(ExitCode::usage, "evaluate: --user must be 1 or 2");
        const ris::User user = opt.user == 1 ? ris::User::user1 : ris::User::user2;
        const size_t npix = static_cast<size_t>(sc.geometry.total_pixels());
        const ris::RisConfig cfg = ris::RisConfig::from_hex(opt.config_hex, npix);
        const int fpc = opt.frames_per_class ? *opt.frames_per_class
                                             : sc.optimizer.report_frames_per_class;
        std::vector<sig::LabeledFrame> frames;
        frames.reserve(sig::kNumClasses * static_cast<size_t>(fpc));
        for (size_t c = 0; c < sig::kNumClasses; ++c)
            for (int i = 0; i < fpc; ++i) {
                const sig::LabeledFrame clean = sig::synthesize_frame(
                    sig::kAllMods[c], sc.shaping,
                    derive_seed(opt.seed, {c, static_cast<uint64_t>(i), 0}));
                Rng rng(derive_seed(opt.seed, {c, static_cast<uint64_t>(i), 1}));
                frames.push_back(
                    ris::apply_channel(clean, cfg, sc.geometry, user, sc.profile, rng));
            }
        cm = nn::evaluate(model, frames);
        prov = make_provenance(opt.scenario, opt.seed);
        char snr[32];
        std::snprintf(snr, sizeof(snr), "%.2f",
                      ris::received_snr_db(cfg, sc.geometry, user));
        context = {{"mode", "channel"},
                   {"user", std::string(ris::user_name(user))},
                   {"config_hex", opt.config_hex},
                   {"received_snr_db", snr},
                   {"frames_per_class", std::to_string(fpc)}};
    } else {
        throw Error(ExitCode::usage, "evaluate: give either --dataset or --scenario with --config");
    }

    io::write_confusion(join(opt.out_dir, "confusion.txt"), cm, prov, context);
    log << "evaluate: accuracy " << cm.accuracy() << " over " << cm.total() << " frames\n";
    return 0;
}

int run_optimize(const OptimizeOptions& opt, std::ostream& log) {
    ensure_dir(opt.out_dir);
    io::Scenario sc = io::parse_scenario(opt.scenario);
    nn::Model<float> model = io::load_checkpoint(opt.checkpoint);
    const io::Provenance prov = make_provenance(opt.scenario, opt.seed);

    const int64_t budget = opt.budget ? *opt.budget : sc.optimizer.eval_budget;
    const int warmup = opt.warmup ? *opt.warmup : sc.optimizer.warmup_samples;
    const int max_sweeps = opt.max_sweeps ? *opt.max_sweeps : sc.optimizer.max_sweeps;
    const int eval_fpc = opt.eval_frames_per_class ? *opt.eval_frames_per_class
                                                   : sc.optimizer.eval_frames_per_class;

    auto predictor = std::make_shared<nn::Predictor>(model);
    opt::BatchClassifier classify = [predictor](const std::vector<sig::LabeledFrame>& fr) {
        return predictor->classify(fr);
    };

    std::vector<opt::Target> targets;
    if (opt.target == "all")
        targets = {opt::Target::user1, opt::Target::user2, opt::Target::joint_min};
    else
        targets = {opt::target_from_name(opt.target)};

    const uint64_t run_seed = derive_seed(opt.seed, {0xE7A1ull});
    const size_t npix = static_cast<size_t>(sc.geometry.total_pixels());

    std::vector<opt::PairRow> pair_rows;
    std::unique_ptr<opt::AccuracyObjective> joint_obj;
    std::vector<std::pair<std::string, ris::RisConfig>> best_configs;

    for (opt::Target target : targets) {
        opt::AccuracyObjectiveConfig ocfg;
        ocfg.target = target;
        ocfg.eval_frames_per_class = eval_fpc;
        ocfg.run_seed = run_seed; // shared eval frames across targets
        auto obj = std::make_unique<opt::AccuracyObjective>(classify, sc.geometry, sc.profile,
                                                            sc.shaping, ocfg);
        Rng rng(derive_seed(opt.seed, {static_cast<uint64_t>(target), 0xB17ull}));
        opt::OptimizationResult res;
        if (opt.strategy == "greedy") {
            opt::GreedyOptions gopt;
            gopt.max_sweeps = max_sweeps;
            gopt.warmup_samples = warmup;
            gopt.eval_budget = budget;
            res = opt::greedy_bitflip(*obj, ris::RisConfig::random(npix, rng), gopt, rng);
        } else if (opt.strategy == "random") {
            res = opt::random_search(*obj, static_cast<int>(budget), rng);
        } else {
            throw Error(ExitCode::usage, "optimize: unknown strategy " + opt.strategy);
        }

        const std::string tname(opt::target_name(target));
        std::string fname = "trace_" + tname + ".tsv";
        for (char& c : fname)
            if (c == '-')
                c = '_';
        io::write_trace(join(opt.out_dir, fname), res, obj.get(), prov,
                        {{"target", tname},
                         {"strategy", opt.strategy},
                         {"eval_frames_per_class", std::to_string(eval_fpc)}});
        log << "optimize[" << tname << "]: best " << res.best_value << " after "
            << res.evaluations << " evaluations\n";
        best_configs.emplace_back(tname, res.best_config);

        if (target == opt::Target::joint_min || target == opt::Target::joint_mean) {
            // every visited config already carries both users' accuracies
            std::vector<ris::RisConfig> visited;
            visited.reserve(obj->visited().size());
            for (const std::string& hex : obj->visited())
                visited.push_back(ris::RisConfig::from_hex(hex, npix));
            auto rows = opt::multi_user_sweep(*obj, visited);
            pair_rows.insert(pair_rows.end(), rows.begin(), rows.end());
            joint_obj = std::move(obj);
        }
    }

    // pair accuracies for the per-target best configurations
    {
        opt::AccuracyObjective* pair_obj = joint_obj.get();
        std::unique_ptr<opt::AccuracyObjective> fallback;
        if (!pair_obj) {
            opt::AccuracyObjectiveConfig ocfg;
            ocfg.target = opt::Target::joint_min;
            ocfg.eval_frames_per_class = eval_fpc;
            ocfg.run_seed = run_seed;
            fallback = std::make_unique<opt::AccuracyObjective>(classify, sc.geometry,
                                                                sc.profile, sc.shaping, ocfg);
            pair_obj = fallback.get();
        }
        std::ofstream bc(join(opt.out_dir, "best_configs.txt"));
        bc << "# risamc-best-configs/1\n";
        bc << "# seed = " << prov.seed << "\n";
        bc << "# scenario_fnv1a = " << prov.scenario_fnv1a << "\n";
        bc << "target\tconfig_hex\tacc_user1\tacc_user2\n";
        for (const auto& [tname, cfg] : best_configs) {
            auto [a1, a2] = pair_obj->both_accuracies(cfg);
            char b1[32], b2[32];
            std::snprintf(b1, sizeof(b1), "%.6f", a1);
            std::snprintf(b2, sizeof(b2), "%.6f", a2);
            bc << tname << "\t" << cfg.to_hex() << "\t" << b1 << "\t" << b2 << "\n";
            pair_rows.push_back({cfg.to_hex(), a1, a2});
        }
    }

    io::write_multiuser_table(join(opt.out_dir, "multiuser.tsv"), pair_rows,
                              sc.optimizer.pair_threshold, prov);
    int above = 0;
    for (const auto& r : pair_rows)
        if (std::min(r.acc_user1, r.acc_user2) > sc.optimizer.pair_threshold)
            ++above;
    log << "optimize: " << above << " of " << pair_rows.size()
        << " tabulated configs have both users above " << sc.optimizer.pair_threshold << "\n";
    return 0;
}

int run_spectrogram(const SpectrogramOptions& opt, std::ostream& log) {
    io::LoadedDataset ds = io::read_dataset(opt.input);
    if (opt.record < 0 || static_cast<size_t>(opt.record) >= ds.frames.size())
        throw Error(ExitCode::usage, "spectrogram: record index out of range");
    const auto grid = io::compute_spectrogram(ds.frames[static_cast<size_t>(opt.record)].samples);
    io::Provenance prov;
    prov.seed = ds.master_seed;
    auto it = ds.manifest.find("scenario_fnv1a");
    if (it != ds.manifest.end())
        prov.scenario_fnv1a = it->second;
    double fs = sig::kSampleRateHz;
    auto fsit = ds.manifest.find("profile.sample_rate_hz");
    if (fsit != ds.manifest.end())
        fs = std::stod(fsit->second);
    io::write_spectrogram(opt.out, grid, fs, prov);
    log << "spectrogram: " << grid.size() << " x " << (grid.empty() ? 0 : grid[0].size())
        << " grid written to " << opt.out << "\n";
    return 0;
}

} // namespace risamc::cmd
