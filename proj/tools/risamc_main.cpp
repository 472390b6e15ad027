#include <iostream>

#include <CLI11.hpp>

#include "risamc/commands.hpp"
#include "risamc/error.hpp"

using namespace risamc;

int main(int argc, char** argv) {
    CLI::App app{"RIS-assisted modulation classification pipeline"};
    app.require_subcommand(1);

    cmd::GenOptions gen;
    auto* sub_gen = app.add_subcommand("gen", "Generate an impaired modulation dataset");
    sub_gen->add_option("--scenario", gen.scenario, "Scenario file")->required();
    sub_gen->add_option("--out", gen.out_dir, "Output directory")->required();
    int gen_fpc = -1;
    uint64_t gen_seed = 0;
    double gen_snr = 0.0;
    auto* o_fpc = sub_gen->add_option("--frames-per-class", gen_fpc, "Override frames per class");
    auto* o_seed = sub_gen->add_option("--seed", gen_seed, "Override master seed");
    auto* o_snr = sub_gen->add_option("--snr-db", gen_snr, "Override impairment SNR (dB)");

    cmd::TrainOptions train;
    auto* sub_train = app.add_subcommand("train", "Train the classifier on a dataset");
    sub_train->add_option("--scenario", train.scenario, "Scenario file")->required();
    sub_train->add_option("--dataset", train.dataset, "Dataset .bin file")->required();
    sub_train->add_option("--out", train.out_dir, "Output directory")->required();
    uint64_t train_seed = 0;
    int train_epochs = -1, train_batch = -1;
    auto* t_seed = sub_train->add_option("--seed", train_seed, "Init/shuffle seed");
    auto* t_epochs = sub_train->add_option("--max-epochs", train_epochs, "Override epoch count");
    auto* t_batch = sub_train->add_option("--batch-size", train_batch, "Override batch size");

    cmd::EvaluateOptions ev;
    auto* sub_eval = app.add_subcommand("evaluate", "Confusion-matrix evaluation");
    sub_eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    sub_eval->add_option("--out", ev.out_dir, "Output directory")->required();
    sub_eval->add_option("--dataset", ev.dataset, "Dataset .bin (dataset mode)");
    sub_eval->add_option("--split", ev.split, "Partition to evaluate (dataset mode)");
    sub_eval->add_option("--scenario", ev.scenario, "Scenario file (channel mode)");
    sub_eval->add_option("--config", ev.config_hex, "RIS configuration hex (channel mode)");
    sub_eval->add_option("--user", ev.user, "Target user 1|2 (channel mode)");
    int ev_fpc = -1;
    auto* e_fpc = sub_eval->add_option("--frames-per-class", ev_fpc, "Frames per class");
    sub_eval->add_option("--seed", ev.seed, "Evaluation frame seed");

    cmd::OptimizeOptions op;
    auto* sub_opt = app.add_subcommand("optimize", "Search RIS configurations");
    sub_opt->add_option("--checkpoint", op.checkpoint, "Model checkpoint")->required();
    sub_opt->add_option("--scenario", op.scenario, "Scenario file")->required();
    sub_opt->add_option("--out", op.out_dir, "Output directory")->required();
    sub_opt->add_option("--target", op.target, "all|user1|user2|joint-min|joint-mean");
    sub_opt->add_option("--strategy", op.strategy, "greedy|random");
    int64_t op_budget = -1;
    int op_warmup = -1, op_sweeps = -1, op_fpc = -1;
    auto* p_budget = sub_opt->add_option("--budget", op_budget, "Objective evaluation budget");
    auto* p_warmup = sub_opt->add_option("--warmup", op_warmup, "Random warm-start samples");
    auto* p_sweeps = sub_opt->add_option("--max-sweeps", op_sweeps, "Greedy sweep limit");
    auto* p_fpc = sub_opt->add_option("--eval-frames-per-class", op_fpc,
                                      "Evaluation frames per class");
    sub_opt->add_option("--seed", op.seed, "Run seed");

    cmd::SpectrogramOptions sp;
    auto* sub_spec = app.add_subcommand("spectrogram", "Short-time DFT magnitude grid");
    sub_spec->add_option("--input", sp.input, "Dataset .bin file")->required();
    sub_spec->add_option("--record", sp.record, "Record index");
    sub_spec->add_option("--out", sp.out, "Output text file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        // help/version exit with 0; anything else is a usage error
        return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (sub_gen->parsed()) {
            if (*o_fpc)
                gen.frames_per_class = gen_fpc;
            if (*o_seed)
                gen.seed = gen_seed;
            if (*o_snr)
                gen.snr_db = gen_snr;
            return cmd::run_gen(gen, std::cout);
        }
        if (sub_train->parsed()) {
            if (*t_seed)
                train.seed = train_seed;
            if (*t_epochs)
                train.max_epochs = train_epochs;
            if (*t_batch)
                train.batch_size = train_batch;
            return cmd::run_train(train, std::cout);
        }
        if (sub_eval->parsed()) {
            if (*e_fpc)
                ev.frames_per_class = ev_fpc;
            return cmd::run_evaluate(ev, std::cout);
        }
        if (sub_opt->parsed()) {
            if (*p_budget)
                op.budget = op_budget;
            if (*p_warmup)
                op.warmup = op_warmup;
            if (*p_sweeps)
                op.max_sweeps = op_sweeps;
            if (*p_fpc)
                op.eval_frames_per_class = op_fpc;
            return cmd::run_optimize(op, std::cout);
        }
        if (sub_spec->parsed())
            return cmd::run_spectrogram(sp, std::cout);
    } catch (const NonFiniteLoss& e) {
        std::cerr << "numerical failure: " << e.what() << " (batch " << e.batch_index << ")\n";
        return static_cast<int>(ExitCode::numeric);
    } catch (const TruncatedRecord& e) {
        std::cerr << "data error: " << e.what() << " (record " << e.record_index << ")\n";
        return static_cast<int>(ExitCode::data);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data);
    }
    return static_cast<int>(ExitCode::usage);
}
