// kwbeam: keyword-cued multichannel speech enhancement toolkit.
// Subcommands: simulate | train | enhance | evaluate. Shared flags --config,
// --seed and --jobs; flag values override the config file, which overrides
// the built-in defaults. Exit codes: 0 success, 2 validation error,
// 3 numeric failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "kwbeam/pipeline.hpp"

namespace {

// --config is applied before the regular flag pass so that explicit flags
// can override values read from the file.
std::string find_config_arg(int argc, char **argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config") return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

void write_error_diagnostics(const std::string &path, const std::string &kind,
                             const std::string &message) {
    if (path.empty()) return;
    nlohmann::json j;
    j["error"] = kind;
    j["message"] = message;
    std::ofstream out(path);
    if (out) out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char **argv) {
    kwbeam::PipelineConfig cfg;
    std::string config_path = find_config_arg(argc, argv);
    std::string diagnostics_path;  // populated by enhance for error reporting
    try {
        if (!config_path.empty()) kwbeam::apply_config_file(cfg, config_path);
    } catch (const kwbeam::ValidationError &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    CLI::App app{"keyword-cued MVDR speech enhancement toolkit"};
    app.fallthrough(true);
    app.require_subcommand(1);

    std::string config_dummy;
    std::uint64_t seed = cfg.train.seed;
    bool seed_given = false;
    unsigned jobs = cfg.jobs;
    app.add_option("--config", config_dummy, "key = value configuration file");
    app.add_option("--seed", seed, "master seed for simulation and training")
        ->each([&](const std::string &) { seed_given = true; });
    app.add_option("--jobs", jobs, "worker threads (0 = hardware)");

    // simulate
    auto *sim = app.add_subcommand("simulate", "render synthetic evaluation scenes");
    kwbeam::SimulateOptions sim_opts;
    sim->add_option("--scenes", sim_opts.scene_spec_path, "JSON scene spec file");
    sim->add_option("--out", sim_opts.out_dir, "output directory")->required();
    sim->add_option("--count", sim_opts.batch_count, "batch mode: number of scenes");
    sim->add_option("--targets", sim_opts.batch_targets, "batch mode: target identities");
    sim->add_option("--interferers", sim_opts.batch_interferers,
                    "batch mode: interferer identities");
    sim->add_option("--snr", sim_opts.batch_snr_db, "batch mode: mixing SNR in dB");
    sim->add_option("--min-separation", sim_opts.batch_min_separation_deg,
                    "batch mode: minimum azimuth separation in degrees");

    // train
    auto *train = app.add_subcommand("train", "train the keyword mask estimator");
    kwbeam::TrainOptions train_opts;
    train->add_option("--manifest", train_opts.manifest_path,
                      "JSONL manifest of keyword/background recordings");
    train->add_option("--out", train_opts.model_out, "output model file")->required();
    train->add_option("--loss-log", train_opts.loss_log_out, "per-epoch loss CSV");
    train->add_option("--mixtures", train_opts.mixture_count, "training mixtures to draw");
    train->add_option("--synth-keywords", train_opts.synth_keywords,
                      "synthetic keyword utterances when no manifest is given");
    train->add_option("--synth-backgrounds", train_opts.synth_backgrounds,
                      "synthetic background utterances when no manifest is given");
    train->add_option("--synth-speakers", train_opts.synth_speakers,
                      "distinct synthetic voices per corpus");
    train->add_option("--epochs", cfg.train.epochs, "training epochs");
    train->add_option("--lr", cfg.train.learning_rate, "SGD learning rate");
    train->add_option("--batch", cfg.train.batch_size, "mini-batch size");

    // enhance
    auto *enh = app.add_subcommand("enhance", "beamform one mixture from its keyword region");
    kwbeam::EnhanceOptions enh_opts;
    enh->add_option("--model", enh_opts.model_path, "trained model file");
    enh->add_option("--in", enh_opts.mixture_wav, "multichannel mixture WAV")->required();
    enh->add_option("--regions", enh_opts.regions_tsv, "keyword region annotations (TSV)")
        ->required();
    enh->add_option("--out", enh_opts.out_wav, "enhanced mono WAV")->required();
    enh->add_option("--diagnostics", enh_opts.diagnostics_out,
                    "diagnostics JSON (default <out>.diag.json)");
    enh->add_option("--save-filter", enh_opts.filter_out, "dump the KWBF1 filter");
    enh->add_flag("--oracle", enh_opts.oracle, "use IBM from clean references");
    enh->add_option("--clean-target", enh_opts.clean_target_wav, "oracle: clean target WAV");
    enh->add_option("--clean-interference", enh_opts.clean_interference_wav,
                    "oracle: clean interference WAV");

    // evaluate
    auto *eval = app.add_subcommand("evaluate", "SDRi and SIR metrics over a scene tree");
    kwbeam::EvaluateOptions eval_opts;
    eval->add_option("--model", eval_opts.model_path, "trained model file")->required();
    eval->add_option("--scenes", eval_opts.scenes_dir, "directory of rendered scenes")
        ->required();
    eval->add_option("--csv", eval_opts.csv_out, "per-scene CSV report");
    eval->add_option("--json", eval_opts.json_out, "aggregate JSON report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    }

    if (jobs > 0) kwbeam::set_job_count(jobs);
    if (seed_given) cfg.train.seed = seed;
    sim_opts.seed = seed;
    train_opts.seed = seed;

    try {
        cfg.validate();
        if (sim->parsed()) {
            const auto dirs = kwbeam::run_simulate(cfg, sim_opts);
            std::printf("rendered %zu scenes under %s\n", dirs.size(),
                        sim_opts.out_dir.c_str());
        } else if (train->parsed()) {
            const auto result = kwbeam::run_train(cfg, train_opts);
            for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
                std::printf("epoch %zu: mean loss %.6f\n", e + 1, result.epoch_losses[e]);
            std::printf("model written to %s\n", train_opts.model_out.c_str());
        } else if (enh->parsed()) {
            diagnostics_path = enh_opts.diagnostics_out.empty()
                                   ? enh_opts.out_wav + ".diag.json"
                                   : enh_opts.diagnostics_out;
            const auto result = kwbeam::run_enhance(cfg, enh_opts);
            std::printf("enhanced %s -> %s (%d filter estimation)\n",
                        enh_opts.mixture_wav.c_str(), enh_opts.out_wav.c_str(),
                        result.diagnostics.filter_estimations);
        } else if (eval->parsed()) {
            const auto result = kwbeam::run_evaluate(cfg, eval_opts);
            std::printf("scenes: %zu\n", result.scenes.size());
            std::printf("SDRi m^(k):   %6.2f +- %.2f dB\n", result.sdri_mk.mean,
                        result.sdri_mk.stddev);
            std::printf("SDRi IBM^(k): %6.2f +- %.2f dB\n", result.sdri_ibmk.mean,
                        result.sdri_ibmk.stddev);
            std::printf("SDRi m^(n):   %6.2f +- %.2f dB\n", result.sdri_mn.mean,
                        result.sdri_mn.stddev);
            std::printf("SDRi IBM^(n): %6.2f +- %.2f dB\n", result.sdri_ibmn.mean,
                        result.sdri_ibmn.stddev);
            std::printf("SIR improvement estimated: %6.2f dB, oracle IBM: %6.2f dB\n",
                        result.sir_estimated.mean, result.sir_oracle.mean);
        }
    } catch (const kwbeam::NumericError &e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        write_error_diagnostics(diagnostics_path, "numeric", e.what());
        return 3;
    } catch (const kwbeam::ValidationError &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        write_error_diagnostics(diagnostics_path, "validation", e.what());
        return 2;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        write_error_diagnostics(diagnostics_path, "internal", e.what());
        return 3;
    }
    return 0;
}
