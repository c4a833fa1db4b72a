#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>

#include "melrefine/pipeline.hpp"

using namespace melrefine;

namespace {

AppConfig config_or_default(const std::string& path) {
    return path.empty() ? AppConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mel-spectrogram refinement with conditional flow matching"};
    app.require_subcommand(1);

    std::string config_path;
    std::string input, output, checkpoint, manifest, report;
    std::uint64_t seed = 0;
    std::size_t steps = 64;
    bool quiet = false;

    auto* simulate = app.add_subcommand("simulate", "Build a paired (clean, distorted) dataset");
    simulate->add_option("--config", config_path, "YAML config file")->required()->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "Train the refiner on a pair manifest");
    train->add_option("--config", config_path, "YAML config file")->required()->check(CLI::ExistingFile);
    train->add_flag("--quiet", quiet, "Do not print the loss log");

    auto* refine = app.add_subcommand("refine", "Refine one WAV file");
    refine->add_option("input", input, "Distorted WAV")->required()->check(CLI::ExistingFile);
    refine->add_option("checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    refine->add_option("output", output, "Refined WAV to write")->required();
    refine->add_option("--seed", seed, "Prior sample seed")->capture_default_str();
    refine->add_option("--steps", steps, "Euler steps")->capture_default_str()->check(CLI::PositiveNumber);
    refine->add_option("--config", config_path, "YAML config file (dsp settings)")->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "Score a manifest; writes one line per record");
    eval->add_option("manifest", manifest, "Pair manifest")->required()->check(CLI::ExistingFile);
    eval->add_option("report", report, "Report file to write")->required();
    eval->add_option("--checkpoint", checkpoint, "Checkpoint used for records without refined_path")
        ->check(CLI::ExistingFile);
    eval->add_option("--seed", seed, "Prior sample seed")->capture_default_str();
    eval->add_option("--steps", steps, "Euler steps")->capture_default_str()->check(CLI::PositiveNumber);
    eval->add_option("--config", config_path, "YAML config file (dsp settings)")->check(CLI::ExistingFile);

    auto* plot = app.add_subcommand("plot", "Render a WAV or CSV log-mel as a PNG spectrogram");
    plot->add_option("input", input, "Input .wav or .csv")->required()->check(CLI::ExistingFile);
    plot->add_option("output", output, "PNG to write")->required();
    plot->add_option("--config", config_path, "YAML config file (dsp settings)")->check(CLI::ExistingFile);

    app.add_subcommand("default-config", "Print an annotated config with every default");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            const PairManifest m = run_simulate(load_config(config_path));
            std::cout << "wrote " << m.records.size() << " pairs\n";
        } else if (train->parsed()) {
            const AppConfig config = load_config(config_path);
            const std::size_t every = config.train.log_interval;
            double window = 0.0;
            std::size_t count = 0;
            const Checkpoint ck = run_train(config, [&](std::uint64_t step, double loss) {
                window += loss;
                ++count;
                if (quiet || every == 0 || (step % every != 0 && step != config.train.total_steps)) return;
                std::printf("step %llu loss %.6f\n", static_cast<unsigned long long>(step), window / count);
                std::fflush(stdout);
                window = 0.0;
                count = 0;
            });
            std::cout << "checkpoint " << config.train_io.checkpoint.string() << " at step " << ck.step << '\n';
        } else if (refine->parsed()) {
            AppConfig config = config_or_default(config_path);
            config.refine.seed = seed;
            config.refine.n_steps = steps;
            run_refine(input, checkpoint, output, config);
        } else if (eval->parsed()) {
            AppConfig config = config_or_default(config_path);
            config.refine.seed = seed;
            config.refine.n_steps = steps;
            const auto records = run_eval(manifest, checkpoint, report, config);
            std::cout << "evaluated " << records.size() << " records\n";
        } else if (plot->parsed()) {
            run_plot(input, output, config_or_default(config_path).dsp);
        } else {
            std::cout << default_config_text();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
