// Command-line front end: make-fixture, train, evaluate, compare, inspect-overlay.
#include "fftrain/cli/commands.hpp"
#include "fftrain/error.hpp"
#include "fftrain/log.hpp"
#include "fftrain/matrix.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <charconv>
#include <cstdlib>
#include <iostream>

namespace {

using namespace fftrain;

void configure_threads()
{
    const char* env = std::getenv("FF_TRAINER_THREADS");
    if (env == nullptr || *env == '\0') {
        return;
    }
    unsigned count = 0;
    const std::string_view text(env);
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), count);
    if (ec != std::errc() || end != text.data() + text.size() || count == 0) {
        throw ConfigError(fmt::format("FF_TRAINER_THREADS must be a positive integer, got '{}'", text));
    }
    set_math_threads(count);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Forward-forward / backpropagation trainer"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log per-epoch progress to stderr");

    cli::FixtureCommand fixture;
    fixture.output = "fixture";
    auto* make_fixture = app.add_subcommand("make-fixture", "Write the synthetic separable dataset");
    make_fixture->add_option("--out", fixture.output, "Dataset root to create")->capture_default_str();
    make_fixture->add_option("--classes", fixture.options.classes)->capture_default_str();
    make_fixture->add_option("--samples", fixture.options.samples)->capture_default_str();
    make_fixture->add_option("--seed", fixture.options.seed)->capture_default_str();
    make_fixture->add_option("--label-noise", fixture.options.label_noise, "Fraction of relabeled samples")
        ->capture_default_str();
    make_fixture->add_option("--spread", fixture.options.spread, "Per-feature standard deviation")
        ->capture_default_str();

    std::string config_path;
    std::vector<std::string> overrides;
    std::string resume;
    auto* train = app.add_subcommand("train", "Train one mode from a config file");
    train->add_option("--config", config_path, "Experiment JSON")->required();
    train->add_option("--set", overrides, "Override a config key: dotted.key=value");
    train->add_option("--resume", resume, "Continue from a checkpoint of the same run");

    cli::EvaluateCommand evaluate;
    std::string split = "test";
    std::string results;
    auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
    eval->add_option("--checkpoint", evaluate.checkpoint)->required();
    eval->add_option("--dataset", evaluate.dataset)->required();
    eval->add_option("--split", split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
    eval->add_option("--results", results, "CSV to append to (default: next to the checkpoint)");

    auto* compare = app.add_subcommand("compare", "Train ffa, bp and hybrid on one split and tabulate");
    compare->add_option("--config", config_path, "Experiment JSON")->required();
    compare->add_option("--set", overrides, "Override a config key: dotted.key=value");

    cli::InspectCommand inspect;
    auto* overlay = app.add_subcommand("inspect-overlay", "Dump positive/negative overlay images");
    overlay->add_option("--dataset", inspect.dataset)->required();
    overlay->add_option("--index", inspect.indices, "Sample row(s) in labels.csv order")->required();
    overlay->add_option("--n", inspect.n, "Overlay width (default: class count)");
    overlay->add_option("--seed", inspect.seed)->capture_default_str();
    overlay->add_option("--out", inspect.output)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitConfig;
    }
    log::verbose() = verbose;
    retain_large_allocations();

    try {
        configure_threads();
        if (*make_fixture) {
            cli::cmd_make_fixture(fixture, std::cout);
        } else if (*train) {
            const auto cfg = cli::load_config(config_path, overrides);
            cli::cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume),
                           std::cout);
        } else if (*eval) {
            evaluate.split = split == "train" ? cli::SplitChoice::train : cli::SplitChoice::test;
            if (!results.empty()) {
                evaluate.results = results;
            }
            cli::cmd_evaluate(evaluate, std::cout);
        } else if (*compare) {
            cli::cmd_compare(cli::load_config(config_path, overrides), std::cout);
        } else if (*overlay) {
            cli::cmd_inspect_overlay(inspect, std::cout);
        }
    } catch (...) {
        return cli::report_error(std::cerr);
    }
    return cli::kExitOk;
}
