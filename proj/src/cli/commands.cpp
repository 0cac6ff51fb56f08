#include "fftrain/cli/commands.hpp"

#include "fftrain/checkpoint.hpp"
#include "fftrain/error.hpp"
#include "fftrain/log.hpp"

#include <fmt/core.h>
#include <fmt/ostream.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <ostream>

namespace fftrain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int report_error(std::ostream& err)
{
    try {
        throw;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kExitData;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}

std::string hash_hex(std::uint64_t hash)
{
    return fmt::format("{:016x}", hash);
}

namespace {

constexpr const char* kResultsHeader = "mode,dataset,split,error_rate,roc_auc\n";

std::string dataset_name(const fs::path& root)
{
    const fs::path clean = root.lexically_normal();
    const std::string name = (clean.has_filename() ? clean.filename() : clean.parent_path().filename()).string();
    return name.empty() ? root.string() : name;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw DataError(fmt::format("cannot write {}", path.string()));
    }
}

void write_json(const fs::path& path, const json& j)
{
    write_text(path, j.dump(2) + "\n");
}

void write_histories(const fs::path& path, std::span<const RunHistory> runs, bool include_seconds)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    write_history_csv(out, runs, include_seconds);
    if (!out) {
        throw DataError(fmt::format("cannot write {}", path.string()));
    }
}

void append_result(const fs::path& path, std::string_view mode, std::string_view dataset, std::string_view split,
                   const SplitMetrics& m)
{
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (fresh) {
        out << kResultsHeader;
    }
    out << mode << ',' << dataset << ',' << split << ',' << format_number(m.error_rate) << ','
        << format_number(m.roc_auc) << '\n';
    if (!out) {
        throw DataError(fmt::format("cannot write {}", path.string()));
    }
}

DatasetSplit load_split(const ExperimentConfig& cfg)
{
    PreparedDataset prepared = load_samples(cfg.dataset, cfg.normalization);
    if (prepared.class_names.size() < 2) {
        throw DataError(fmt::format("dataset {} has {} class(es); at least 2 are needed", cfg.dataset.string(),
                                    prepared.class_names.size()));
    }
    return split_8_2(std::move(prepared.samples), std::move(prepared.class_names), cfg.seed);
}

// Scores used for the reported metrics of a trained model.
struct Predictor {
    bool goodness = false;
    InputPolicy policy = InputPolicy::raw;
    FfaConfig ffa;
};

Predictor predictor_for(RunMode mode, const ExperimentConfig& cfg)
{
    Predictor p;
    p.goodness = mode == RunMode::ffa;
    p.policy = mode == RunMode::hybrid ? cfg.stages.overlay_at_stage2 : InputPolicy::raw;
    p.ffa = cfg.stages.ffa;
    return p;
}

Matrix predictor_scores(const Network& net, std::span<const Sample> samples, const Predictor& p)
{
    if (!p.goodness) {
        return softmax_probabilities(net, samples, p.policy);
    }
    Matrix scores = goodness_scores(net, samples, net.class_count, p.ffa.goodness_layers_for_prediction);
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r);
        double total = 0.0;
        for (const double v : row) {
            total += v;
        }
        for (double& v : row) {
            v = total > 0.0 ? v / total : 1.0 / static_cast<double>(row.size());
        }
    }
    return scores;
}

SplitMetrics final_metrics(const Network& net, std::span<const Sample> samples, const Predictor& p)
{
    if (p.goodness) {
        return evaluate_goodness(net, samples, p.ffa);
    }
    return evaluate_softmax(net, samples, p.policy);
}

json base_meta(const ExperimentConfig& cfg, RunMode mode, const DatasetSplit& split)
{
    const Predictor p = predictor_for(mode, cfg);
    json resolved = config_to_json(cfg);
    resolved["mode"] = to_string(mode);
    return {
        {"mode", to_string(mode)},
        {"predictor", p.goodness ? "goodness" : "softmax"},
        {"input_policy", fftrain::to_string(p.policy)},
        {"seed", cfg.seed},
        {"split_hash", hash_hex(split.membership_hash())},
        {"config", resolved},
    };
}

struct StageOne {
    Network net;
    RunHistory history;
    TrainingResume state;
};

struct ModeRun {
    ModeResult result;
    StageOne ffa_stage; // filled for ffa runs so a hybrid run can reuse it
};

ModeRun run_mode(const ExperimentConfig& cfg, RunMode mode, const DatasetSplit& split, const fs::path& dir,
                 const std::optional<fs::path>& resume_path, const StageOne* pretrained)
{
    fs::create_directories(dir);
    const json meta = base_meta(cfg, mode, split);
    json run = {{"config", meta["config"]},
                {"split_hash", meta["split_hash"]},
                {"train_size", split.train.size()},
                {"test_size", split.test.size()},
                {"class_names", split.class_names}};
    if (resume_path) {
        run["resumed_from"] = resume_path->generic_string();
    }
    write_json(dir / "run.json", run);

    std::optional<Checkpoint> resume_ckpt;
    if (resume_path) {
        resume_ckpt = load_checkpoint(*resume_path);
        const json& m = resume_ckpt->meta;
        if (m.value("mode", "") != to_string(mode)) {
            throw ConfigError(fmt::format("checkpoint was written by mode '{}', config selects '{}'",
                                          m.value("mode", "?"), to_string(mode)));
        }
        if (m.value("split_hash", "") != meta["split_hash"].get<std::string>()) {
            throw DataError("checkpoint was trained on a different train/test split");
        }
    }

    Architecture arch;
    arch.input_dim = split.input_dim();
    arch.hidden = cfg.hidden;
    arch.class_count = split.class_count;
    Network net = resume_ckpt ? resume_ckpt->net : init_network(arch, cfg.seed);
    if (net.class_count != split.class_count || net.input_dim != split.input_dim()) {
        throw DataError(fmt::format("checkpoint has {} classes and input width {}, dataset has {} and {}",
                                    net.class_count, net.input_dim, split.class_count, split.input_dim()));
    }

    const auto target = [&](bool enabled, const char* file, json stage_meta) {
        CheckpointTarget t;
        if (enabled) {
            t.path = dir / file;
        }
        t.meta = std::move(stage_meta);
        return t;
    };
    const std::string resume_stage = resume_ckpt ? resume_ckpt->meta.value("stage", "") : std::string();
    std::optional<TrainingResume> state;
    if (resume_ckpt) {
        state = resume_from(resume_ckpt->meta, resume_ckpt->optimizers, resume_ckpt->epoch);
    }

    ModeRun out;
    std::vector<RunHistory> histories;
    TrainingResume final_state;
    json final_meta = meta;
    const auto save_final = [&](const RunHistory& history, const fs::path& path, const json& m) {
        CheckpointTarget t;
        t.path = path;
        t.meta = m;
        save_training_checkpoint(t, net, split.class_names, final_state.optimizers, history,
                                 history.stage == "ffa" ? cfg.stages.ffa.monitor : cfg.stages.bp.monitor,
                                 final_state.best_monitor);
    };

    if (mode == RunMode::bp) {
        TrainConfig tc = cfg.stages.bp;
        tc.checkpoint = target(cfg.bp_checkpoint_best, "best.ckpt", meta);
        histories.push_back(train_bp(net, split, tc, {}, state ? &*state : nullptr, &final_state));
        save_final(histories.back(), dir / "final.ckpt", meta);
    } else if (mode == RunMode::ffa) {
        FfaConfig fc = cfg.stages.ffa;
        fc.checkpoint = target(cfg.ffa_checkpoint_best, "best.ckpt", meta);
        histories.push_back(train_ffa(net, split, fc, state ? &*state : nullptr, &final_state));
        save_final(histories.back(), dir / "final.ckpt", meta);
        out.ffa_stage = StageOne{net, histories.back(), final_state};
    } else {
        json ffa_meta = meta;
        ffa_meta["predictor"] = "goodness";
        ffa_meta["input_policy"] = "raw";
        RunHistory ffa_history;
        const bool stage_two_resume = resume_ckpt && resume_stage == "bp";
        if (stage_two_resume) {
            if (!resume_ckpt->meta.contains("prior_history")) {
                throw CheckpointError("hybrid stage-2 checkpoint lacks the stage-1 history");
            }
            ffa_history = history_from_json(resume_ckpt->meta["prior_history"]);
        } else if (pretrained != nullptr && !resume_ckpt) {
            net = pretrained->net;
            ffa_history = pretrained->history;
            final_state = pretrained->state;
            save_final(ffa_history, dir / "stage1.ckpt", ffa_meta);
        } else {
            FfaConfig fc = cfg.stages.ffa;
            fc.checkpoint = target(cfg.ffa_checkpoint_best, "best_ffa.ckpt", ffa_meta);
            ffa_history = train_ffa(net, split, fc, state ? &*state : nullptr, &final_state);
            save_final(ffa_history, dir / "stage1.ckpt", ffa_meta);
        }
        final_meta["prior_history"] = history_to_json(ffa_history);
        TrainConfig tc = cfg.stages.bp;
        tc.checkpoint = target(cfg.bp_checkpoint_best, "best.ckpt", final_meta);
        HybridConfig hc = cfg.stages;
        hc.bp = tc;
        const RunHistory bp_history =
            refine_with_bp(net, split, hc, stage_two_resume ? &*state : nullptr, &final_state);
        save_final(bp_history, dir / "final.ckpt", final_meta);
        write_histories(dir / "history_ffa.csv", std::span(&ffa_history, 1), cfg.record_wall_time);
        write_histories(dir / "history_bp.csv", std::span(&bp_history, 1), cfg.record_wall_time);
        histories = {ffa_history, bp_history};
    }
    write_histories(dir / "history.csv", histories, cfg.record_wall_time);

    const Predictor p = predictor_for(mode, cfg);
    ModeResult& result = out.result;
    result.mode = mode;
    result.train = final_metrics(net, split.train, p);
    result.test = final_metrics(net, split.test, p);
    result.split_hash = split.membership_hash();

    const fs::path results = dir / "results.csv";
    fs::remove(results);
    const std::string name = dataset_name(cfg.dataset);
    append_result(results, to_string(mode), name, "train", result.train);
    append_result(results, to_string(mode), name, "test", result.test);
    return out;
}

void print_result(std::ostream& out, const ModeResult& r, const fs::path& dir)
{
    fmt::print(out, "{}: train error {:.2f}% auc {:.4f} | test error {:.2f}% auc {:.4f}  ({})\n", to_string(r.mode),
               r.train.error_rate, r.train.roc_auc, r.test.error_rate, r.test.roc_auc, dir.string());
}

std::string_view method_label(RunMode mode)
{
    switch (mode) {
    case RunMode::ffa: return "FFA";
    case RunMode::bp: return "BP";
    case RunMode::hybrid: return "FFA+BP";
    }
    return "?";
}

} // namespace

void cmd_make_fixture(const FixtureCommand& command, std::ostream& out)
{
    const RawDataset dataset = make_fixture(command.options);
    write_dataset(dataset, command.output);
    fmt::print(out, "wrote {} images in {} classes to {}\n", dataset.items.size(), dataset.class_count(),
               command.output.string());
}

ModeResult cmd_train(const ExperimentConfig& cfg, const std::optional<fs::path>& resume, std::ostream& out)
{
    const DatasetSplit split = load_split(cfg);
    fmt::print(out, "dataset {}: {} train / {} test, {} classes, split {}\n", cfg.dataset.string(),
               split.train.size(), split.test.size(), split.class_count, hash_hex(split.membership_hash()));
    const ModeRun run = run_mode(cfg, cfg.mode, split, cfg.output_dir, resume, nullptr);
    print_result(out, run.result, cfg.output_dir);
    return run.result;
}

EvalReport cmd_evaluate(const EvaluateCommand& command, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(command.checkpoint);
    ExperimentConfig cfg;
    RunMode mode = RunMode::bp;
    try {
        const json& meta = ckpt.meta;
        const std::string dataset_override =
            fmt::format("dataset={}", json(command.dataset.generic_string()).dump());
        cfg = parse_config(meta.at("config").dump(), {dataset_override});
        const std::string stage_mode = meta.at("mode").get<std::string>();
        mode = stage_mode == "ffa" ? RunMode::ffa : stage_mode == "bp" ? RunMode::bp : RunMode::hybrid;
        if (mode == RunMode::hybrid && meta.value("predictor", "") == "goodness") {
            mode = RunMode::ffa; // a stage-1 checkpoint of a hybrid run
        }
    } catch (const json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint meta lacks the run config: {}", e.what()));
    } catch (const ConfigError& e) {
        throw CheckpointError(fmt::format("checkpoint meta holds an invalid config: {}", e.what()));
    }

    PreparedDataset prepared = load_samples(command.dataset, cfg.normalization);
    if (prepared.class_names.size() != ckpt.net.class_count) {
        throw DataError(fmt::format("checkpoint has {} classes but dataset {} has {}", ckpt.net.class_count,
                                    command.dataset.string(), prepared.class_names.size()));
    }
    const DatasetSplit split = split_8_2(std::move(prepared.samples), std::move(prepared.class_names), cfg.seed);
    if (split.input_dim() != ckpt.net.input_dim) {
        throw DataError(fmt::format("checkpoint expects input width {}, dataset has {}", ckpt.net.input_dim,
                                    split.input_dim()));
    }
    Predictor p = predictor_for(mode, cfg);
    p.policy = parse_input_policy(ckpt.meta.value("input_policy", "raw"));

    const bool train_split = command.split == SplitChoice::train;
    const std::span<const Sample> samples = train_split ? split.train : split.test;
    if (samples.empty()) {
        throw DataError("selected split is empty");
    }
    const Matrix scores = predictor_scores(ckpt.net, samples, p);
    const EvalReport report = evaluate_scores(scores, collect_labels(samples));

    const std::string_view split_name = train_split ? "train" : "test";
    fmt::print(out, "{} on {} ({} split, {} samples)\n", to_string(mode), command.dataset.string(), split_name,
               samples.size());
    fmt::print(out, "error rate: {:.2f}%\nROC-AUC: {:.4f}\n", report.error_rate_percent, report.roc_auc);
    for (std::size_t c = 0; c < report.per_class_auc.size(); ++c) {
        fmt::print(out, "  class {} ({}): AUC {:.4f}\n", c, split.class_names[c], report.per_class_auc[c]);
    }
    fmt::print(out, "confusion matrix (rows truth, columns prediction):\n");
    for (const auto& row : report.confusion_matrix) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            fmt::print(out, "{}{:>6}", c == 0 ? "  " : " ", row[c]);
        }
        fmt::print(out, "\n");
    }

    const fs::path results = command.results.value_or(command.checkpoint.parent_path() / "results.csv");
    SplitMetrics m;
    m.error_rate = report.error_rate_percent;
    m.roc_auc = report.roc_auc;
    append_result(results, to_string(mode), dataset_name(command.dataset), split_name, m);
    return report;
}

std::vector<ModeResult> cmd_compare(const ExperimentConfig& cfg, std::ostream& out)
{
    const DatasetSplit split = load_split(cfg);
    fmt::print(out, "dataset {}: {} train / {} test, {} classes, split {}\n", cfg.dataset.string(),
               split.train.size(), split.test.size(), split.class_count, hash_hex(split.membership_hash()));
    fs::create_directories(cfg.output_dir);

    std::vector<ModeResult> results;
    // The hybrid's first stage is exactly the ffa run (same config, seed and
    // split), so its trained stack is reused instead of being retrained.
    const ModeRun ffa = run_mode(cfg, RunMode::ffa, split, cfg.output_dir / "ffa", std::nullopt, nullptr);
    print_result(out, ffa.result, cfg.output_dir / "ffa");
    results.push_back(ffa.result);
    const ModeRun bp = run_mode(cfg, RunMode::bp, split, cfg.output_dir / "bp", std::nullopt, nullptr);
    print_result(out, bp.result, cfg.output_dir / "bp");
    results.push_back(bp.result);
    const ModeRun hybrid =
        run_mode(cfg, RunMode::hybrid, split, cfg.output_dir / "hybrid", std::nullopt, &ffa.ffa_stage);
    print_result(out, hybrid.result, cfg.output_dir / "hybrid");
    results.push_back(hybrid.result);

    for (const auto& r : results) {
        if (r.split_hash != results.front().split_hash) {
            throw DataError("compare runs saw different train/test splits");
        }
    }

    const std::string name = dataset_name(cfg.dataset);
    const fs::path all_results = cfg.output_dir / "results.csv";
    fs::remove(all_results);
    for (const auto& r : results) {
        append_result(all_results, to_string(r.mode), name, "train", r.train);
        append_result(all_results, to_string(r.mode), name, "test", r.test);
    }
    {
        std::ofstream csv(cfg.output_dir / "report.csv", std::ios::binary | std::ios::trunc);
        write_report_csv(csv, results, name);
    }
    std::ostringstream text;
    write_report_text(text, results, name);
    write_text(cfg.output_dir / "report.txt", text.str());
    out << '\n' << text.str();
    return results;
}

void write_report_csv(std::ostream& out, const std::vector<ModeResult>& results, const std::string& dataset)
{
    out << "dataset,method,train_error_rate,test_error_rate,train_roc_auc,test_roc_auc\n";
    for (const auto& r : results) {
        out << dataset << ',' << method_label(r.mode) << ',' << format_number(r.train.error_rate) << ','
            << format_number(r.test.error_rate) << ',' << format_number(r.train.roc_auc) << ','
            << format_number(r.test.roc_auc) << '\n';
    }
}

void write_report_text(std::ostream& out, const std::vector<ModeResult>& results, const std::string& dataset)
{
    const auto cell = [](double v, int digits) {
        return std::isfinite(v) ? fmt::format("{:.{}f}", v, digits) : std::string("n/a");
    };
    fmt::print(out, "Error rate (%) on {}\n", dataset);
    fmt::print(out, "{:<8}{:>10}{:>10}\n", "Method", "train", "test");
    for (const auto& r : results) {
        fmt::print(out, "{:<8}{:>10}{:>10}\n", method_label(r.mode), cell(r.train.error_rate, 2),
                   cell(r.test.error_rate, 2));
    }
    fmt::print(out, "\nROC-AUC on {}\n", dataset);
    fmt::print(out, "{:<8}{:>10}{:>10}\n", "Method", "train", "test");
    for (const auto& r : results) {
        fmt::print(out, "{:<8}{:>10}{:>10}\n", method_label(r.mode), cell(r.train.roc_auc, 4), cell(r.test.roc_auc, 4));
    }
}

void cmd_inspect_overlay(const InspectCommand& command, std::ostream& out)
{
    const PreparedDataset prepared = load_samples(command.dataset, Normalization::unit_range);
    const std::size_t classes = prepared.class_names.size();
    const std::size_t n = command.n == 0 ? classes : command.n;
    if (n < 2) {
        throw ConfigError(fmt::format("overlay width must be at least 2, got {}", n));
    }
    if (n < classes) {
        throw ConfigError(fmt::format("overlay width {} cannot encode {} classes", n, classes));
    }
    if (command.indices.empty()) {
        throw ConfigError("no sample indices given");
    }
    for (const std::size_t i : command.indices) {
        if (i >= prepared.samples.size()) {
            throw DataError(fmt::format("sample index {} out of range: dataset has {} samples", i,
                                        prepared.samples.size()));
        }
    }
    fs::create_directories(command.output);
    SeededRng rng = SeededRng::stream(command.seed, "inspect/negatives");
    const auto components = [n](const Matrix& row) {
        std::string text;
        for (std::size_t c = 0; c < n; ++c) {
            text += fmt::format("{}{}", c == 0 ? "" : ",", row[c]);
        }
        return "[" + text + "]";
    };
    for (const std::size_t i : command.indices) {
        const Sample& s = prepared.samples[i];
        const std::size_t wrong = draw_wrong_label(s.label, n, rng);
        const Matrix positive = overlay_label(s.pixels, s.label, n);
        const Matrix negative = overlay_label(s.pixels, wrong, n);
        const fs::path pos_path = command.output / fmt::format("sample_{}_positive.png", i);
        const fs::path neg_path = command.output / fmt::format("sample_{}_negative.png", i);
        write_png(pos_path, unflatten(positive));
        write_png(neg_path, unflatten(negative));
        fmt::print(out, "sample {} (label {}, {})\n", i, s.label, prepared.class_names[s.label]);
        fmt::print(out, "  positive first {}: {}  -> {}\n", n, components(positive), pos_path.string());
        fmt::print(out, "  negative first {}: {}  (label {}) -> {}\n", n, components(negative), wrong,
                   neg_path.string());
    }
}

} // namespace fftrain::cli
