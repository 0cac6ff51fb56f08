#include "fftrain/cli/config.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <fstream>
#include <iterator>
#include <set>
#include <utility>

namespace fftrain::cli {

using nlohmann::json;

std::string_view to_string(RunMode mode)
{
    switch (mode) {
    case RunMode::ffa: return "ffa";
    case RunMode::bp: return "bp";
    case RunMode::hybrid: return "hybrid";
    }
    return "hybrid";
}

namespace {

// Reads the keys of one JSON object, remembering which were used so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path)
        : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) {
            throw ConfigError(fmt::format("config {} must be an object", where()));
        }
    }

    const json* find(const std::string& key)
    {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void read(const std::string& key, bool& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) {
                throw ConfigError(fmt::format("config key '{}' must be true or false", name(key)));
            }
            out = v->get<bool>();
        }
    }

    void read(const std::string& key, double& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_number()) {
                throw ConfigError(fmt::format("config key '{}' must be a number", name(key)));
            }
            out = v->get<double>();
        }
    }

    template <typename Int>
        requires std::is_integral_v<Int>
    void read(const std::string& key, Int& out)
    {
        if (const json* v = find(key)) {
            out = integer<Int>(*v, name(key));
        }
    }

    void read(const std::string& key, std::string& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_string()) {
                throw ConfigError(fmt::format("config key '{}' must be a string", name(key)));
            }
            out = v->get<std::string>();
        }
    }

    void read(const std::string& key, std::filesystem::path& out)
    {
        std::string text = out.string();
        read(key, text);
        out = text;
    }

    template <typename Enum>
    void read_enum(const std::string& key, Enum& out, std::initializer_list<std::pair<std::string_view, Enum>> names)
    {
        const json* v = find(key);
        if (v == nullptr) {
            return;
        }
        std::string allowed;
        if (v->is_string()) {
            const auto text = v->get<std::string>();
            for (const auto& [label, value] : names) {
                if (text == label) {
                    out = value;
                    return;
                }
            }
        }
        for (const auto& [label, value] : names) {
            allowed += allowed.empty() ? "" : ", ";
            allowed += label;
        }
        throw ConfigError(fmt::format("config key '{}' must be one of: {}", name(key), allowed));
    }

    Section child(const std::string& key)
    {
        static const json empty = json::object();
        const json* v = find(key);
        return Section(v == nullptr ? empty : *v, name(key));
    }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (seen_.count(key) == 0) {
                throw ConfigError(fmt::format("unknown config key '{}'", name(key)));
            }
        }
    }

    template <typename Int>
    static Int integer(const json& v, const std::string& key)
    {
        if (v.is_number_unsigned()) {
            const auto value = v.get<std::uint64_t>();
            if (value <= static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) {
                return static_cast<Int>(value);
            }
        } else if (v.is_number_integer()) {
            const auto value = v.get<std::int64_t>();
            if (std::is_signed_v<Int> ? value >= static_cast<std::int64_t>(std::numeric_limits<Int>::min())
                                            && value <= static_cast<std::int64_t>(std::numeric_limits<Int>::max())
                                      : value >= 0) {
                return static_cast<Int>(value);
            }
        }
        throw ConfigError(fmt::format("config key '{}' must be an integer in range", key));
    }

private:
    std::string where() const { return path_.empty() ? "document" : fmt::format("section '{}'", path_); }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_monitor(Section& s, Monitor& out)
{
    s.read_enum("monitor", out, {{"train_loss", Monitor::train_loss}, {"test_error", Monitor::test_error}});
}

void read_theta(Section& s, std::vector<double>& theta)
{
    const json* v = s.find("theta");
    if (v == nullptr || v->is_null()) {
        return;
    }
    if (v->is_number()) {
        theta = {v->get<double>()};
        return;
    }
    if (v->is_array()) {
        theta.clear();
        for (const auto& item : *v) {
            if (!item.is_number()) {
                throw ConfigError("config key 'ffa.theta' must hold numbers");
            }
            theta.push_back(item.get<double>());
        }
        return;
    }
    throw ConfigError("config key 'ffa.theta' must be null, a number or an array of numbers");
}

void apply_override(json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    json* node = &doc;
    std::string::size_type start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) {
            throw ConfigError(fmt::format("override key '{}' has an empty component", path));
        }
        if (!node->is_object()) {
            throw ConfigError(fmt::format("override key '{}' descends into a non-object", path));
        }
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) {
            *node = json::object();
        }
        start = dot + 1;
    }
}

} // namespace

void ExperimentConfig::validate() const
{
    if (dataset.empty()) {
        throw ConfigError("config key 'dataset' is required");
    }
    if (output_dir.empty()) {
        throw ConfigError("config key 'output_dir' must not be empty");
    }
    if (hidden.empty()) {
        throw ConfigError("config key 'hidden' must list at least one layer width");
    }
    for (const std::size_t width : hidden) {
        if (width == 0) {
            throw ConfigError("hidden layer widths must be positive");
        }
    }
    if (stages.ffa.theta.size() > 1 && stages.ffa.theta.size() != hidden.size()) {
        throw ConfigError(fmt::format("ffa.theta lists {} thresholds for {} hidden layers", stages.ffa.theta.size(),
                                      hidden.size()));
    }
    if (stages.ffa.goodness_layers_for_prediction == GoodnessLayers::skip_first && hidden.size() < 2) {
        throw ConfigError("goodness_layers_for_prediction 'skip_first' needs at least two hidden layers");
    }
    stages.validate();
}

ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides)
{
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("malformed config JSON: {}", e.what()));
    }
    if (!doc.is_object()) {
        throw ConfigError("config document must be a JSON object");
    }
    for (const auto& assignment : overrides) {
        apply_override(doc, assignment);
    }

    ExperimentConfig cfg;
    Section root(doc, "");
    root.read("dataset", cfg.dataset);
    root.read_enum("mode", cfg.mode, {{"ffa", RunMode::ffa}, {"bp", RunMode::bp}, {"hybrid", RunMode::hybrid}});
    root.read("seed", cfg.seed);
    root.read("output_dir", cfg.output_dir);
    root.read("record_wall_time", cfg.record_wall_time);
    if (const json* hidden = root.find("hidden")) {
        if (!hidden->is_array()) {
            throw ConfigError("config key 'hidden' must be an array of layer widths");
        }
        cfg.hidden.clear();
        for (const auto& width : *hidden) {
            cfg.hidden.push_back(Section::integer<std::size_t>(width, "hidden"));
        }
    }

    Section data = root.child("data");
    data.read_enum("normalization", cfg.normalization,
                   {{"unit_range", Normalization::unit_range}, {"minmax_per_image", Normalization::minmax_per_image}});
    data.finish();

    TrainConfig& bp = cfg.stages.bp;
    Section bps = root.child("bp");
    bps.read("epochs", bp.epochs);
    bps.read("batch_size", bp.batch_size);
    bps.read("lr", bp.lr);
    bps.read("shuffle", bp.shuffle);
    read_monitor(bps, bp.monitor);
    bps.read_enum("optimizer", bp.optimizer, {{"adam", OptimizerKind::adam}, {"sgd", OptimizerKind::sgd}});
    bps.read("checkpoint_best", cfg.bp_checkpoint_best);
    bps.finish();

    FfaConfig& ffa = cfg.stages.ffa;
    Section ffs = root.child("ffa");
    ffs.read("epochs", ffa.epochs);
    ffs.read("batch_size", ffa.batch_size);
    ffs.read("lr", ffa.lr);
    read_theta(ffs, ffa.theta);
    ffs.read_enum("inter_layer_normalization", ffa.inter_layer_normalization,
                  {{"l2_direction", InterLayerNorm::l2_direction}, {"none", InterLayerNorm::none}});
    ffs.read_enum("goodness_layers_for_prediction", ffa.goodness_layers_for_prediction,
                  {{"all", GoodnessLayers::all}, {"skip_first", GoodnessLayers::skip_first}});
    ffs.read_enum("schedule", ffa.schedule, {{"streaming", FfaSchedule::streaming}, {"greedy", FfaSchedule::greedy}});
    read_monitor(ffs, ffa.monitor);
    ffs.read("checkpoint_best", cfg.ffa_checkpoint_best);
    ffs.finish();

    Section hyb = root.child("hybrid");
    hyb.read_enum("mode", cfg.stages.mode,
                  {{"head_only", HybridMode::head_only}, {"full_finetune", HybridMode::full_finetune}});
    hyb.read_enum("overlay_at_stage2", cfg.stages.overlay_at_stage2,
                  {{"neutral", InputPolicy::neutral}, {"true_label", InputPolicy::true_label}});
    hyb.finish();
    root.finish();

    if (ffa.theta.size() == 1 && cfg.hidden.size() > 1) {
        ffa.theta.assign(cfg.hidden.size(), ffa.theta.front());
    }
    bp.seed = cfg.seed;
    ffa.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError(fmt::format("cannot open config file {}", path.string()));
    }
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text, overrides);
}

json config_to_json(const ExperimentConfig& cfg)
{
    const TrainConfig& bp = cfg.stages.bp;
    const FfaConfig& ffa = cfg.stages.ffa;
    json theta = ffa.theta.empty() ? json(nullptr) : json(ffa.theta);
    return {
        {"dataset", cfg.dataset.generic_string()},
        {"mode", to_string(cfg.mode)},
        {"seed", cfg.seed},
        {"output_dir", cfg.output_dir.generic_string()},
        {"hidden", cfg.hidden},
        {"record_wall_time", cfg.record_wall_time},
        {"data", {{"normalization", cfg.normalization == Normalization::unit_range ? "unit_range" : "minmax_per_image"}}},
        {"bp",
         {{"epochs", bp.epochs},
          {"batch_size", bp.batch_size},
          {"lr", bp.lr},
          {"shuffle", bp.shuffle},
          {"monitor", fftrain::to_string(bp.monitor)},
          {"optimizer", bp.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"checkpoint_best", cfg.bp_checkpoint_best}}},
        {"ffa",
         {{"epochs", ffa.epochs},
          {"batch_size", ffa.batch_size},
          {"lr", ffa.lr},
          {"theta", theta},
          {"inter_layer_normalization",
           ffa.inter_layer_normalization == InterLayerNorm::l2_direction ? "l2_direction" : "none"},
          {"goodness_layers_for_prediction",
           ffa.goodness_layers_for_prediction == GoodnessLayers::all ? "all" : "skip_first"},
          {"schedule", ffa.schedule == FfaSchedule::streaming ? "streaming" : "greedy"},
          {"monitor", fftrain::to_string(ffa.monitor)},
          {"checkpoint_best", cfg.ffa_checkpoint_best}}},
        {"hybrid",
         {{"mode", cfg.stages.mode == HybridMode::head_only ? "head_only" : "full_finetune"},
          {"overlay_at_stage2", fftrain::to_string(cfg.stages.overlay_at_stage2)}}},
    };
}

} // namespace fftrain::cli
