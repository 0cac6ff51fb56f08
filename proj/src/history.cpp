#include "fftrain/history.hpp"

#include <fmt/core.h>

#include <cmath>
#include <limits>
#include <ostream>

namespace fftrain {

std::string format_number(double value)
{
    return std::isfinite(value) ? fmt::format("{}", value) : std::string();
}

void write_history_csv(std::ostream& out, std::span<const RunHistory> runs, bool include_seconds)
{
    out << "stage,epoch,split,loss,error_rate,roc_auc,seconds,layer_idx,g_pos_mean,g_neg_mean,local_loss\n";
    for (const auto& run : runs) {
        for (const auto& rec : run.epochs) {
            const std::string seconds = include_seconds ? format_number(rec.seconds) : std::string();
            for (const auto& [split, m] : {std::pair{"train", &rec.train}, std::pair{"test", &rec.test}}) {
                out << run.stage << ',' << rec.epoch << ',' << split << ',' << format_number(m->loss) << ','
                    << format_number(m->error_rate) << ',' << format_number(m->roc_auc) << ',' << seconds
                    << ",,,,\n";
            }
            for (const auto& layer : rec.layers) {
                out << run.stage << ',' << rec.epoch << ",layer,,,," << seconds << ',' << layer.layer << ','
                    << format_number(layer.g_pos_mean) << ',' << format_number(layer.g_neg_mean) << ','
                    << format_number(layer.local_loss) << '\n';
            }
        }
    }
}

namespace {

nlohmann::json number_json(double value)
{
    return std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
}

double json_number(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json metrics_json(const SplitMetrics& m)
{
    return {{"loss", number_json(m.loss)}, {"error_rate", number_json(m.error_rate)},
            {"roc_auc", number_json(m.roc_auc)}};
}

SplitMetrics metrics_from_json(const nlohmann::json& j)
{
    return SplitMetrics{json_number(j.at("loss")), json_number(j.at("error_rate")), json_number(j.at("roc_auc"))};
}

} // namespace

nlohmann::json history_to_json(const RunHistory& history)
{
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& rec : history.epochs) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& layer : rec.layers) {
            layers.push_back({{"layer", layer.layer}, {"g_pos_mean", number_json(layer.g_pos_mean)},
                              {"g_neg_mean", number_json(layer.g_neg_mean)},
                              {"local_loss", number_json(layer.local_loss)}});
        }
        epochs.push_back({{"epoch", rec.epoch}, {"train", metrics_json(rec.train)}, {"test", metrics_json(rec.test)},
                          {"seconds", number_json(rec.seconds)}, {"layers", layers}});
    }
    return {{"stage", history.stage}, {"epochs", epochs}};
}

RunHistory history_from_json(const nlohmann::json& j)
{
    RunHistory history;
    history.stage = j.at("stage").get<std::string>();
    for (const auto& e : j.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train = metrics_from_json(e.at("train"));
        rec.test = metrics_from_json(e.at("test"));
        rec.seconds = json_number(e.at("seconds"));
        for (const auto& l : e.at("layers")) {
            rec.layers.push_back(LayerTrace{l.at("layer").get<std::size_t>(), json_number(l.at("g_pos_mean")),
                                            json_number(l.at("g_neg_mean")), json_number(l.at("local_loss"))});
        }
        history.epochs.push_back(std::move(rec));
    }
    return history;
}

} // namespace fftrain
