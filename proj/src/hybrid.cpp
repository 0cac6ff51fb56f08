#include "fftrain/hybrid.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

namespace fftrain {

void HybridConfig::validate() const
{
    ffa.validate();
    bp.validate();
    if (overlay_at_stage2 == InputPolicy::raw) {
        throw ConfigError("hybrid overlay_at_stage2 must be 'neutral' or 'true_label'");
    }
}

HybridHistory train_hybrid(Network& net, const DatasetSplit& data, const HybridConfig& cfg)
{
    cfg.validate();
    HybridHistory history;
    history.ffa_stage = train_ffa(net, data, cfg.ffa);
    history.bp_stage = refine_with_bp(net, data, cfg);
    return history;
}

RunHistory refine_with_bp(Network& net, const DatasetSplit& data, const HybridConfig& cfg,
                          const TrainingResume* resume, TrainingResume* final_state)
{
    cfg.validate();
    BpOptions options;
    options.scope = cfg.mode == HybridMode::head_only ? GradientScope::head_only : GradientScope::all;
    options.input = cfg.overlay_at_stage2;
    options.stage = "bp";
    return train_bp(net, data, cfg.bp, options, resume, final_state);
}

Matrix predict_softmax_batch(const Network& net, const Matrix& x, InputPolicy policy,
                             std::span<const std::size_t> labels)
{
    if (policy == InputPolicy::true_label && labels.size() != x.rows()) {
        throw ShapeError(fmt::format("true_label policy needs {} labels, got {}", x.rows(), labels.size()));
    }
    Matrix input = x;
    apply_input_policy(input, policy, net.class_count, labels);
    return forward_eval(net, input).probabilities;
}

std::pair<std::size_t, std::vector<double>> predict_softmax(const Network& net, const Matrix& x, InputPolicy policy,
                                                            std::size_t label)
{
    if (x.rows() != 1) {
        throw ShapeError(fmt::format("predict_softmax takes one sample, got {}", x.shape_string()));
    }
    const std::size_t labels[] = {label};
    const Matrix probs = predict_softmax_batch(net, x, policy, labels);
    const auto row = probs.row(0);
    return {argmax_rows(probs)[0], std::vector<double>(row.begin(), row.end())};
}

} // namespace fftrain
