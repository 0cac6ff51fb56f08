#include "fftrain/metrics.hpp"

#include "fftrain/error.hpp"
#include "fftrain/log.hpp"
#include "fftrain/network.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fftrain {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_lengths(std::size_t a, std::size_t b, std::string_view what)
{
    if (a != b) {
        throw ShapeError(fmt::format("{}: {} predictions vs {} labels", what, a, b));
    }
}

struct ClassTotals {
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

ClassTotals count_binary(std::span<const std::size_t> truth)
{
    ClassTotals totals;
    for (const std::size_t t : truth) {
        if (t > 1) {
            throw DataError(fmt::format("binary AUC expects 0/1 labels, got {}", t));
        }
        (t == 1 ? totals.positives : totals.negatives) += 1;
    }
    if (totals.positives == 0 || totals.negatives == 0) {
        throw DataError("ROC-AUC is undefined when only one class is present");
    }
    return totals;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores)
{
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return order;
}

} // namespace

ConfusionCounts confusion_binary(std::span<const std::size_t> predictions, std::span<const std::size_t> truth,
                                 std::size_t positive_class)
{
    check_lengths(predictions.size(), truth.size(), "confusion_binary");
    ConfusionCounts counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool predicted = predictions[i] == positive_class;
        const bool actual = truth[i] == positive_class;
        if (predicted && actual) {
            ++counts.tp;
        } else if (predicted) {
            ++counts.fp;
        } else if (actual) {
            ++counts.fn;
        } else {
            ++counts.tn;
        }
    }
    return counts;
}

std::vector<ConfusionCounts> confusion_one_vs_rest(std::span<const std::size_t> predictions,
                                                   std::span<const std::size_t> truth, std::size_t class_count)
{
    std::vector<ConfusionCounts> table;
    table.reserve(class_count);
    for (std::size_t c = 0; c < class_count; ++c) {
        table.push_back(confusion_binary(predictions, truth, c));
    }
    return table;
}

double error_rate(std::span<const std::size_t> predictions, std::span<const std::size_t> truth)
{
    check_lengths(predictions.size(), truth.size(), "error_rate");
    if (truth.empty()) {
        throw DataError("error rate of an empty prediction set");
    }
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        wrong += predictions[i] != truth[i] ? 1 : 0;
    }
    // Same expression as the confusion-table form, so binary results agree bit for bit.
    return static_cast<double>(wrong) / static_cast<double>(truth.size()) * 100.0;
}

double error_rate(const ConfusionCounts& counts)
{
    if (counts.total() == 0) {
        throw DataError("error rate of an empty confusion table");
    }
    return static_cast<double>(counts.fp + counts.fn) / static_cast<double>(counts.total()) * 100.0;
}

double accuracy_percent(std::span<const std::size_t> predictions, std::span<const std::size_t> truth)
{
    // Complement of the error rate rather than right / total, so the two
    // always sum to exactly 100.
    return 100.0 - error_rate(predictions, truth);
}

double roc_auc_binary(std::span<const double> scores, std::span<const std::size_t> truth)
{
    check_lengths(scores.size(), truth.size(), "roc_auc_binary");
    const ClassTotals totals = count_binary(truth);
    const auto order = order_by_score(scores);

    // Twice the rank sum of the positives, using mid-ranks for ties; all terms are integers.
    std::uint64_t doubled_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const std::uint64_t doubled_mid_rank = (i + 1) + j; // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (truth[order[k]] == 1) {
                doubled_rank_sum += doubled_mid_rank;
            }
        }
        i = j;
    }
    const auto p = static_cast<std::uint64_t>(totals.positives);
    const auto n = static_cast<std::uint64_t>(totals.negatives);
    const std::uint64_t doubled_u = doubled_rank_sum - p * (p + 1);
    return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

double roc_auc_trapezoid(std::span<const double> scores, std::span<const std::size_t> truth)
{
    check_lengths(scores.size(), truth.size(), "roc_auc_trapezoid");
    const ClassTotals totals = count_binary(truth);
    auto order = order_by_score(scores);
    std::reverse(order.begin(), order.end());

    // Sweep thresholds from high to low; each group of tied scores moves the
    // curve diagonally. Twice the area in (FP, TP) count units stays integral.
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t doubled_area = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::uint64_t group_tp = 0;
        std::uint64_t group_fp = 0;
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (truth[order[i]] == 1 ? group_tp : group_fp) += 1;
            ++i;
        }
        doubled_area += group_fp * (2 * tp + group_tp);
        tp += group_tp;
        fp += group_fp;
    }
    return static_cast<double>(doubled_area)
         / (2.0 * static_cast<double>(totals.positives) * static_cast<double>(totals.negatives));
}

MulticlassAuc roc_auc_macro(const Matrix& probabilities, std::span<const std::size_t> truth)
{
    check_lengths(probabilities.rows(), truth.size(), "roc_auc_macro");
    const std::size_t n = probabilities.cols();
    if (n < 2) {
        throw DataError("multiclass AUC needs at least 2 classes");
    }
    MulticlassAuc result;
    result.per_class.assign(n, kNaN);
    std::vector<double> column(truth.size());
    std::vector<std::size_t> is_class(truth.size());
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t present = 0;
        for (std::size_t r = 0; r < truth.size(); ++r) {
            column[r] = probabilities(r, c);
            is_class[r] = truth[r] == c ? 1 : 0;
            present += is_class[r];
        }
        if (present == 0 || present == truth.size()) {
            log::warn("class {} is {} in the evaluated set; its one-vs-rest AUC is skipped", c,
                      present == 0 ? "absent" : "the only class");
            continue;
        }
        result.per_class[c] = roc_auc_binary(column, is_class);
        sum += result.per_class[c];
        ++used;
    }
    result.value = used == 0 ? kNaN : sum / static_cast<double>(used);
    return result;
}

double roc_auc_micro(const Matrix& probabilities, std::span<const std::size_t> truth)
{
    check_lengths(probabilities.rows(), truth.size(), "roc_auc_micro");
    std::vector<double> scores(probabilities.values().begin(), probabilities.values().end());
    std::vector<std::size_t> flat(probabilities.size(), 0);
    for (std::size_t r = 0; r < truth.size(); ++r) {
        if (truth[r] >= probabilities.cols()) {
            throw DataError(fmt::format("label {} out of range", truth[r]));
        }
        flat[r * probabilities.cols() + truth[r]] = 1;
    }
    return roc_auc_binary(scores, flat);
}

EvalReport evaluate_scores(const Matrix& scores, std::span<const std::size_t> truth, AucAveraging averaging)
{
    check_lengths(scores.rows(), truth.size(), "evaluate_scores");
    const std::size_t n = scores.cols();
    const auto predictions = argmax_rows(scores);

    EvalReport report;
    report.error_rate_percent = error_rate(predictions, truth);
    report.confusion = confusion_one_vs_rest(predictions, truth, n);
    report.confusion_matrix.assign(n, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n) {
            throw DataError(fmt::format("label {} out of range for {} classes", truth[i], n));
        }
        ++report.confusion_matrix[truth[i]][predictions[i]];
    }

    if (n == 2) {
        std::vector<double> positive(truth.size());
        for (std::size_t r = 0; r < truth.size(); ++r) {
            positive[r] = scores(r, 1);
        }
        try {
            report.roc_auc = roc_auc_binary(positive, truth);
            report.per_class_auc = roc_auc_macro(scores, truth).per_class;
        } catch (const DataError& e) {
            log::warn("{}", e.what());
            report.roc_auc = kNaN;
            report.per_class_auc = {kNaN, kNaN};
        }
        return report;
    }
    auto macro = roc_auc_macro(scores, truth);
    report.per_class_auc = std::move(macro.per_class);
    if (averaging == AucAveraging::macro) {
        report.roc_auc = macro.value;
    } else {
        report.roc_auc = roc_auc_micro(scores, truth);
    }
    return report;
}

} // namespace fftrain
