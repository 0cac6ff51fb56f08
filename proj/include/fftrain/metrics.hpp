#pragma once

#include "fftrain/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fftrain {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

/// Binary counts treating `positive_class` as the positive label.
ConfusionCounts confusion_binary(std::span<const std::size_t> predictions, std::span<const std::size_t> truth,
                                 std::size_t positive_class = 1);
/// One-vs-rest counts for every class.
std::vector<ConfusionCounts> confusion_one_vs_rest(std::span<const std::size_t> predictions,
                                                   std::span<const std::size_t> truth, std::size_t class_count);

/// Misclassified / total, as a percentage.
double error_rate(std::span<const std::size_t> predictions, std::span<const std::size_t> truth);
/// (FP + FN) / (TP + TN + FP + FN) * 100.
double error_rate(const ConfusionCounts& counts);
double accuracy_percent(std::span<const std::size_t> predictions, std::span<const std::size_t> truth);

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. `truth` holds 0/1 labels.
double roc_auc_binary(std::span<const double> scores, std::span<const std::size_t> truth);
/// Trapezoidal area under the empirical ROC curve (tied scores form one step).
double roc_auc_trapezoid(std::span<const double> scores, std::span<const std::size_t> truth);

enum class AucAveraging { macro, micro };

struct MulticlassAuc {
    double value = 0.0;
    /// NaN for classes skipped because they are absent (or present in every row).
    std::vector<double> per_class;
};

/// Unweighted mean of one-vs-rest AUCs using column c as the score for class c.
MulticlassAuc roc_auc_macro(const Matrix& probabilities, std::span<const std::size_t> truth);
/// AUC of all (row, class) scores against the flattened one-hot truth.
double roc_auc_micro(const Matrix& probabilities, std::span<const std::size_t> truth);

struct EvalReport {
    double error_rate_percent = 0.0;
    double roc_auc = 0.0;
    std::vector<double> per_class_auc;
    std::vector<ConfusionCounts> confusion;
    /// confusion_matrix[truth][prediction]
    std::vector<std::vector<std::size_t>> confusion_matrix;
};

/// Argmax predictions (ties to the smallest index) plus AUC. Two-class
/// problems use the class-1 column as the score; more classes use
/// `averaging`. Undefined AUCs are reported as NaN with a warning.
EvalReport evaluate_scores(const Matrix& scores, std::span<const std::size_t> truth,
                           AucAveraging averaging = AucAveraging::macro);

} // namespace fftrain
