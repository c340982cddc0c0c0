#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ltcl/datasets.hpp"
#include "ltcl/models.hpp"

namespace ltcl {

struct MetricsReport {
    std::vector<double> per_class_accuracy;
    double avg_class_accuracy = 0.0;
    std::vector<double> per_class_weight_norm;
    std::vector<Index> n_test_per_class;
};

enum class TransferRegion { Forgetting, BackwardTransfer, ForwardTransfer, Unchanged };

const char* to_string(TransferRegion region) noexcept;

struct TransferDecomposition {
    std::vector<double> per_class_delta;
    std::vector<TransferRegion> per_class_region;
    // Tail classes whose accuracy fell; labelled Unchanged, listed here.
    std::vector<int> tail_regressions;

    [[nodiscard]] int count(TransferRegion region) const;
};

std::vector<double> per_class_accuracy(std::span<const int> predictions, const LabeledDataset& test);
std::vector<double> per_class_accuracy(const Model& model, const LabeledDataset& test);

double avg_class_accuracy(std::span<const double> per_class);

/// Euclidean norm of every output-layer weight row (bias excluded).
std::vector<double> per_class_weight_norms(const Model& model);

MetricsReport evaluate(const Model& model, const LabeledDataset& test);

TransferDecomposition transfer_decomposition(std::span<const double> acc_before, std::span<const double> acc_after,
                                             std::span<const int> head_classes);

std::vector<double> accuracy_diff(const MetricsReport& a, const MetricsReport& b);

/// Mean accuracy drop over the given classes (before - after).
double mean_drop(std::span<const double> before, std::span<const double> after, std::span<const int> classes);

double stddev(std::span<const double> values);

/// `class,count,acc_before,acc_after,delta,region,weight_norm_before,weight_norm_after`;
/// count is the training-set cardinality of the class.
void write_metrics_csv(std::ostream& out, std::span<const Index> train_counts, const MetricsReport& before,
                       const MetricsReport& after, const TransferDecomposition& transfer);

}  // namespace ltcl
