#include "ltcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ltcl/csv.hpp"
#include "ltcl/error.hpp"
#include "ltcl/kernels.hpp"

namespace ltcl {

const char* to_string(TransferRegion region) noexcept {
    switch (region) {
        case TransferRegion::Forgetting: return "forgetting";
        case TransferRegion::BackwardTransfer: return "backward_transfer";
        case TransferRegion::ForwardTransfer: return "forward_transfer";
        case TransferRegion::Unchanged: return "unchanged";
    }
    return "unknown";
}

int TransferDecomposition::count(TransferRegion region) const {
    return static_cast<int>(std::count(per_class_region.begin(), per_class_region.end(), region));
}

std::vector<double> per_class_accuracy(std::span<const int> predictions, const LabeledDataset& test) {
    require(static_cast<Index>(predictions.size()) == test.size(), ErrorCode::Shape,
            "prediction count != test sample count");
    const auto& counts = test.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) {
            fail(ErrorCode::Coverage, "test set has no samples of class " + std::to_string(c));
        }
    }
    std::vector<Index> correct(counts.size(), 0);
    const auto& labels = test.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) {
            ++correct[static_cast<std::size_t>(labels[i])];
        }
    }
    std::vector<double> acc(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        acc[c] = static_cast<double>(correct[c]) / static_cast<double>(counts[c]);
    }
    return acc;
}

std::vector<double> per_class_accuracy(const Model& model, const LabeledDataset& test) {
    return per_class_accuracy(kernels::predict(model, test.features()), test);
}

double avg_class_accuracy(std::span<const double> per_class) {
    require(!per_class.empty(), ErrorCode::Domain, "average of an empty accuracy vector");
    return std::accumulate(per_class.begin(), per_class.end(), 0.0) / static_cast<double>(per_class.size());
}

std::vector<double> per_class_weight_norms(const Model& model) {
    const int last = model.n_layers() - 1;
    require(last >= 0, ErrorCode::UnsupportedModel, "model has no layers");
    const auto w = model.params().weight(last);
    require(w.rows() == model.n_classes(), ErrorCode::UnsupportedModel, "output layer is not one row per class");
    std::vector<double> norms(static_cast<std::size_t>(w.rows()));
    for (Index c = 0; c < w.rows(); ++c) {
        norms[static_cast<std::size_t>(c)] = w.row(c).norm();
    }
    return norms;
}

MetricsReport evaluate(const Model& model, const LabeledDataset& test) {
    MetricsReport r;
    r.per_class_accuracy = per_class_accuracy(model, test);
    r.avg_class_accuracy = avg_class_accuracy(r.per_class_accuracy);
    r.per_class_weight_norm = per_class_weight_norms(model);
    r.n_test_per_class = test.class_counts();
    return r;
}

TransferDecomposition transfer_decomposition(std::span<const double> acc_before, std::span<const double> acc_after,
                                             std::span<const int> head_classes) {
    require(acc_before.size() == acc_after.size(), ErrorCode::Shape, "accuracy vectors differ in length");
    std::vector<bool> is_head(acc_before.size(), false);
    for (int c : head_classes) {
        require(c >= 0 && static_cast<std::size_t>(c) < acc_before.size(), ErrorCode::Shape,
                "head class index out of range");
        is_head[static_cast<std::size_t>(c)] = true;
    }
    TransferDecomposition t;
    for (std::size_t c = 0; c < acc_before.size(); ++c) {
        const double delta = acc_after[c] - acc_before[c];
        t.per_class_delta.push_back(delta);
        TransferRegion region = TransferRegion::Unchanged;
        if (is_head[c]) {
            if (delta < 0.0) {
                region = TransferRegion::Forgetting;
            } else if (delta > 0.0) {
                region = TransferRegion::BackwardTransfer;
            }
        } else if (delta > 0.0) {
            region = TransferRegion::ForwardTransfer;
        } else if (delta < 0.0) {
            t.tail_regressions.push_back(static_cast<int>(c));
        }
        t.per_class_region.push_back(region);
    }
    return t;
}

std::vector<double> accuracy_diff(const MetricsReport& a, const MetricsReport& b) {
    require(a.per_class_accuracy.size() == b.per_class_accuracy.size(), ErrorCode::Shape,
            "reports cover different class counts");
    std::vector<double> diff(a.per_class_accuracy.size());
    for (std::size_t c = 0; c < diff.size(); ++c) {
        diff[c] = a.per_class_accuracy[c] - b.per_class_accuracy[c];
    }
    return diff;
}

double mean_drop(std::span<const double> before, std::span<const double> after, std::span<const int> classes) {
    require(before.size() == after.size(), ErrorCode::Shape, "accuracy vectors differ in length");
    require(!classes.empty(), ErrorCode::Domain, "no classes to average over");
    double sum = 0.0;
    for (int c : classes) {
        sum += before[static_cast<std::size_t>(c)] - after[static_cast<std::size_t>(c)];
    }
    return sum / static_cast<double>(classes.size());
}

double stddev(std::span<const double> values) {
    require(!values.empty(), ErrorCode::Domain, "standard deviation of nothing");
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return std::sqrt(ss / static_cast<double>(values.size()));
}

void write_metrics_csv(std::ostream& out, std::span<const Index> train_counts, const MetricsReport& before,
                       const MetricsReport& after, const TransferDecomposition& transfer) {
    const auto n = before.per_class_accuracy.size();
    require(after.per_class_accuracy.size() == n && transfer.per_class_delta.size() == n && train_counts.size() == n,
            ErrorCode::Shape, "metrics inputs cover different class counts");
    out << "class,count,acc_before,acc_after,delta,region,weight_norm_before,weight_norm_after\n";
    for (std::size_t c = 0; c < n; ++c) {
        csv::row(out, {std::to_string(c), std::to_string(train_counts[c]), csv::num(before.per_class_accuracy[c]),
                       csv::num(after.per_class_accuracy[c]), csv::num(transfer.per_class_delta[c]),
                       to_string(transfer.per_class_region[c]), csv::num(before.per_class_weight_norm[c]),
                       csv::num(after.per_class_weight_norm[c])});
    }
}

}  // namespace ltcl
