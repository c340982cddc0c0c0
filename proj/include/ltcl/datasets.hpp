#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ltcl/types.hpp"

namespace ltcl {

/// Dense features, integer labels in [0, n_classes) and the per-class counts
/// derived from them. Construction validates the label range; counts are always
/// recomputed so they can never drift from the labels.
class LabeledDataset {
public:
    LabeledDataset() = default;
    LabeledDataset(RowMatrix features, std::vector<int> labels, int n_classes);

    [[nodiscard]] const RowMatrix& features() const noexcept { return features_; }
    [[nodiscard]] const std::vector<int>& labels() const noexcept { return labels_; }
    [[nodiscard]] const std::vector<Index>& class_counts() const noexcept { return counts_; }
    [[nodiscard]] int n_classes() const noexcept { return n_classes_; }
    [[nodiscard]] Index size() const noexcept { return static_cast<Index>(labels_.size()); }
    [[nodiscard]] Index n_features() const noexcept { return features_.cols(); }
    [[nodiscard]] bool empty() const noexcept { return labels_.empty(); }

    /// Rows at the given positions, in the given order.
    [[nodiscard]] LabeledDataset subset(std::span<const Index> rows) const;

    /// Positions of all samples whose label is `label`, ascending.
    [[nodiscard]] std::vector<Index> rows_of_class(int label) const;

private:
    RowMatrix features_;
    std::vector<int> labels_;
    std::vector<Index> counts_;
    int n_classes_ = 0;
};

struct LongTailProfile {
    double imbalance_factor = 1.0;
    Index n_max = 0;
    std::vector<Index> per_class_targets;
};

struct HeadTailSplit {
    std::vector<int> head_classes;
    std::vector<int> tail_classes;
    LabeledDataset head;
    LabeledDataset tail;
};

/// max(counts) / min(counts); throws EmptyClass if any count is zero.
double imbalance_factor(std::span<const Index> counts);

/// IF / (1 + IF), in [0.5, 1).
double gamma(double imbalance_factor);

/// |head| / |dataset|; the exact mixture weight of the head loss.
double head_mixture_weight(const HeadTailSplit& split);

/// Exponential profile n_c = floor(n_max * IF^(-c / (C - 1))), at least 1.
LongTailProfile long_tail_profile(int n_classes, Index n_max, double imbalance_factor);

/// Subsamples every class to the exponential profile, uniformly without
/// replacement. `n_max` defaults to the smallest source class count so every
/// target is attainable.
LabeledDataset make_longtail(const LabeledDataset& source, double imbalance_factor,
                             std::uint64_t seed, std::optional<Index> n_max = std::nullopt);

/// First floor(C * fraction) classes form the head. Classes must already be
/// ordered by non-increasing count.
HeadTailSplit head_tail_split(const LabeledDataset& dataset, double head_class_fraction);

/// Renumbers classes by descending count (ties keep index order). Returns the
/// relabelled dataset; `old_to_new` receives the mapping when non-null.
LabeledDataset relabel_by_count(const LabeledDataset& dataset, std::vector<int>* old_to_new = nullptr);

/// IDX reader (plain or gzip-compressed). Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// Writes uncompressed IDX files; used by tests and fixtures.
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Class c ~ N(separation * e_(c mod d), I). Bit-identical for equal seeds.
LabeledDataset synthetic_gaussian(int n_classes, Index n_features, Index n_per_class,
                                  double class_separation, std::uint64_t seed);

/// Averages non-overlapping factor x factor pixel blocks of height x width images.
LabeledDataset mean_pool(const LabeledDataset& dataset, Index height, Index width, Index factor);

}  // namespace ltcl
