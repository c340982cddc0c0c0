#pragma once

#include <vector>

#include "ltcl/types.hpp"

namespace ltcl {

enum class ParamRole { Weight, Bias };

struct ParamSegment {
    int layer = 0;
    ParamRole role = ParamRole::Weight;
    Index offset = 0;
    Index rows = 0;
    Index cols = 0;

    [[nodiscard]] Index size() const noexcept { return rows * cols; }
};

/// Segment map for a stack of dense layers [d, h1, ..., C]. Layer l contributes
/// its out x in weight matrix (row-major) followed by its bias vector.
class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(std::vector<Index> layer_sizes);

    [[nodiscard]] const std::vector<Index>& layer_sizes() const noexcept { return sizes_; }
    [[nodiscard]] const std::vector<ParamSegment>& segments() const noexcept { return segments_; }
    [[nodiscard]] int n_layers() const noexcept { return static_cast<int>(sizes_.size()) - 1; }
    [[nodiscard]] Index total_size() const noexcept { return total_; }
    [[nodiscard]] const ParamSegment& weight_segment(int layer) const;
    [[nodiscard]] const ParamSegment& bias_segment(int layer) const;

    bool operator==(const ParamLayout& other) const { return sizes_ == other.sizes_; }

private:
    std::vector<Index> sizes_;
    std::vector<ParamSegment> segments_;
    Index total_ = 0;
};

struct LayerParams {
    RowMatrix weight;
    Vector bias;
};

/// Flat parameter vector plus the layout that gives it structure.
class ParamVector {
public:
    using WeightMap = Eigen::Map<RowMatrix>;
    using ConstWeightMap = Eigen::Map<const RowMatrix>;

    ParamVector() = default;
    explicit ParamVector(ParamLayout layout);
    ParamVector(ParamLayout layout, Vector values);

    [[nodiscard]] const ParamLayout& layout() const noexcept { return layout_; }
    [[nodiscard]] Vector& values() noexcept { return values_; }
    [[nodiscard]] const Vector& values() const noexcept { return values_; }
    [[nodiscard]] Index size() const noexcept { return values_.size(); }

    [[nodiscard]] WeightMap weight(int layer);
    [[nodiscard]] ConstWeightMap weight(int layer) const;
    [[nodiscard]] Eigen::Map<Vector> bias(int layer);
    [[nodiscard]] Eigen::Map<const Vector> bias(int layer) const;

    [[nodiscard]] std::vector<LayerParams> to_layers() const;
    static ParamVector from_layers(const std::vector<LayerParams>& layers);

private:
    ParamLayout layout_;
    Vector values_;
};

}  // namespace ltcl
