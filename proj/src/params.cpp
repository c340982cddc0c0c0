#include "ltcl/params.hpp"

#include <string>

#include "ltcl/error.hpp"

namespace ltcl {

ParamLayout::ParamLayout(std::vector<Index> layer_sizes) : sizes_(std::move(layer_sizes)) {
    require(sizes_.size() >= 2, ErrorCode::Shape, "a layer stack needs an input and an output size");
    for (auto s : sizes_) {
        require(s >= 1, ErrorCode::Shape, "layer sizes must be >= 1");
    }
    for (int l = 0; l + 1 < static_cast<int>(sizes_.size()); ++l) {
        const Index in = sizes_[static_cast<std::size_t>(l)];
        const Index out = sizes_[static_cast<std::size_t>(l) + 1];
        segments_.push_back({l, ParamRole::Weight, total_, out, in});
        total_ += out * in;
        segments_.push_back({l, ParamRole::Bias, total_, out, 1});
        total_ += out;
    }
}

const ParamSegment& ParamLayout::weight_segment(int layer) const {
    require(layer >= 0 && layer < n_layers(), ErrorCode::Shape, "layer index " + std::to_string(layer) + " out of range");
    return segments_[static_cast<std::size_t>(2 * layer)];
}

const ParamSegment& ParamLayout::bias_segment(int layer) const {
    require(layer >= 0 && layer < n_layers(), ErrorCode::Shape, "layer index " + std::to_string(layer) + " out of range");
    return segments_[static_cast<std::size_t>(2 * layer + 1)];
}

ParamVector::ParamVector(ParamLayout layout) : layout_(std::move(layout)), values_(Vector::Zero(layout_.total_size())) {}

ParamVector::ParamVector(ParamLayout layout, Vector values) : layout_(std::move(layout)), values_(std::move(values)) {
    require(values_.size() == layout_.total_size(), ErrorCode::Shape,
            "parameter count " + std::to_string(values_.size()) + " does not match layout size " +
                std::to_string(layout_.total_size()));
}

ParamVector::WeightMap ParamVector::weight(int layer) {
    const auto& s = layout_.weight_segment(layer);
    return {values_.data() + s.offset, s.rows, s.cols};
}

ParamVector::ConstWeightMap ParamVector::weight(int layer) const {
    const auto& s = layout_.weight_segment(layer);
    return {values_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Vector> ParamVector::bias(int layer) {
    const auto& s = layout_.bias_segment(layer);
    return {values_.data() + s.offset, s.rows};
}

Eigen::Map<const Vector> ParamVector::bias(int layer) const {
    const auto& s = layout_.bias_segment(layer);
    return {values_.data() + s.offset, s.rows};
}

std::vector<LayerParams> ParamVector::to_layers() const {
    std::vector<LayerParams> layers;
    for (int l = 0; l < layout_.n_layers(); ++l) {
        layers.push_back({weight(l), bias(l)});
    }
    return layers;
}

ParamVector ParamVector::from_layers(const std::vector<LayerParams>& layers) {
    require(!layers.empty(), ErrorCode::Shape, "no layers given");
    std::vector<Index> sizes{layers.front().weight.cols()};
    for (const auto& layer : layers) {
        require(layer.weight.cols() == sizes.back(), ErrorCode::Shape, "consecutive layers do not chain");
        require(layer.bias.size() == layer.weight.rows(), ErrorCode::Shape, "bias length != weight rows");
        sizes.push_back(layer.weight.rows());
    }
    ParamVector params{ParamLayout(std::move(sizes))};
    for (int l = 0; l < static_cast<int>(layers.size()); ++l) {
        params.weight(l) = layers[static_cast<std::size_t>(l)].weight;
        params.bias(l) = layers[static_cast<std::size_t>(l)].bias;
    }
    return params;
}

}  // namespace ltcl
