#include "ltcl/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "ltcl/error.hpp"
#include "ltcl/rng.hpp"

namespace ltcl {

LabeledDataset::LabeledDataset(RowMatrix features, std::vector<int> labels, int n_classes)
    : features_(std::move(features)), labels_(std::move(labels)), n_classes_(n_classes) {
    require(n_classes_ >= 1, ErrorCode::Domain, "dataset needs at least one class");
    require(features_.rows() == static_cast<Index>(labels_.size()), ErrorCode::Shape,
            "feature rows (" + std::to_string(features_.rows()) + ") != label count (" +
                std::to_string(labels_.size()) + ")");
    counts_.assign(static_cast<std::size_t>(n_classes_), 0);
    for (int label : labels_) {
        require(label >= 0 && label < n_classes_, ErrorCode::Domain,
                "label " + std::to_string(label) + " outside [0, " + std::to_string(n_classes_) + ")");
        ++counts_[static_cast<std::size_t>(label)];
    }
}

LabeledDataset LabeledDataset::subset(std::span<const Index> rows) const {
    RowMatrix out(static_cast<Index>(rows.size()), features_.cols());
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < size(), ErrorCode::Shape, "subset row out of range");
        out.row(static_cast<Index>(i)) = features_.row(rows[i]);
        labels.push_back(labels_[static_cast<std::size_t>(rows[i])]);
    }
    return {std::move(out), std::move(labels), n_classes_};
}

std::vector<Index> LabeledDataset::rows_of_class(int label) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == label) {
            rows.push_back(static_cast<Index>(i));
        }
    }
    return rows;
}

double imbalance_factor(std::span<const Index> counts) {
    require(!counts.empty(), ErrorCode::Domain, "imbalance factor of an empty count vector");
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*lo <= 0) {
        const auto cls = std::distance(counts.begin(), lo);
        fail(ErrorCode::EmptyClass, "class " + std::to_string(cls) + " is empty; imbalance factor undefined");
    }
    return static_cast<double>(*hi) / static_cast<double>(*lo);
}

double gamma(double imbalance_factor) {
    require(std::isfinite(imbalance_factor) && imbalance_factor >= 1.0, ErrorCode::Domain,
            "imbalance factor must be >= 1");
    return imbalance_factor / (1.0 + imbalance_factor);
}

double head_mixture_weight(const HeadTailSplit& split) {
    const auto total = split.head.size() + split.tail.size();
    require(total > 0, ErrorCode::Domain, "mixture weight of an empty split");
    return static_cast<double>(split.head.size()) / static_cast<double>(total);
}

LongTailProfile long_tail_profile(int n_classes, Index n_max, double imbalance_factor) {
    require(n_classes >= 1, ErrorCode::Domain, "profile needs at least one class");
    require(n_max >= 1, ErrorCode::Domain, "n_max must be >= 1");
    require(std::isfinite(imbalance_factor) && imbalance_factor >= 1.0, ErrorCode::Domain,
            "imbalance factor must be >= 1");
    LongTailProfile profile{imbalance_factor, n_max, {}};
    profile.per_class_targets.reserve(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        const double exponent = n_classes == 1 ? 0.0 : -static_cast<double>(c) / (n_classes - 1);
        const double target = static_cast<double>(n_max) * std::pow(imbalance_factor, exponent);
        // Truncation as in the common CIFAR-LT recipe; the epsilon absorbs pow() error at exact integers.
        profile.per_class_targets.push_back(std::max<Index>(1, static_cast<Index>(std::floor(target + 1e-9))));
    }
    return profile;
}

LabeledDataset make_longtail(const LabeledDataset& source, double imbalance_factor, std::uint64_t seed,
                             std::optional<Index> n_max) {
    const auto& counts = source.class_counts();
    const Index resolved_max = n_max.value_or(*std::min_element(counts.begin(), counts.end()));
    const auto profile = long_tail_profile(source.n_classes(), resolved_max, imbalance_factor);

    Rng rng(seed);
    std::vector<Index> keep;
    for (int c = 0; c < source.n_classes(); ++c) {
        const auto target = profile.per_class_targets[static_cast<std::size_t>(c)];
        const auto rows = source.rows_of_class(c);
        if (static_cast<Index>(rows.size()) < target) {
            fail(ErrorCode::Capacity, "class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                                          " samples but the profile needs " + std::to_string(target));
        }
        auto picked = rng.sample_without_replacement(rows.size(), static_cast<std::size_t>(target));
        std::sort(picked.begin(), picked.end());
        for (auto p : picked) {
            keep.push_back(rows[p]);
        }
    }
    std::sort(keep.begin(), keep.end());
    return source.subset(keep);
}

HeadTailSplit head_tail_split(const LabeledDataset& dataset, double head_class_fraction) {
    require(head_class_fraction > 0.0 && head_class_fraction <= 1.0, ErrorCode::Domain,
            "head class fraction must lie in (0, 1]");
    const auto& counts = dataset.class_counts();
    require(std::is_sorted(counts.begin(), counts.end(), std::greater<>()), ErrorCode::Domain,
            "head/tail split needs classes ordered by descending count; relabel first");
    const int n_classes = dataset.n_classes();
    // The epsilon keeps products like 10 * 0.6 = 5.999... from flooring low.
    const int n_head = static_cast<int>(std::floor(n_classes * head_class_fraction + 1e-9));

    HeadTailSplit split;
    for (int c = 0; c < n_classes; ++c) {
        (c < n_head ? split.head_classes : split.tail_classes).push_back(c);
    }
    std::vector<Index> head_rows;
    std::vector<Index> tail_rows;
    const auto& labels = dataset.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] < n_head ? head_rows : tail_rows).push_back(static_cast<Index>(i));
    }
    split.head = dataset.subset(head_rows);
    split.tail = dataset.subset(tail_rows);
    return split;
}

LabeledDataset relabel_by_count(const LabeledDataset& dataset, std::vector<int>* old_to_new) {
    const auto& counts = dataset.class_counts();
    std::vector<int> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
    });
    std::vector<int> mapping(counts.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        mapping[static_cast<std::size_t>(order[rank])] = static_cast<int>(rank);
    }
    std::vector<int> labels = dataset.labels();
    for (auto& l : labels) {
        l = mapping[static_cast<std::size_t>(l)];
    }
    if (old_to_new != nullptr) {
        *old_to_new = mapping;
    }
    return {dataset.features(), std::move(labels), dataset.n_classes()};
}

namespace {

constexpr std::uint32_t kLabelsMagic = 0x00000801;
constexpr std::uint32_t kImagesMagic = 0x00000803;

class GzReader {
public:
    explicit GzReader(const std::filesystem::path& path) : path_(path.string()) {
        file_ = gzopen(path_.c_str(), "rb");
        if (file_ == nullptr) {
            throw ParseError(ParseFailure::Unreadable, "cannot open " + path_);
        }
    }
    ~GzReader() { gzclose(file_); }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read_exact(void* dst, std::size_t n, const char* what) {
        auto* out = static_cast<unsigned char*>(dst);
        std::size_t done = 0;
        while (done < n) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
            const int got = gzread(file_, out + done, chunk);
            if (got <= 0) {
                throw ParseError(ParseFailure::Truncated, path_ + ": truncated while reading " + what);
            }
            done += static_cast<std::size_t>(got);
        }
    }

    std::uint32_t read_be32(const char* what) {
        std::array<unsigned char, 4> b{};
        read_exact(b.data(), b.size(), what);
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
               std::uint32_t{b[3]};
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    gzFile file_ = nullptr;
};

void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), b.size());
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
    GzReader in(path);
    const auto magic = in.read_be32("magic");
    if (magic != kImagesMagic) {
        throw ParseError(ParseFailure::BadMagic, in.path() + ": image magic " + hex(magic) + ", expected 0x00000803");
    }
    IdxImages images;
    images.count = in.read_be32("image count");
    images.rows = in.read_be32("row count");
    images.cols = in.read_be32("column count");
    images.pixels.resize(std::size_t{images.count} * images.rows * images.cols);
    in.read_exact(images.pixels.data(), images.pixels.size(), "pixels");
    return images;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    GzReader in(path);
    const auto magic = in.read_be32("magic");
    if (magic != kLabelsMagic) {
        throw ParseError(ParseFailure::BadMagic, in.path() + ": label magic " + hex(magic) + ", expected 0x00000801");
    }
    std::vector<std::uint8_t> labels(in.read_be32("label count"));
    in.read_exact(labels.data(), labels.size(), "labels");
    return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
    require(images.pixels.size() == std::size_t{images.count} * images.rows * images.cols, ErrorCode::Shape,
            "pixel buffer does not match the declared dimensions");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot write " + path.string());
    put_be32(out, kImagesMagic);
    put_be32(out, images.count);
    put_be32(out, images.rows);
    put_be32(out, images.cols);
    out.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot write " + path.string());
    put_be32(out, kLabelsMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_idx_images(images_path);
    const auto raw_labels = read_idx_labels(labels_path);
    if (raw_labels.size() != images.count) {
        throw ParseError(ParseFailure::DimensionMismatch,
                         "image file holds " + std::to_string(images.count) + " images but label file holds " +
                             std::to_string(raw_labels.size()) + " labels");
    }
    const Index n = images.count;
    const Index d = Index{images.rows} * images.cols;
    RowMatrix features(n, d);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) {
            features(i, j) = images.pixels[static_cast<std::size_t>(i * d + j)] / 255.0;
        }
    }
    std::vector<int> labels(raw_labels.begin(), raw_labels.end());
    const int n_classes = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
    return {std::move(features), std::move(labels), n_classes};
}

LabeledDataset synthetic_gaussian(int n_classes, Index n_features, Index n_per_class, double class_separation,
                                  std::uint64_t seed) {
    require(n_classes >= 1 && n_features >= 1 && n_per_class >= 1, ErrorCode::Domain,
            "synthetic dataset sizes must be >= 1");
    require(std::isfinite(class_separation) && class_separation >= 0.0, ErrorCode::Domain,
            "class separation must be non-negative");
    Rng rng(seed);
    const Index n = n_classes * n_per_class;
    RowMatrix features(n, n_features);
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n));
    Index row = 0;
    for (int c = 0; c < n_classes; ++c) {
        for (Index k = 0; k < n_per_class; ++k, ++row) {
            for (Index j = 0; j < n_features; ++j) {
                features(row, j) = rng.normal();
            }
            features(row, c % n_features) += class_separation;
            labels.push_back(c);
        }
    }
    return {std::move(features), std::move(labels), n_classes};
}

LabeledDataset mean_pool(const LabeledDataset& dataset, Index height, Index width, Index factor) {
    require(factor >= 1 && height % factor == 0 && width % factor == 0, ErrorCode::Domain,
            "pool factor must divide the image dimensions");
    require(dataset.n_features() == height * width, ErrorCode::Shape, "feature count does not match height*width");
    const Index ph = height / factor;
    const Index pw = width / factor;
    const double scale = 1.0 / static_cast<double>(factor * factor);
    RowMatrix pooled = RowMatrix::Zero(dataset.size(), ph * pw);
    const auto& x = dataset.features();
    for (Index i = 0; i < dataset.size(); ++i) {
        for (Index r = 0; r < height; ++r) {
            for (Index c = 0; c < width; ++c) {
                pooled(i, (r / factor) * pw + c / factor) += x(i, r * width + c);
            }
        }
    }
    pooled *= scale;
    return {std::move(pooled), dataset.labels(), dataset.n_classes()};
}

}  // namespace ltcl
