#include "ltcl/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "ltcl/error.hpp"

namespace ltcl::kernels {

namespace {

int g_workers = 1;

Index block_count(Index n) { return (n + kBlockRows - 1) / kBlockRows; }

// Runs body(b) for every block, concurrently, rethrowing the first failure.
template <typename Body>
void for_each_block(Index n_blocks, Body&& body) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_blocks));
#pragma omp parallel for schedule(static) num_threads(g_workers)
    for (Index b = 0; b < n_blocks; ++b) {
        try {
            body(b);
        } catch (...) {
            errors[static_cast<std::size_t>(b)] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

void check_input(const Model& model, const RowMatrix& features) {
    if (features.cols() != model.input_dim()) {
        fail(ErrorCode::Shape, "feature dimension " + std::to_string(features.cols()) +
                                   " does not match model input dimension " + std::to_string(model.input_dim()));
    }
}

void require_linear(const Model& model) {
    require(model.kind() == ModelKind::Linear, ErrorCode::UnsupportedModel,
            "exact Hessians are only available for the linear model");
}

struct BlockRows {
    RowMatrix x;
    std::vector<int> labels;
    std::vector<Index> ids;
};

BlockRows gather(const RowMatrix& features, std::span<const int> labels, std::span<const Index> rows, Index begin,
                 Index end) {
    BlockRows out;
    const Index n = end - begin;
    out.x.resize(n, features.cols());
    out.labels.resize(static_cast<std::size_t>(n));
    out.ids.resize(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        const Index r = rows.empty() ? begin + k : rows[static_cast<std::size_t>(begin + k)];
        out.x.row(k) = features.row(r);
        out.labels[static_cast<std::size_t>(k)] = labels.empty() ? 0 : labels[static_cast<std::size_t>(r)];
        out.ids[static_cast<std::size_t>(k)] = r;
    }
    return out;
}

// Forward pass through all layers; fills the per-layer inputs and hidden pre-activations.
RowMatrix forward_block(const ParamVector& params, const RowMatrix& x, std::vector<RowMatrix>* inputs,
                        std::vector<RowMatrix>* pre) {
    const int n_layers = params.layout().n_layers();
    RowMatrix a = x;
    for (int l = 0; l < n_layers; ++l) {
        RowMatrix z = a * params.weight(l).transpose();
        z.rowwise() += params.bias(l).transpose();
        if (inputs != nullptr) {
            inputs->push_back(std::move(a));
        }
        if (l + 1 == n_layers) {
            return z;
        }
        a = z.cwiseMax(0.0);
        if (pre != nullptr) {
            pre->push_back(std::move(z));
        }
    }
    return a;
}

// Summed cross-entropy of a block; turns `logits` into d(loss)/d(logits).
double cross_entropy_in_place(RowMatrix& logits, const std::vector<int>& labels) {
    double total = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const double m = row.maxCoeff();
        const double lse = m + std::log((row.array() - m).exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        total += lse - row(y);
        row = (row.array() - lse).exp();
        row(y) -= 1.0;
    }
    return total;
}

void backward_block(const ParamVector& params, RowMatrix dz, const std::vector<RowMatrix>& inputs,
                    const std::vector<RowMatrix>& pre, Vector& grad) {
    const auto& layout = params.layout();
    for (int l = layout.n_layers() - 1; l >= 0; --l) {
        const auto& ws = layout.weight_segment(l);
        const auto& bs = layout.bias_segment(l);
        Eigen::Map<RowMatrix>(grad.data() + ws.offset, ws.rows, ws.cols).noalias() =
            dz.transpose() * inputs[static_cast<std::size_t>(l)];
        Eigen::Map<Vector>(grad.data() + bs.offset, bs.rows) = dz.colwise().sum().transpose();
        if (l > 0) {
            RowMatrix da = dz * params.weight(l);
            dz = da.cwiseProduct((pre[static_cast<std::size_t>(l) - 1].array() > 0.0).cast<double>().matrix());
        }
    }
}

RowMatrix softmax_block(RowMatrix z) {
    for (Index i = 0; i < z.rows(); ++i) {
        auto row = z.row(i);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
    }
    return z;
}

int argmax_row(const double* row, Index n) {
    int best = 0;
    for (Index c = 1; c < n; ++c) {
        if (row[c] > row[best]) {
            best = static_cast<int>(c);
        }
    }
    return best;
}

}  // namespace

void set_workers(int workers) { g_workers = std::max(1, workers); }

int workers() { return g_workers; }

DataTerm cross_entropy(const Model& model, const RowMatrix& features, std::span<const int> labels,
                       std::span<const Index> rows, const LogitTerm* extra, bool want_gradient) {
    check_input(model, features);
    require(static_cast<Index>(labels.size()) == features.rows(), ErrorCode::Shape, "label count != feature rows");
    const Index n = rows.empty() ? features.rows() : static_cast<Index>(rows.size());
    require(n > 0, ErrorCode::Domain, "cross-entropy over an empty set of samples");

    const auto& params = model.params();
    const Index n_blocks = block_count(n);
    std::vector<double> block_loss(static_cast<std::size_t>(n_blocks), 0.0);
    std::vector<Vector> block_grad(want_gradient ? static_cast<std::size_t>(n_blocks) : 0);

    for_each_block(n_blocks, [&](Index b) {
        const auto blk = gather(features, labels, rows, b * kBlockRows, std::min(n, (b + 1) * kBlockRows));
        std::vector<RowMatrix> inputs;
        std::vector<RowMatrix> pre;
        RowMatrix dz = forward_block(params, blk.x, want_gradient ? &inputs : nullptr, want_gradient ? &pre : nullptr);
        RowMatrix z = extra != nullptr ? dz : RowMatrix();
        double loss = cross_entropy_in_place(dz, blk.labels);
        if (extra != nullptr) {
            loss += (*extra)(z, blk.ids, dz);
        }
        block_loss[static_cast<std::size_t>(b)] = loss;
        if (want_gradient) {
            Vector g(params.size());
            backward_block(params, std::move(dz), inputs, pre, g);
            block_grad[static_cast<std::size_t>(b)] = std::move(g);
        }
    });

    DataTerm out;
    const double scale = 1.0 / static_cast<double>(n);
    for (double l : block_loss) {
        out.loss += l;
    }
    out.loss *= scale;
    if (want_gradient) {
        out.gradient = Vector::Zero(params.size());
        for (const auto& g : block_grad) {
            out.gradient += g;
        }
        out.gradient *= scale;
    }
    return out;
}

DataTerm cross_entropy_serial(const Model& model, const RowMatrix& features, std::span<const int> labels,
                              bool want_gradient) {
    check_input(model, features);
    const auto& params = model.params();
    const auto& layout = params.layout();
    const int n_layers = layout.n_layers();
    const Index n = features.rows();
    require(n > 0, ErrorCode::Domain, "cross-entropy over an empty set of samples");

    DataTerm out;
    if (want_gradient) {
        out.gradient = Vector::Zero(params.size());
    }
    const auto& sizes = layout.layer_sizes();
    for (Index i = 0; i < n; ++i) {
        // acts[l] is the input of layer l; pre[l] its pre-activation output.
        std::vector<std::vector<double>> acts(static_cast<std::size_t>(n_layers) + 1);
        std::vector<std::vector<double>> pre(static_cast<std::size_t>(n_layers));
        acts[0].assign(features.row(i).data(), features.row(i).data() + features.cols());
        for (int l = 0; l < n_layers; ++l) {
            const auto w = params.weight(l);
            const auto bias = params.bias(l);
            const Index out_dim = sizes[static_cast<std::size_t>(l) + 1];
            const Index in_dim = sizes[static_cast<std::size_t>(l)];
            auto& z = pre[static_cast<std::size_t>(l)];
            z.assign(static_cast<std::size_t>(out_dim), 0.0);
            for (Index o = 0; o < out_dim; ++o) {
                double s = bias(o);
                for (Index k = 0; k < in_dim; ++k) {
                    s += w(o, k) * acts[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)];
                }
                z[static_cast<std::size_t>(o)] = s;
            }
            auto& next = acts[static_cast<std::size_t>(l) + 1];
            next = z;
            if (l + 1 < n_layers) {
                for (auto& v : next) {
                    v = std::max(v, 0.0);
                }
            }
        }
        const auto& z = pre.back();
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) {
            sum += std::exp(v - m);
        }
        const double lse = m + std::log(sum);
        const int y = labels[static_cast<std::size_t>(i)];
        out.loss += lse - z[static_cast<std::size_t>(y)];
        if (!want_gradient) {
            continue;
        }
        std::vector<double> delta(z.size());
        for (std::size_t c = 0; c < z.size(); ++c) {
            delta[c] = std::exp(z[c] - lse) - (static_cast<int>(c) == y ? 1.0 : 0.0);
        }
        for (int l = n_layers - 1; l >= 0; --l) {
            const auto& ws = layout.weight_segment(l);
            const auto& bs = layout.bias_segment(l);
            const auto& input = acts[static_cast<std::size_t>(l)];
            for (Index o = 0; o < ws.rows; ++o) {
                for (Index k = 0; k < ws.cols; ++k) {
                    out.gradient(ws.offset + o * ws.cols + k) += delta[static_cast<std::size_t>(o)] *
                                                                   input[static_cast<std::size_t>(k)];
                }
                out.gradient(bs.offset + o) += delta[static_cast<std::size_t>(o)];
            }
            if (l == 0) {
                break;
            }
            const auto w = params.weight(l);
            std::vector<double> prev(static_cast<std::size_t>(ws.cols), 0.0);
            for (Index k = 0; k < ws.cols; ++k) {
                double s = 0.0;
                for (Index o = 0; o < ws.rows; ++o) {
                    s += delta[static_cast<std::size_t>(o)] * w(o, k);
                }
                prev[static_cast<std::size_t>(k)] = pre[static_cast<std::size_t>(l) - 1][static_cast<std::size_t>(k)] > 0.0 ? s : 0.0;
            }
            delta = std::move(prev);
        }
    }
    out.loss /= static_cast<double>(n);
    if (want_gradient) {
        out.gradient /= static_cast<double>(n);
    }
    return out;
}

Vector linear_hessian_vector(const Model& model, const RowMatrix& features, const Vector& v) {
    require_linear(model);
    check_input(model, features);
    const auto& params = model.params();
    require(v.size() == params.size(), ErrorCode::Shape, "direction length != parameter count");
    const ParamVector dir(params.layout(), v);
    const Index n = features.rows();
    require(n > 0, ErrorCode::Domain, "Hessian over an empty dataset");
    const Index n_blocks = block_count(n);
    std::vector<Vector> partial(static_cast<std::size_t>(n_blocks));

    for_each_block(n_blocks, [&](Index b) {
        const Index begin = b * kBlockRows;
        const auto x = features.middleRows(begin, std::min(n, begin + kBlockRows) - begin);
        RowMatrix z = x * params.weight(0).transpose();
        z.rowwise() += params.bias(0).transpose();
        const RowMatrix p = softmax_block(std::move(z));
        RowMatrix u = x * dir.weight(0).transpose();
        u.rowwise() += dir.bias(0).transpose();
        RowMatrix r = p.cwiseProduct(u);
        const Vector pu = r.rowwise().sum();
        r -= (p.array().colwise() * pu.array()).matrix();
        Vector g(params.size());
        const auto& ws = params.layout().weight_segment(0);
        const auto& bs = params.layout().bias_segment(0);
        Eigen::Map<RowMatrix>(g.data() + ws.offset, ws.rows, ws.cols).noalias() = r.transpose() * x;
        Eigen::Map<Vector>(g.data() + bs.offset, bs.rows) = r.colwise().sum().transpose();
        partial[static_cast<std::size_t>(b)] = std::move(g);
    });

    Vector out = Vector::Zero(params.size());
    for (const auto& g : partial) {
        out += g;
    }
    return out / static_cast<double>(n);
}

Vector linear_hessian_vector_serial(const Model& model, const RowMatrix& features, const Vector& v) {
    return linear_hessian_serial(model, features) * v;
}

Matrix linear_hessian(const Model& model, const RowMatrix& features) {
    require_linear(model);
    check_input(model, features);
    const auto& params = model.params();
    require(params.size() <= kHessianParamGuard, ErrorCode::Capacity,
            "dense Hessian of " + std::to_string(params.size()) + " parameters exceeds the guard of " +
                std::to_string(kHessianParamGuard));
    const Index n = features.rows();
    require(n > 0, ErrorCode::Domain, "Hessian over an empty dataset");
    const Index d = features.cols();
    const int n_classes = model.n_classes();

    RowMatrix z = features * params.weight(0).transpose();
    z.rowwise() += params.bias(0).transpose();
    const RowMatrix p = softmax_block(std::move(z));
    Matrix augmented(n, d + 1);
    augmented.leftCols(d) = features;
    augmented.col(d).setOnes();

    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < n_classes; ++a) {
        for (int b = a; b < n_classes; ++b) {
            pairs.emplace_back(a, b);
        }
    }
    const Index bias_offset = params.layout().bias_segment(0).offset;
    Matrix h = Matrix::Zero(params.size(), params.size());
    const double scale = 1.0 / static_cast<double>(n);
    // Each (a, b) class pair owns disjoint entries of h.
#pragma omp parallel for schedule(dynamic) num_threads(g_workers)
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto [a, b] = pairs[k];
        Vector w = -p.col(a).cwiseProduct(p.col(b));
        if (a == b) {
            w += p.col(a);
        }
        const Matrix block = scale * (augmented.transpose() * w.asDiagonal() * augmented);
        const Index ra = a * d;
        const Index rb = b * d;
        h.block(ra, rb, d, d) = block.topLeftCorner(d, d);
        h.block(ra, bias_offset + b, d, 1) = block.topRightCorner(d, 1);
        h.block(bias_offset + a, rb, 1, d) = block.bottomLeftCorner(1, d);
        h(bias_offset + a, bias_offset + b) = block(d, d);
        if (a != b) {
            h.block(rb, ra, d, d) = block.topLeftCorner(d, d).transpose();
            h.block(rb, bias_offset + a, d, 1) = block.bottomLeftCorner(1, d).transpose();
            h.block(bias_offset + b, ra, 1, d) = block.topRightCorner(d, 1).transpose();
            h(bias_offset + b, bias_offset + a) = block(d, d);
        }
    }
    return h;
}

Matrix linear_hessian_serial(const Model& model, const RowMatrix& features) {
    require_linear(model);
    check_input(model, features);
    const auto& params = model.params();
    require(params.size() <= kHessianParamGuard, ErrorCode::Capacity, "dense Hessian exceeds the parameter guard");
    const Index n = features.rows();
    const Index d = features.cols();
    const int n_classes = model.n_classes();
    const auto w = params.weight(0);
    const auto bias = params.bias(0);
    const Index bias_offset = params.layout().bias_segment(0).offset;
    // Coordinate of (class a, augmented feature j); j == d is the bias.
    auto coord = [&](int a, Index j) { return j == d ? bias_offset + a : a * d + j; };

    Matrix h = Matrix::Zero(params.size(), params.size());
    std::vector<double> p(static_cast<std::size_t>(n_classes));
    for (Index i = 0; i < n; ++i) {
        double m = -INFINITY;
        for (int c = 0; c < n_classes; ++c) {
            double s = bias(c);
            for (Index j = 0; j < d; ++j) {
                s += w(c, j) * features(i, j);
            }
            p[static_cast<std::size_t>(c)] = s;
            m = std::max(m, s);
        }
        double sum = 0.0;
        for (auto& v : p) {
            v = std::exp(v - m);
            sum += v;
        }
        for (auto& v : p) {
            v /= sum;
        }
        for (int a = 0; a < n_classes; ++a) {
            for (int b = 0; b < n_classes; ++b) {
                const double wab = (a == b ? p[static_cast<std::size_t>(a)] : 0.0) -
                                   p[static_cast<std::size_t>(a)] * p[static_cast<std::size_t>(b)];
                for (Index j = 0; j <= d; ++j) {
                    const double xj = j == d ? 1.0 : features(i, j);
                    for (Index k = 0; k <= d; ++k) {
                        const double xk = k == d ? 1.0 : features(i, k);
                        h(coord(a, j), coord(b, k)) += wab * xj * xk;
                    }
                }
            }
        }
    }
    return h / static_cast<double>(n);
}

Vector linear_hessian_diagonal(const Model& model, const RowMatrix& features) {
    require_linear(model);
    check_input(model, features);
    const auto& params = model.params();
    const Index n = features.rows();
    require(n > 0, ErrorCode::Domain, "Hessian over an empty dataset");
    const Index n_blocks = block_count(n);
    std::vector<Vector> partial(static_cast<std::size_t>(n_blocks));
    for_each_block(n_blocks, [&](Index b) {
        const Index begin = b * kBlockRows;
        const auto x = features.middleRows(begin, std::min(n, begin + kBlockRows) - begin);
        RowMatrix z = x * params.weight(0).transpose();
        z.rowwise() += params.bias(0).transpose();
        const RowMatrix p = softmax_block(std::move(z));
        const RowMatrix curvature = p.cwiseProduct((1.0 - p.array()).matrix());
        Vector g(params.size());
        const auto& ws = params.layout().weight_segment(0);
        const auto& bs = params.layout().bias_segment(0);
        Eigen::Map<RowMatrix>(g.data() + ws.offset, ws.rows, ws.cols).noalias() =
            curvature.transpose() * x.cwiseAbs2();
        Eigen::Map<Vector>(g.data() + bs.offset, bs.rows) = curvature.colwise().sum().transpose();
        partial[static_cast<std::size_t>(b)] = std::move(g);
    });
    Vector out = Vector::Zero(params.size());
    for (const auto& g : partial) {
        out += g;
    }
    return out / static_cast<double>(n);
}

RowMatrix forward_logits(const Model& model, const RowMatrix& features) {
    check_input(model, features);
    const Index n = features.rows();
    RowMatrix out(n, model.n_classes());
    for_each_block(block_count(n), [&](Index b) {
        const Index begin = b * kBlockRows;
        const Index len = std::min(n, begin + kBlockRows) - begin;
        out.middleRows(begin, len) = forward_block(model.params(), features.middleRows(begin, len), nullptr, nullptr);
    });
    return out;
}

std::vector<int> predict(const Model& model, const RowMatrix& features) {
    const RowMatrix z = forward_logits(model, features);
    std::vector<int> out(static_cast<std::size_t>(z.rows()));
    for (Index i = 0; i < z.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = argmax_row(z.row(i).data(), z.cols());
    }
    return out;
}

std::vector<int> predict_serial(const Model& model, const RowMatrix& features) {
    check_input(model, features);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(features.rows()));
    for (Index i = 0; i < features.rows(); ++i) {
        const RowMatrix z = forward_block(model.params(), features.row(i), nullptr, nullptr);
        out.push_back(argmax_row(z.data(), z.cols()));
    }
    return out;
}

}  // namespace ltcl::kernels
