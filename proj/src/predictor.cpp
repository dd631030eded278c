#include "rigidloc/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rigidloc/rng.hpp"

namespace rigidloc {

namespace {

using MapMat = Eigen::Map<Eigen::MatrixXd>;
using ConstMapMat = Eigen::Map<const Eigen::MatrixXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

ConstMapMat view(const ParamBlock& b, std::span<const double> v) {
    return ConstMapMat(v.data() + b.offset, b.rows, b.cols);
}

MapMat view(const ParamBlock& b, std::span<double> v) {
    return MapMat(v.data() + b.offset, b.rows, b.cols);
}

std::string layer_name(std::size_t l, std::size_t layers) {
    return l + 1 == layers ? std::string("head") : "layer" + std::to_string(l);
}

constexpr int kOutputs = 5;

}  // namespace

const ParamBlock& ParamLayout::find(const std::string& name) const {
    for (const ParamBlock& b : blocks) {
        if (b.name == name) return b;
    }
    throw std::out_of_range("parameter block '" + name + "' not found");
}

const ParamBlock& ParamLayout::block_of(std::size_t i) const {
    for (const ParamBlock& b : blocks) {
        if (i >= b.offset && i < b.offset + b.size()) return b;
    }
    throw std::out_of_range("parameter index out of range");
}

OutputNormalization normalization_from(std::span<const FrameTarget* const> targets) {
    OutputNormalization n;
    Vec3 sum = Vec3::Zero();
    double dsum = 0.0;
    std::size_t count = 0;
    for (const FrameTarget* t : targets) {
        for (std::size_t i = 0; i < t->size(); ++i) {
            if (!t->valid[i]) continue;
            sum += t->point_map[i];
            dsum += t->depth[i];
            ++count;
        }
    }
    if (count == 0) return n;
    n.mean_point = sum / static_cast<double>(count);
    n.mean_depth = dsum / static_cast<double>(count);
    double pvar = 0.0;
    double dvar = 0.0;
    for (const FrameTarget* t : targets) {
        for (std::size_t i = 0; i < t->size(); ++i) {
            if (!t->valid[i]) continue;
            pvar += (t->point_map[i] - n.mean_point).squaredNorm();
            dvar += (t->depth[i] - n.mean_depth) * (t->depth[i] - n.mean_depth);
        }
    }
    const double c = static_cast<double>(count);
    const double ps = std::sqrt(pvar / (3.0 * c));
    const double ds = std::sqrt(dvar / c);
    n.point_scale = ps > 1e-6 ? ps : 1.0;
    n.depth_scale = ds > 1e-6 ? ds : 1.0;
    return n;
}

int PredictorParams::embedding_column(const FrameId& id) const {
    const auto it = std::find(frames.begin(), frames.end(), id);
    if (it == frames.end()) {
        throw std::out_of_range("frame (" + std::to_string(id.sequence) + ", " + std::to_string(id.index) +
                                ") has no embedding");
    }
    return static_cast<int>(it - frames.begin());
}

std::vector<double> PredictorParams::embedding(const FrameId& id) const {
    const ParamBlock& b = layout.find("embeddings");
    const int col = embedding_column(id);
    const double* p = values.data() + b.offset + static_cast<std::size_t>(col) * b.rows;
    return {p, p + b.rows};
}

std::vector<double> PredictorParams::interpolated_embedding(const FrameId& a, const FrameId& b, double t) const {
    std::vector<double> ea = embedding(a);
    const std::vector<double> eb = embedding(b);
    for (std::size_t i = 0; i < ea.size(); ++i) ea[i] = (1.0 - t) * ea[i] + t * eb[i];
    return ea;
}

int feature_dim(int fourier_frequencies) { return 2 + 4 * fourier_frequencies; }

Eigen::MatrixXd pixel_features(const PixelGrid& grid, int fourier_frequencies) {
    Eigen::MatrixXd f(feature_dim(fourier_frequencies), static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double a = 2.0 * (grid.col(i) + 0.5) / grid.width - 1.0;
        const double b = 2.0 * (grid.row(i) + 0.5) / grid.height - 1.0;
        const auto c = static_cast<Eigen::Index>(i);
        f(0, c) = a;
        f(1, c) = b;
        for (int l = 0; l < fourier_frequencies; ++l) {
            const double s = std::ldexp(std::numbers::pi, l);
            f(2 + 4 * l, c) = std::sin(s * a);
            f(3 + 4 * l, c) = std::cos(s * a);
            f(4 + 4 * l, c) = std::sin(s * b);
            f(5 + 4 * l, c) = std::cos(s * b);
        }
    }
    return f;
}

PredictorParams init_predictor(const PredictorConfig& cfg, const PixelGrid& grid, std::vector<FrameId> frames,
                               const OutputNormalization& norm, std::uint64_t seed) {
    if (cfg.hidden.empty()) throw std::invalid_argument("predictor: need at least one hidden layer");
    if (frames.empty()) throw std::invalid_argument("predictor: no frames to embed");
    PredictorParams p;
    p.config = cfg;
    p.grid = grid;
    p.norm = norm;
    p.frames = std::move(frames);

    std::vector<int> widths;
    widths.push_back(feature_dim(cfg.fourier_frequencies) + cfg.embedding_dim);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(kOutputs);
    const std::size_t layers = widths.size() - 1;

    std::size_t offset = 0;
    auto add = [&](std::string name, int rows, int cols) {
        p.layout.blocks.push_back(ParamBlock{std::move(name), offset, rows, cols});
        offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    };
    for (std::size_t l = 0; l < layers; ++l) {
        add(layer_name(l, layers) + ".weight", widths[l + 1], widths[l]);
        add(layer_name(l, layers) + ".bias", widths[l + 1], 1);
    }
    add("embeddings", cfg.embedding_dim, static_cast<int>(p.frames.size()));
    p.values.assign(offset, 0.0);

    CounterRng rng = CounterRng(seed).split(0x7072656469ULL);
    for (std::size_t l = 0; l < layers; ++l) {
        const ParamBlock& w = p.layout.find(layer_name(l, layers) + ".weight");
        const bool head = l + 1 == layers;
        const double scale = head ? cfg.head_init_scale : std::sqrt(1.0 / w.cols);
        for (std::size_t i = 0; i < w.size(); ++i) p.values[w.offset + i] = scale * rng.normal();
    }
    const ParamBlock& e = p.layout.find("embeddings");
    for (std::size_t i = 0; i < e.size(); ++i) p.values[e.offset + i] = cfg.embedding_init_scale * rng.normal();
    return p;
}

Predictor::Predictor(PredictorParams params)
    : params_(std::move(params)), features_(pixel_features(params_.grid, params_.config.fourier_frequencies)) {}

void Predictor::set_values(std::span<const double> v) {
    if (v.size() != params_.values.size()) throw std::invalid_argument("predictor: parameter size mismatch");
    std::copy(v.begin(), v.end(), params_.values.begin());
}

PredictorOutput Predictor::forward(std::span<const double> embedding, ForwardCache* cache) const {
    const auto& blocks = params_.layout.blocks;
    const std::size_t layers = (blocks.size() - 1) / 2;
    const Eigen::Index fdim = features_.rows();
    const Eigen::Index pixels = features_.cols();
    const std::span<const double> v = params_.values;
    if (static_cast<int>(embedding.size()) != params_.config.embedding_dim) {
        throw std::invalid_argument("predictor: embedding has the wrong dimension");
    }
    const ConstMapVec e(embedding.data(), static_cast<Eigen::Index>(embedding.size()));

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.pre.resize(layers - 1);
    c.post.resize(layers - 1);

    const bool relu = params_.config.activation == Activation::relu;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        const ConstMapMat W = view(blocks[2 * l], v);
        const ConstMapMat b = view(blocks[2 * l + 1], v);
        if (l == 0) {
            const Eigen::VectorXd shift = W.rightCols(e.size()) * e + b.col(0);
            c.pre[0].noalias() = W.leftCols(fdim) * features_;
            c.pre[0].colwise() += shift;
        } else {
            c.pre[l].noalias() = W * c.post[l - 1];
            c.pre[l].colwise() += b.col(0);
        }
        c.post[l] = relu ? Eigen::MatrixXd(c.pre[l].cwiseMax(0.0)) : Eigen::MatrixXd(c.pre[l].array().tanh());
    }
    const ConstMapMat Wh = view(blocks[2 * (layers - 1)], v);
    const ConstMapMat bh = view(blocks[2 * (layers - 1) + 1], v);
    c.out.noalias() = Wh * c.post.back();
    c.out.colwise() += bh.col(0);

    const OutputNormalization& n = params_.norm;
    PredictorOutput o;
    o.point_map.resize(static_cast<std::size_t>(pixels));
    o.depth.resize(static_cast<std::size_t>(pixels));
    o.weights.resize(static_cast<std::size_t>(pixels));
    for (Eigen::Index i = 0; i < pixels; ++i) {
        const auto s = static_cast<std::size_t>(i);
        o.point_map[s] = n.mean_point + n.point_scale * c.out.block<3, 1>(0, i);
        o.depth[s] = n.mean_depth + n.depth_scale * c.out(3, i);
        o.weights[s] = 1.0 / (1.0 + std::exp(-c.out(4, i)));
    }
    return o;
}

void Predictor::backward(std::span<const double> embedding, int embedding_column, const ForwardCache& c,
                         const OutputGradient& dout, std::span<double> grad) const {
    const auto& blocks = params_.layout.blocks;
    const std::size_t layers = (blocks.size() - 1) / 2;
    const Eigen::Index fdim = features_.rows();
    const Eigen::Index pixels = features_.cols();
    const std::span<const double> v = params_.values;
    const ConstMapVec e(embedding.data(), static_cast<Eigen::Index>(embedding.size()));
    const OutputNormalization& n = params_.norm;

    Eigen::MatrixXd delta(kOutputs, pixels);
    for (Eigen::Index i = 0; i < pixels; ++i) {
        const auto s = static_cast<std::size_t>(i);
        delta.block<3, 1>(0, i) = n.point_scale * dout.point_map[s];
        delta(3, i) = n.depth_scale * dout.depth[s];
        const double w = 1.0 / (1.0 + std::exp(-c.out(4, i)));
        delta(4, i) = dout.weights[s] * w * (1.0 - w);
    }

    const bool relu = params_.config.activation == Activation::relu;
    for (std::size_t l = layers; l-- > 0;) {
        const ParamBlock& wb = blocks[2 * l];
        const ParamBlock& bb = blocks[2 * l + 1];
        MapMat gW = view(wb, grad);
        MapMat gb = view(bb, grad);
        gb.col(0) += delta.rowwise().sum();
        if (l == 0) {
            const Eigen::VectorXd dsum = delta.rowwise().sum();
            gW.leftCols(fdim).noalias() += delta * features_.transpose();
            gW.rightCols(e.size()).noalias() += dsum * e.transpose();
            if (embedding_column >= 0) {
                const ParamBlock& eb = params_.layout.find("embeddings");
                MapMat gE = view(eb, grad);
                gE.col(embedding_column).noalias() += view(wb, v).rightCols(e.size()).transpose() * dsum;
            }
            break;
        }
        gW.noalias() += delta * c.post[l - 1].transpose();
        Eigen::MatrixXd up = view(wb, v).transpose() * delta;
        if (relu) {
            up.array() *= (c.pre[l - 1].array() > 0.0).cast<double>();
        } else {
            up.array() *= 1.0 - c.post[l - 1].array().square();
        }
        delta = std::move(up);
    }
}

}  // namespace rigidloc
