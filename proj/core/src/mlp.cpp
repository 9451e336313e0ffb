#include "dgs/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "dgs/rng.hpp"

namespace dgs {

VecX encode_inputs(const Vec3& x, double t, int pos_freqs, int time_freqs) {
    VecX enc(3 + 6 * pos_freqs + 1 + 2 * time_freqs);
    int i = 0;
    for (int c = 0; c < 3; ++c) {
        enc[i++] = x[c];
    }
    for (int k = 0; k < pos_freqs; ++k) {
        const double f = std::ldexp(1.0, k);
        for (int c = 0; c < 3; ++c) {
            enc[i++] = std::sin(f * x[c]);
        }
        for (int c = 0; c < 3; ++c) {
            enc[i++] = std::cos(f * x[c]);
        }
    }
    enc[i++] = t;
    for (int k = 0; k < time_freqs; ++k) {
        const double f = std::ldexp(1.0, k);
        enc[i++] = std::sin(f * t);
        enc[i++] = std::cos(f * t);
    }
    return enc;
}

Vec3 encode_inputs_vjp_x(const Vec3& x, int pos_freqs, const double* g) {
    Vec3 out(g[0], g[1], g[2]);
    int i = 3;
    for (int k = 0; k < pos_freqs; ++k) {
        const double f = std::ldexp(1.0, k);
        for (int c = 0; c < 3; ++c) {
            out[c] += g[i++] * f * std::cos(f * x[c]);
        }
        for (int c = 0; c < 3; ++c) {
            out[c] -= g[i++] * f * std::sin(f * x[c]);
        }
    }
    return out;
}

WarpFieldMLP::WarpFieldMLP(const MlpShape& shape, std::uint64_t seed) : shape_(shape) {
    if (shape.hidden_layers < 1 || shape.hidden_width < 1 || shape.latent_dim < 0) {
        throw std::invalid_argument("WarpFieldMLP: need at least one hidden layer");
    }
    Rng rng(seed);
    int in = shape.input_dim();
    for (int l = 0; l < shape.hidden_layers; ++l) {
        DenseLayer layer;
        layer.weight.resize(shape.hidden_width, in);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + shape.hidden_width));
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                layer.weight(r, c) = rng.uniform(-limit, limit);
            }
        }
        layer.bias = VecX::Zero(shape.hidden_width);
        layers_.push_back(std::move(layer));
        in = shape.hidden_width;
    }
    layers_.push_back({RowMatX::Zero(8, in), VecX::Zero(8)});
    offset_.setZero();
    offset_[0] = 1.0;
}

WarpFieldMLP WarpFieldMLP::zeros_like() const {
    WarpFieldMLP out;
    out.shape_ = shape_;
    out.offset_.setZero();
    out.layers_.reserve(layers_.size());
    for (const auto& l : layers_) {
        out.layers_.push_back({RowMatX::Zero(l.weight.rows(), l.weight.cols()), VecX::Zero(l.bias.size())});
    }
    return out;
}

void WarpFieldMLP::add(const WarpFieldMLP& other) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].weight += other.layers_[i].weight;
        layers_[i].bias += other.layers_[i].bias;
    }
}

std::size_t WarpFieldMLP::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

Vec8 WarpFieldMLP::forward(const VecX& latent, const VecX& encoding) const {
    RowMatX enc(1, encoding.size());
    enc.row(0) = encoding.transpose();
    const RowMatX out = forward_batch(latent, enc, nullptr);
    return out.row(0).transpose();
}

RowMatX WarpFieldMLP::forward_batch(const VecX& latent, const RowMatX& encodings, BatchCache* cache) const {
    const int d = shape_.latent_dim;
    const int e = shape_.encoding_dim();
    const Eigen::Index n = encodings.rows();
    if (encodings.cols() != e || latent.size() != d) {
        throw std::invalid_argument("WarpFieldMLP: input size mismatch");
    }
    const DenseLayer& first = layers_.front();
    const VecX shared = first.weight.leftCols(d) * latent + first.bias;

    RowMatX h = encodings * first.weight.rightCols(e).transpose();
    h.rowwise() += shared.transpose();
    h = h.array().tanh();
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(h);
    }
    for (std::size_t l = 1; l + 1 < layers_.size(); ++l) {
        RowMatX next = h * layers_[l].weight.transpose();
        next.rowwise() += layers_[l].bias.transpose();
        h = next.array().tanh();
        if (cache) {
            cache->activations.push_back(h);
        }
    }
    const DenseLayer& last = layers_.back();
    RowMatX out = h * last.weight.transpose();
    const Vec8 bias = last.bias + offset_;
    out.rowwise() += bias.transpose();
    (void)n;
    return out;
}

void WarpFieldMLP::backward_batch(const VecX& latent, const RowMatX& encodings, const BatchCache& cache,
                                  const RowMatX& grad_out, WarpFieldMLP& grad, VecX& grad_latent,
                                  RowMatX* grad_encodings) const {
    const int d = shape_.latent_dim;
    const int e = shape_.encoding_dim();
    const std::size_t hidden = layers_.size() - 1;

    const DenseLayer& last = layers_.back();
    const RowMatX& h_last = cache.activations.back();
    grad.layers_.back().weight.noalias() += grad_out.transpose() * h_last;
    grad.layers_.back().bias += grad_out.colwise().sum().transpose();

    RowMatX g_h = grad_out * last.weight;
    for (std::size_t l = hidden; l-- > 0;) {
        const RowMatX& h = cache.activations[l];
        RowMatX g_pre = g_h.array() * (1.0 - h.array().square());
        if (l > 0) {
            grad.layers_[l].weight.noalias() += g_pre.transpose() * cache.activations[l - 1];
            grad.layers_[l].bias += g_pre.colwise().sum().transpose();
            g_h = g_pre * layers_[l].weight;
        } else {
            const VecX summed = g_pre.colwise().sum().transpose();
            grad.layers_[0].weight.rightCols(e).noalias() += g_pre.transpose() * encodings;
            grad.layers_[0].weight.leftCols(d).noalias() += summed * latent.transpose();
            grad.layers_[0].bias += summed;
            grad_latent.noalias() += layers_[0].weight.leftCols(d).transpose() * summed;
            if (grad_encodings) {
                *grad_encodings = g_pre * layers_[0].weight.rightCols(e);
            }
        }
    }
}

WarpFieldMLP make_mlp_from_parts(const MlpShape& shape, std::vector<DenseLayer> layers, const Vec8& offset) {
    if (layers.size() != static_cast<std::size_t>(shape.hidden_layers) + 1) {
        throw std::invalid_argument("make_mlp_from_parts: layer count does not match shape");
    }
    WarpFieldMLP out;
    out.shape_ = shape;
    out.layers_ = std::move(layers);
    out.offset_ = offset;
    return out;
}

} // namespace dgs
