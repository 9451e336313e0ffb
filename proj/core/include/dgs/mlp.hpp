#pragma once

#include <cstdint>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

struct MlpShape {
    int latent_dim = 128;
    int pos_freqs = 4;
    int time_freqs = 2;
    int hidden_layers = 5;
    int hidden_width = 128;

    int encoding_dim() const { return 3 + 6 * pos_freqs + 1 + 2 * time_freqs; }
    int input_dim() const { return latent_dim + encoding_dim(); }
    bool operator==(const MlpShape&) const = default;
};

/// Sin/cos features of a point and a normalized time:
/// [x, sin(2^k x), cos(2^k x) (k < pos_freqs), t, sin(2^k t), cos(2^k t) (k < time_freqs)].
VecX encode_inputs(const Vec3& x, double t, int pos_freqs, int time_freqs);

/// dL/dx for the spatial part of encode_inputs, given dL/d(encoding).
Vec3 encode_inputs_vjp_x(const Vec3& x, int pos_freqs, const double* grad_enc);

struct DenseLayer {
    RowMatX weight; // out x in
    VecX bias;
};

/// Per-bone transform field. The latent enters the first layer next to the
/// encoded (x, t); hidden layers use tanh; the 8 outputs are read as a raw
/// (real, dual) quaternion pair. The output layer starts at zero and the
/// constant offset decodes to the identity motion.
class WarpFieldMLP {
public:
    WarpFieldMLP() = default;
    WarpFieldMLP(const MlpShape& shape, std::uint64_t seed);

    const MlpShape& shape() const { return shape_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    const Vec8& output_offset() const { return offset_; }

    /// Same shape, all parameters zero (gradient / moment buffer).
    WarpFieldMLP zeros_like() const;
    void add(const WarpFieldMLP& other);
    bool empty() const { return layers_.empty(); }
    std::size_t parameter_count() const;

    Vec8 forward(const VecX& latent, const VecX& encoding) const;

    struct BatchCache {
        std::vector<RowMatX> activations; // post-tanh, one per hidden layer
    };

    /// Evaluates N encodings (rows of `encodings`) sharing one latent. Returns N x 8.
    RowMatX forward_batch(const VecX& latent, const RowMatX& encodings, BatchCache* cache) const;

    /// Accumulates parameter gradients into `grad` (a zeros_like buffer) and
    /// the latent gradient into `grad_latent`. If `grad_encodings` is given it
    /// receives dL/d(encodings) (N x E, overwritten).
    void backward_batch(const VecX& latent, const RowMatX& encodings, const BatchCache& cache,
                        const RowMatX& grad_out, WarpFieldMLP& grad, VecX& grad_latent,
                        RowMatX* grad_encodings) const;

private:
    MlpShape shape_;
    std::vector<DenseLayer> layers_;
    Vec8 offset_ = Vec8::Zero();

    friend WarpFieldMLP make_mlp_from_parts(const MlpShape&, std::vector<DenseLayer>, const Vec8&);
};

/// Reassembles an MLP from stored parameters (checkpoint loading).
WarpFieldMLP make_mlp_from_parts(const MlpShape& shape, std::vector<DenseLayer> layers, const Vec8& offset);

} // namespace dgs
