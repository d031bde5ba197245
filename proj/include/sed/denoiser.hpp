#pragma once

#include "sed/common.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sed {

struct DenoiserConfig {
    int layers = 4;
    int d_model = 128;
    int heads = 4;
    int head_size = 32;
    int d_embed = 32;
    int max_len = 128;
    int ffw_multiplier = 4;
    bool use_mask_channel = true;
    // Bucketed relative-position bias, one table shared by all layers.
    int rel_buckets = 32;
    int rel_max_distance = 128;

    void validate() const;
    int input_width() const { return 2 * d_embed + (use_mask_channel ? 1 : 0); }
    int attn_width() const { return heads * head_size; }
    int ffw_width() const { return ffw_multiplier * d_model; }
};

struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
    bool decay = false;  // weight decay applies (matrices only)
    size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

// Flat parameter layout derived from a DenoiserConfig. Tensor ids index
// `tensors()`. Each tensor starts on a multiple of kTensorAlign elements; the
// gaps stay zero.
class ParamLayout {
public:
    static constexpr size_t kTensorAlign = 16;

    struct Layer {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    explicit ParamLayout(const DenoiserConfig& config);

    const std::vector<TensorSpec>& tensors() const { return tensors_; }
    size_t total() const { return total_; }
    int find(const std::string& name) const;

    int in_w, in_b, time_w, time_b, rel_bias, final_g, final_b, out_w, out_b;
    std::vector<Layer> layers;

private:
    int add(std::string name, int rows, int cols, bool decay);
    std::vector<TensorSpec> tensors_;
    size_t total_ = 0;
};

// Aligned storage: Eigen's vectorized kernels pick their summation order from
// pointer alignment, so every buffer holding parameters or gradients must
// share one alignment for results to be reproducible across buffers.
template <typename S>
using ParamVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename S>
struct DenoiserParameters {
    std::shared_ptr<const ParamLayout> layout;
    ParamVector<S> values;

    Eigen::Map<MatT<S>> tensor(int id) {
        const auto& t = layout->tensors()[static_cast<size_t>(id)];
        return {values.data() + t.offset, t.rows, t.cols};
    }
    Eigen::Map<const MatT<S>> tensor(int id) const {
        const auto& t = layout->tensors()[static_cast<size_t>(id)];
        return {values.data() + t.offset, t.rows, t.cols};
    }

    template <typename T>
    DenoiserParameters<T> cast() const {
        return {layout, ParamVector<T>(values.begin(), values.end())};
    }
};

// Gradient buffer with the same layout as the parameters.
template <typename S>
using ParamGrad = DenoiserParameters<S>;

// Deterministic given the seed. Matrices use fan-in scaled Gaussians (residual
// output projections additionally scaled by 1/sqrt(2 * layers)); biases and the
// relative-position table start at zero, layer-norm gains at one.
template <typename S>
DenoiserParameters<S> init_params(const DenoiserConfig& config, uint64_t seed);

template <typename S>
DenoiserParameters<S> zeros_like(const DenoiserParameters<S>& p) {
    return {p.layout, ParamVector<S>(p.values.size(), S(0))};
}

// Sinusoidal features of scalar t: sin(t * w_i) in the first half, cos(t * w_i)
// in the second, w_i = 10000^(-i / (d/2)).
template <typename S>
RowVecT<S> sinusoidal_features(double t, int dim);

// Bidirectional bucket index of offset (key - query).
int relative_bucket(int offset, int buckets, int max_distance);

// Non-causal transformer estimating x0 from (x_t, self-conditioning estimate,
// conditioning-mask channel, t). Inputs are concatenated on the feature axis,
// projected to d_model, and the projected time embedding is added to every
// position.
template <typename S>
class Denoiser {
public:
    struct NormCache {
        MatT<S> xhat;
        VecT<S> rstd;
    };
    struct LayerCache {
        MatT<S> h_in;
        NormCache ln1;
        MatT<S> a, q, k, v;
        std::vector<MatT<S>> probs;  // per head, N x N
        MatT<S> o;
        MatT<S> h_mid;
        NormCache ln2;
        MatT<S> f, u, g;
    };
    struct Cache {
        MatT<S> input;
        RowVecT<S> temb;
        std::vector<LayerCache> layers;
        NormCache final_norm;
        MatT<S> z;
        Eigen::MatrixXi buckets;
    };

    explicit Denoiser(DenoiserConfig config);

    const DenoiserConfig& config() const { return config_; }
    const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }

    // x_t and self_cond are N x D; mask_channel has N entries (ignored when the
    // config has no mask channel). Throws when N > max_len.
    MatT<S> forward(const DenoiserParameters<S>& params, const MatT<S>& x_t, const MatT<S>& self_cond,
                    std::span<const S> mask_channel, double t, Cache* cache = nullptr) const;

    // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    void backward(const DenoiserParameters<S>& params, const Cache& cache, const MatT<S>& d_out,
                  ParamGrad<S>& grad) const;

private:
    DenoiserConfig config_;
    std::shared_ptr<const ParamLayout> layout_;
};

}  // namespace sed
