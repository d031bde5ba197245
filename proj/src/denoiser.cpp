#include "sed/denoiser.hpp"

#include <cmath>
#include <numbers>

namespace sed {

void DenoiserConfig::validate() const {
    if (layers < 1 || d_model < 1 || heads < 1 || head_size < 1 || d_embed < 1 || max_len < 1 ||
        ffw_multiplier < 1) {
        throw Error("denoiser config: all sizes must be positive");
    }
    if (d_embed > d_model) throw Error("denoiser config: d_embed must not exceed d_model");
    if (rel_buckets < 2 || rel_buckets % 2 != 0) throw Error("denoiser config: rel_buckets must be even and >= 2");
    if (rel_max_distance < 1) throw Error("denoiser config: rel_max_distance must be positive");
}

ParamLayout::ParamLayout(const DenoiserConfig& c) {
    c.validate();
    const int m = c.d_model;
    const int a = c.attn_width();
    const int f = c.ffw_width();
    in_w = add("in_proj.w", c.input_width(), m, true);
    in_b = add("in_proj.b", 1, m, false);
    time_w = add("time_proj.w", m, m, true);
    time_b = add("time_proj.b", 1, m, false);
    rel_bias = add("rel_bias", c.rel_buckets, c.heads, false);
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer L{};
        L.ln1_g = add(p + "ln1.g", 1, m, false);
        L.ln1_b = add(p + "ln1.b", 1, m, false);
        L.wq = add(p + "attn.wq", m, a, true);
        L.bq = add(p + "attn.bq", 1, a, false);
        L.wk = add(p + "attn.wk", m, a, true);
        L.bk = add(p + "attn.bk", 1, a, false);
        L.wv = add(p + "attn.wv", m, a, true);
        L.bv = add(p + "attn.bv", 1, a, false);
        L.wo = add(p + "attn.wo", a, m, true);
        L.bo = add(p + "attn.bo", 1, m, false);
        L.ln2_g = add(p + "ln2.g", 1, m, false);
        L.ln2_b = add(p + "ln2.b", 1, m, false);
        L.w1 = add(p + "ffw.w1", m, f, true);
        L.b1 = add(p + "ffw.b1", 1, f, false);
        L.w2 = add(p + "ffw.w2", f, m, true);
        L.b2 = add(p + "ffw.b2", 1, m, false);
        layers.push_back(L);
    }
    final_g = add("final_ln.g", 1, m, false);
    final_b = add("final_ln.b", 1, m, false);
    out_w = add("out_proj.w", m, c.d_embed, true);
    out_b = add("out_proj.b", 1, c.d_embed, false);
}

int ParamLayout::add(std::string name, int rows, int cols, bool decay) {
    total_ = (total_ + kTensorAlign - 1) / kTensorAlign * kTensorAlign;
    TensorSpec t{std::move(name), rows, cols, total_, decay};
    total_ += t.size();
    tensors_.push_back(std::move(t));
    return static_cast<int>(tensors_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const {
    for (size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name == name) return static_cast<int>(i);
    }
    throw Error("no parameter tensor named " + name);
}

template <typename S>
DenoiserParameters<S> init_params(const DenoiserConfig& config, uint64_t seed) {
    auto layout = std::make_shared<const ParamLayout>(config);
    DenoiserParameters<S> p{layout, ParamVector<S>(layout->total(), S(0))};
    Rng rng = derive_rng(seed, 0x696E6974);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double residual = 1.0 / std::sqrt(2.0 * config.layers);
    auto gaussian = [&](int id, double scale) {
        auto t = p.tensor(id);
        const double std_dev = scale / std::sqrt(static_cast<double>(t.rows()));
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(std_dev * nd(rng));
    };
    auto ones = [&](int id) { p.tensor(id).setOnes(); };
    gaussian(layout->in_w, 1.0);
    gaussian(layout->time_w, 1.0);
    for (const auto& L : layout->layers) {
        ones(L.ln1_g);
        gaussian(L.wq, 1.0);
        gaussian(L.wk, 1.0);
        gaussian(L.wv, 1.0);
        gaussian(L.wo, residual);
        ones(L.ln2_g);
        gaussian(L.w1, 1.0);
        gaussian(L.w2, residual);
    }
    ones(layout->final_g);
    gaussian(layout->out_w, 1.0);
    return p;
}

template DenoiserParameters<float> init_params<float>(const DenoiserConfig&, uint64_t);
template DenoiserParameters<double> init_params<double>(const DenoiserConfig&, uint64_t);

template <typename S>
RowVecT<S> sinusoidal_features(double t, int dim) {
    RowVecT<S> out = RowVecT<S>::Zero(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out(i) = static_cast<S>(std::sin(t * freq));
        out(half + i) = static_cast<S>(std::cos(t * freq));
    }
    return out;
}

template RowVecT<float> sinusoidal_features<float>(double, int);
template RowVecT<double> sinusoidal_features<double>(double, int);

int relative_bucket(int offset, int buckets, int max_distance) {
    const int half = buckets / 2;
    int bucket = offset > 0 ? half : 0;
    const int dist = std::abs(offset);
    const int exact = std::max(half / 2, 1);
    if (dist < exact) return bucket + dist;
    const double scaled = std::log(static_cast<double>(dist) / exact) /
                          std::log(std::max(static_cast<double>(max_distance) / exact, 1.0 + 1e-9)) *
                          static_cast<double>(half - exact);
    const int large = exact + static_cast<int>(scaled);
    return bucket + std::min(large, half - 1);
}

namespace {

constexpr double kNormEps = 1e-5;

template <typename S>
MatT<S> layer_norm(const MatT<S>& x, const Eigen::Map<const MatT<S>>& gain, const Eigen::Map<const MatT<S>>& bias,
                   typename Denoiser<S>::NormCache* cache) {
    const auto n = x.rows();
    const auto d = x.cols();
    MatT<S> xhat(n, d);
    VecT<S> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const S mean = x.row(i).mean();
        const S var = (x.row(i).array() - mean).square().mean();
        rstd(i) = S(1) / std::sqrt(var + static_cast<S>(kNormEps));
        xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
    }
    MatT<S> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

template <typename S>
MatT<S> layer_norm_backward(const MatT<S>& dy, const typename Denoiser<S>::NormCache& c,
                            const Eigen::Map<const MatT<S>>& gain, Eigen::Map<MatT<S>> d_gain,
                            Eigen::Map<MatT<S>> d_bias) {
    d_gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    d_bias.row(0) += dy.colwise().sum();
    MatT<S> dxhat = dy.array().rowwise() * gain.row(0).array();
    MatT<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const S m1 = dxhat.row(i).mean();
        const S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
        dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
}

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * static_cast<S>(std::numbers::sqrt2 / 2.0)));
}

template <typename S>
S gelu_grad(S x) {
    const S cdf = S(0.5) * (S(1) + std::erf(x * static_cast<S>(std::numbers::sqrt2 / 2.0)));
    const S pdf = std::exp(S(-0.5) * x * x) * static_cast<S>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <typename S>
void softmax_rows(MatT<S>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const S mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

}  // namespace

template <typename S>
Denoiser<S>::Denoiser(DenoiserConfig config)
    : config_(config), layout_(std::make_shared<const ParamLayout>(config)) {}

template <typename S>
MatT<S> Denoiser<S>::forward(const DenoiserParameters<S>& P, const MatT<S>& x_t, const MatT<S>& self_cond,
                             std::span<const S> mask_channel, double t, Cache* cache) const {
    const auto& L = *layout_;
    const int n = static_cast<int>(x_t.rows());
    const int d = config_.d_embed;
    if (n < 1) throw Error("denoiser input is empty");
    if (n > config_.max_len) {
        throw Error("sequence length " + std::to_string(n) + " exceeds max_len " + std::to_string(config_.max_len));
    }
    if (x_t.cols() != d || self_cond.rows() != n || self_cond.cols() != d) {
        throw Error("denoiser input shape mismatch");
    }
    if (config_.use_mask_channel && mask_channel.size() != static_cast<size_t>(n)) {
        throw Error("mask channel length mismatch");
    }
    if (P.values.size() != L.total()) throw Error("parameter vector does not match the denoiser layout");

    MatT<S> input(n, config_.input_width());
    input.leftCols(d) = x_t;
    input.middleCols(d, d) = self_cond;
    if (config_.use_mask_channel) {
        for (int i = 0; i < n; ++i) input(i, 2 * d) = mask_channel[static_cast<size_t>(i)];
    }
    const RowVecT<S> temb = sinusoidal_features<S>(t, config_.d_model);
    const RowVecT<S> time_vec = temb * P.tensor(L.time_w) + P.tensor(L.time_b);

    MatT<S> h = input * P.tensor(L.in_w);
    h.rowwise() += P.tensor(L.in_b).row(0) + time_vec;

    Eigen::MatrixXi buckets(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            buckets(i, j) = relative_bucket(j - i, config_.rel_buckets, config_.rel_max_distance);
        }
    }
    const auto rel = P.tensor(L.rel_bias);
    const int hs = config_.head_size;
    const S scale = S(1) / std::sqrt(static_cast<S>(hs));

    if (cache) {
        cache->input = input;
        cache->temb = temb;
        cache->layers.assign(L.layers.size(), LayerCache{});
        cache->buckets = buckets;
    }

    for (size_t l = 0; l < L.layers.size(); ++l) {
        const auto& ids = L.layers[l];
        LayerCache* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) lc->h_in = h;

        MatT<S> a = layer_norm<S>(h, P.tensor(ids.ln1_g), P.tensor(ids.ln1_b), lc ? &lc->ln1 : nullptr);
        MatT<S> q = a * P.tensor(ids.wq);
        q.rowwise() += P.tensor(ids.bq).row(0);
        MatT<S> k = a * P.tensor(ids.wk);
        k.rowwise() += P.tensor(ids.bk).row(0);
        MatT<S> v = a * P.tensor(ids.wv);
        v.rowwise() += P.tensor(ids.bv).row(0);

        MatT<S> o(n, config_.attn_width());
        if (lc) lc->probs.resize(static_cast<size_t>(config_.heads));
        for (int hd = 0; hd < config_.heads; ++hd) {
            MatT<S> scores = (q.middleCols(hd * hs, hs) * k.middleCols(hd * hs, hs).transpose()) * scale;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) scores(i, j) += rel(buckets(i, j), hd);
            }
            softmax_rows<S>(scores);
            o.middleCols(hd * hs, hs).noalias() = scores * v.middleCols(hd * hs, hs);
            if (lc) lc->probs[static_cast<size_t>(hd)] = std::move(scores);
        }
        h.noalias() += o * P.tensor(ids.wo);
        h.rowwise() += P.tensor(ids.bo).row(0);
        if (lc) {
            lc->a = std::move(a);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->o = std::move(o);
            lc->h_mid = h;
        }

        MatT<S> f = layer_norm<S>(h, P.tensor(ids.ln2_g), P.tensor(ids.ln2_b), lc ? &lc->ln2 : nullptr);
        MatT<S> u = f * P.tensor(ids.w1);
        u.rowwise() += P.tensor(ids.b1).row(0);
        MatT<S> g = u.unaryExpr([](S x) { return gelu(x); });
        h.noalias() += g * P.tensor(ids.w2);
        h.rowwise() += P.tensor(ids.b2).row(0);
        if (lc) {
            lc->f = std::move(f);
            lc->u = std::move(u);
            lc->g = std::move(g);
        }
    }

    MatT<S> z = layer_norm<S>(h, P.tensor(L.final_g), P.tensor(L.final_b), cache ? &cache->final_norm : nullptr);
    MatT<S> out = z * P.tensor(L.out_w);
    out.rowwise() += P.tensor(L.out_b).row(0);
    if (cache) cache->z = std::move(z);
    return out;
}

template <typename S>
void Denoiser<S>::backward(const DenoiserParameters<S>& P, const Cache& c, const MatT<S>& d_out,
                           ParamGrad<S>& G) const {
    const auto& L = *layout_;
    if (G.values.size() != L.total()) throw Error("gradient buffer does not match the denoiser layout");
    const int n = static_cast<int>(d_out.rows());
    const int hs = config_.head_size;
    const S scale = S(1) / std::sqrt(static_cast<S>(hs));

    G.tensor(L.out_w).noalias() += c.z.transpose() * d_out;
    G.tensor(L.out_b).row(0) += d_out.colwise().sum();
    MatT<S> dz = d_out * P.tensor(L.out_w).transpose();
    MatT<S> dh = layer_norm_backward<S>(dz, c.final_norm, P.tensor(L.final_g), G.tensor(L.final_g),
                                        G.tensor(L.final_b));

    auto d_rel = G.tensor(L.rel_bias);
    for (int l = static_cast<int>(L.layers.size()) - 1; l >= 0; --l) {
        const auto& ids = L.layers[static_cast<size_t>(l)];
        const auto& lc = c.layers[static_cast<size_t>(l)];

        // Feed-forward block: h = h_mid + gelu(ln2(h_mid) W1 + b1) W2 + b2.
        G.tensor(ids.w2).noalias() += lc.g.transpose() * dh;
        G.tensor(ids.b2).row(0) += dh.colwise().sum();
        MatT<S> du = dh * P.tensor(ids.w2).transpose();
        du.array() *= lc.u.unaryExpr([](S x) { return gelu_grad(x); }).array();
        G.tensor(ids.w1).noalias() += lc.f.transpose() * du;
        G.tensor(ids.b1).row(0) += du.colwise().sum();
        MatT<S> df = du * P.tensor(ids.w1).transpose();
        MatT<S> dh_mid = dh + layer_norm_backward<S>(df, lc.ln2, P.tensor(ids.ln2_g), G.tensor(ids.ln2_g),
                                                     G.tensor(ids.ln2_b));

        // Attention block: h_mid = h_in + attn(ln1(h_in)) Wo + bo.
        G.tensor(ids.wo).noalias() += lc.o.transpose() * dh_mid;
        G.tensor(ids.bo).row(0) += dh_mid.colwise().sum();
        MatT<S> d_o = dh_mid * P.tensor(ids.wo).transpose();
        MatT<S> dq(n, config_.attn_width());
        MatT<S> dk(n, config_.attn_width());
        MatT<S> dv(n, config_.attn_width());
        for (int hd = 0; hd < config_.heads; ++hd) {
            const MatT<S>& p = lc.probs[static_cast<size_t>(hd)];
            const auto d_oh = d_o.middleCols(hd * hs, hs);
            MatT<S> dp = d_oh * lc.v.middleCols(hd * hs, hs).transpose();
            dv.middleCols(hd * hs, hs).noalias() = p.transpose() * d_oh;
            MatT<S> ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) d_rel(c.buckets(i, j), hd) += ds(i, j);
            }
            ds *= scale;
            dq.middleCols(hd * hs, hs).noalias() = ds * lc.k.middleCols(hd * hs, hs);
            dk.middleCols(hd * hs, hs).noalias() = ds.transpose() * lc.q.middleCols(hd * hs, hs);
        }
        G.tensor(ids.wq).noalias() += lc.a.transpose() * dq;
        G.tensor(ids.bq).row(0) += dq.colwise().sum();
        G.tensor(ids.wk).noalias() += lc.a.transpose() * dk;
        G.tensor(ids.bk).row(0) += dk.colwise().sum();
        G.tensor(ids.wv).noalias() += lc.a.transpose() * dv;
        G.tensor(ids.bv).row(0) += dv.colwise().sum();
        MatT<S> da = dq * P.tensor(ids.wq).transpose();
        da.noalias() += dk * P.tensor(ids.wk).transpose();
        da.noalias() += dv * P.tensor(ids.wv).transpose();
        dh = dh_mid + layer_norm_backward<S>(da, lc.ln1, P.tensor(ids.ln1_g), G.tensor(ids.ln1_g),
                                             G.tensor(ids.ln1_b));
    }

    G.tensor(L.in_w).noalias() += c.input.transpose() * dh;
    const RowVecT<S> dsum = dh.colwise().sum();
    G.tensor(L.in_b).row(0) += dsum;
    G.tensor(L.time_w).noalias() += c.temb.transpose() * dsum;
    G.tensor(L.time_b).row(0) += dsum;
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace sed
