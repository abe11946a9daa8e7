#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "geoscene/errors.hpp"
#include "geoscene/image.hpp"
#include "geoscene/ops.hpp"
#include "geoscene/rng.hpp"
#include "geoscene/tensor.hpp"

// Double-stream joint-attention diffusion transformer over patch tokens.
// The joint sequence is [target tokens | reference tokens | condition
// tokens]; image and condition streams carry separate norm/projection/MLP
// weights but attend jointly. The supervised block exposes its head-averaged
// attention matrix aggregated into per-token cross-view maps.

namespace geoscene {

struct ModelConfig {
    int h = 64, w = 64, p = 8;
    int d = 64;
    int heads = 4;
    int blocks = 4;
    int b_star = 2;
    int mlp_ratio = 4;
    int n_cond = 4;
    int cond_vocab = 28;
    int t_train = 1000;

    int hs() const { return h / p; }
    int ws() const { return w / p; }
    int tokens_per_view() const { return hs() * ws(); }
    int l_visual() const { return 2 * tokens_per_view(); }
    int l_total() const { return l_visual() + n_cond; }
    int patch_dim() const { return 3 * p * p; }
    int head_dim() const { return d / heads; }

    void validate() const {
        if (h < p || w < p || h % p != 0 || w % p != 0)
            throw param_error("model: image dims must be positive multiples of patch size");
        if (d % heads != 0) throw param_error("model: d must be divisible by head count");
        if (b_star < 0 || b_star >= blocks)
            throw param_error("model: supervised block index out of range");
        if (t_train < 1) throw param_error("model: t_train must be >= 1");
    }
};

template <typename T>
struct CaptureT {
    TensorPtrT<T> a0; // hs x ws
    TensorPtrT<T> a1; // hs x ws
    int block = -1;
};

template <typename T>
struct ForwardOutT {
    TensorPtrT<T> eps_hat; // L0 x 3P^2
    CaptureT<T> capture;
};

/// image [0,255] u8 -> patch rows in [-1,1]; raster patch order, each row
/// laid out (dy, dx, channel)
template <typename T>
TensorPtrT<T> patchify(const Image& img, int p) {
    if (img.h % p != 0 || img.w % p != 0)
        throw dim_error("patchify: image dims not divisible by patch size");
    const int gh = img.h / p, gw = img.w / p;
    auto out = make_tensor<T>({gh * gw, 3 * p * p});
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            T* row = out->data.data() + size_t(py * gw + px) * out->shape[1];
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx) {
                    const uint8_t* q = img.px(py * p + dy, px * p + dx);
                    for (int c = 0; c < 3; ++c)
                        row[(dy * p + dx) * 3 + c] = T(q[c]) / T(127.5) - T(1);
                }
        }
    return out;
}

template <typename T>
Image unpatchify(const TensorT<T>& tokens, int h, int w, int p) {
    const int gh = h / p, gw = w / p;
    if (tokens.ndim() != 2 || tokens.shape[0] != gh * gw || tokens.shape[1] != 3 * p * p)
        throw dim_error("unpatchify: token shape inconsistent with image dims");
    Image img(h, w);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            const T* row = tokens.data.data() + size_t(py * gw + px) * tokens.shape[1];
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx) {
                    uint8_t* q = img.px(py * p + dy, px * p + dx);
                    for (int c = 0; c < 3; ++c) {
                        double v = (double(row[(dy * p + dx) * 3 + c]) + 1.0) * 127.5;
                        v = std::min(255.0, std::max(0.0, std::round(v)));
                        q[c] = uint8_t(v);
                    }
                }
        }
    return img;
}

/// 2D sinusoidal grid encoding, d/2 dims per axis
template <typename T>
std::vector<T> sincos_grid(int gh, int gw, int d) {
    std::vector<T> out(size_t(gh) * gw * d, T(0));
    const int half = d / 2;
    auto fill_axis = [&](int axis, int offset) {
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x) {
                const double pos = axis == 0 ? double(y) : double(x);
                T* row = out.data() + (size_t(y) * gw + x) * d + offset;
                for (int i = 0; i < half / 2; ++i) {
                    const double freq = std::pow(10000.0, -2.0 * double(i) / double(half));
                    row[2 * i] = T(std::sin(pos * freq));
                    row[2 * i + 1] = T(std::cos(pos * freq));
                }
            }
    };
    fill_axis(0, 0);
    fill_axis(1, half);
    return out;
}

/// 1D sinusoidal encoding of an integer position or timestep
template <typename T>
std::vector<T> sincos_vec(double pos, int d) {
    std::vector<T> out(size_t(d), T(0));
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
        out[2 * i] = T(std::sin(pos * freq));
        out[2 * i + 1] = T(std::cos(pos * freq));
    }
    return out;
}

template <typename T>
class ModelT {
public:
    explicit ModelT(ModelConfig cfg, uint64_t init_seed = 0) : cfg_(cfg) {
        cfg_.validate();
        build_params(init_seed);
        build_buffers();
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<std::pair<std::string, TensorPtrT<T>>>& params() { return params_; }
    const std::vector<std::pair<std::string, TensorPtrT<T>>>& params() const {
        return params_;
    }

    TensorPtrT<T> param(const std::string& name) const {
        for (const auto& [n, p] : params_)
            if (n == name) return p;
        throw contract_error("model: unknown parameter " + name);
    }

    std::vector<TensorPtrT<T>> param_tensors() const {
        std::vector<TensorPtrT<T>> out;
        out.reserve(params_.size());
        for (const auto& [n, p] : params_) out.push_back(p);
        return out;
    }

    /// x_t: noisy target patches [L0 x 3P^2]; ref_patches [L1 x 3P^2];
    /// cond_ids: flat vocabulary ids, length n_cond; t in [0, t_train)
    ForwardOutT<T> forward(TapeT<T>& tape, const TensorPtrT<T>& x_t,
                           const TensorPtrT<T>& ref_patches,
                           const std::vector<int>& cond_ids, int t,
                           bool detach_capture = false) const {
        const int lv = cfg_.tokens_per_view();
        if (x_t->ndim() != 2 || x_t->shape[0] != lv || x_t->shape[1] != cfg_.patch_dim())
            throw dim_error("forward: noisy target token shape mismatch");
        if (ref_patches->ndim() != 2 || ref_patches->shape[0] != lv ||
            ref_patches->shape[1] != cfg_.patch_dim())
            throw dim_error("forward: reference token shape mismatch");
        if (int(cond_ids.size()) != cfg_.n_cond)
            throw dim_error("forward: expected " + std::to_string(cfg_.n_cond) +
                            " condition ids");
        if (t < 0 || t >= cfg_.t_train)
            throw param_error("forward: timestep " + std::to_string(t) +
                              " outside [0," + std::to_string(cfg_.t_train) + ")");

        // timestep embedding -> small MLP
        auto temb_in = make_tensor<T>({1, cfg_.d}, sincos_vec<T>(double(t), cfg_.d));
        auto temb_h = gelu(tape, add_rowvec(tape, matmul(tape, temb_in, param("temb.w1")),
                                            param("temb.b1")));
        auto temb = add_rowvec(tape, matmul(tape, temb_h, param("temb.w2")),
                               param("temb.b2"));

        // token embeddings per stream; the view-id row is sliced through the
        // tape so its gradient accumulates into the embedding table
        auto view_row = [&](int view) {
            return slice_rows(tape, param("view_embed"), view, view + 1);
        };
        auto embed_visual = [&](const TensorPtrT<T>& patches, int view) {
            auto tok = add_rowvec(tape, matmul(tape, patches, param("patch_embed.w")),
                                  param("patch_embed.b"));
            tok = add(tape, tok, pos_visual_);
            tok = add_rowvec(tape, tok, view_row(view));
            return tok;
        };
        auto tok_t = add_rowvec(tape, embed_visual(x_t, 0), temb);
        auto tok_r = embed_visual(ref_patches, 1);
        auto tok_c = embedding_lookup(tape, param("cond_embed"), cond_ids);
        tok_c = add(tape, tok_c, pos_cond_);
        tok_c = add_rowvec(tape, tok_c, view_row(2));

        auto x_img = concat_rows<T>(tape, {tok_t, tok_r});
        auto x_c = tok_c;
        CaptureT<T> capture;

        for (int b = 0; b < cfg_.blocks; ++b) {
            const std::string ib = "blocks." + std::to_string(b) + ".img.";
            const std::string cb = "blocks." + std::to_string(b) + ".cond.";

            auto h_img = layer_norm(tape, x_img, param(ib + "ln1.g"), param(ib + "ln1.b"));
            auto h_c = layer_norm(tape, x_c, param(cb + "ln1.g"), param(cb + "ln1.b"));
            auto proj = [&](const TensorPtrT<T>& hi, const TensorPtrT<T>& hc,
                            const char* which) {
                auto pi = add_rowvec(tape, matmul(tape, hi, param(ib + "w" + which)),
                                     param(ib + std::string("b") + which));
                auto pc = add_rowvec(tape, matmul(tape, hc, param(cb + "w" + which)),
                                     param(cb + std::string("b") + which));
                return concat_rows<T>(tape, {pi, pc});
            };
            auto q = proj(h_img, h_c, "q");
            auto k = proj(h_img, h_c, "k");
            auto v = proj(h_img, h_c, "v");

            const int dh = cfg_.head_dim();
            std::vector<TensorPtrT<T>> head_outs;
            TensorPtrT<T> attn_mean;
            for (int hh = 0; hh < cfg_.heads; ++hh) {
                auto qi = slice_cols(tape, q, hh * dh, (hh + 1) * dh);
                auto ki = slice_cols(tape, k, hh * dh, (hh + 1) * dh);
                auto vi = slice_cols(tape, v, hh * dh, (hh + 1) * dh);
                auto scores = scale(tape, matmul_nt(tape, qi, ki),
                                    1.0 / std::sqrt(double(dh)));
                auto a = softmax_rows(tape, scores);
                head_outs.push_back(matmul(tape, a, vi));
                if (b == cfg_.b_star)
                    attn_mean = attn_mean ? add(tape, attn_mean, a) : a;
            }
            if (b == cfg_.b_star) {
                attn_mean = scale(tape, attn_mean, 1.0 / double(cfg_.heads));
                capture = aggregate_capture(tape, attn_mean, detach_capture);
            }

            auto heads_cat = concat_cols(tape, head_outs);
            auto o_img = add_rowvec(
                tape, matmul(tape, slice_rows(tape, heads_cat, 0, cfg_.l_visual()),
                             param(ib + "wo")),
                param(ib + "bo"));
            auto o_c = add_rowvec(
                tape,
                matmul(tape, slice_rows(tape, heads_cat, cfg_.l_visual(), cfg_.l_total()),
                       param(cb + "wo")),
                param(cb + "bo"));
            x_img = add(tape, x_img, o_img);
            x_c = add(tape, x_c, o_c);

            auto mlp = [&](const TensorPtrT<T>& xin, const std::string& pre) {
                auto m = layer_norm(tape, xin, param(pre + "ln2.g"), param(pre + "ln2.b"));
                m = gelu(tape, add_rowvec(tape, matmul(tape, m, param(pre + "mlp.w1")),
                                          param(pre + "mlp.b1")));
                m = add_rowvec(tape, matmul(tape, m, param(pre + "mlp.w2")),
                               param(pre + "mlp.b2"));
                return add(tape, xin, m);
            };
            x_img = mlp(x_img, ib);
            x_c = mlp(x_c, cb);
        }

        auto out_tok = slice_rows(tape, x_img, 0, lv);
        out_tok = layer_norm(tape, out_tok, param("ln_f.g"), param("ln_f.b"));
        auto eps_hat = add_rowvec(tape, matmul(tape, out_tok, param("unembed.w")),
                                  param("unembed.b"));
        return {eps_hat, capture};
    }

private:
    CaptureT<T> aggregate_capture(TapeT<T>& tape, const TensorPtrT<T>& attn_mean,
                                  bool detach) const {
        const int lv = cfg_.tokens_per_view();
        CaptureT<T> cap;
        cap.block = cfg_.b_star;
        if (detach) {
            NoGradGuardT<T> guard(tape);
            auto [a0, a1] = aggregate_cross_view(tape, attn_mean, lv, lv);
            cap.a0 = reshape(tape, a0, {cfg_.hs(), cfg_.ws()});
            cap.a1 = reshape(tape, a1, {cfg_.hs(), cfg_.ws()});
        } else {
            auto [a0, a1] = aggregate_cross_view(tape, attn_mean, lv, lv);
            cap.a0 = reshape(tape, a0, {cfg_.hs(), cfg_.ws()});
            cap.a1 = reshape(tape, a1, {cfg_.hs(), cfg_.ws()});
        }
        return cap;
    }

    void add_param(const std::string& name, std::vector<int> shape, Rng& rng,
                   double stddev) {
        auto t = make_tensor<T>(std::move(shape));
        if (stddev > 0)
            for (auto& v : t->data) v = T(stddev * rng.normal());
        t->requires_grad = true;
        params_.emplace_back(name, std::move(t));
    }

    void add_param_const(const std::string& name, std::vector<int> shape, T value) {
        auto t = make_tensor<T>(std::move(shape));
        std::fill(t->data.begin(), t->data.end(), value);
        t->requires_grad = true;
        params_.emplace_back(name, std::move(t));
    }

    void build_params(uint64_t init_seed) {
        Rng rng = Rng(init_seed).fork("init");
        const int d = cfg_.d, pd = cfg_.patch_dim(), md = cfg_.mlp_ratio * d;
        const double sd = 0.02;
        add_param("patch_embed.w", {pd, d}, rng, sd);
        add_param_const("patch_embed.b", {d}, T(0));
        add_param("view_embed", {3, d}, rng, sd);
        add_param("cond_embed", {cfg_.cond_vocab, d}, rng, sd);
        add_param("temb.w1", {d, d}, rng, sd);
        add_param_const("temb.b1", {d}, T(0));
        add_param("temb.w2", {d, d}, rng, sd);
        add_param_const("temb.b2", {d}, T(0));
        for (int b = 0; b < cfg_.blocks; ++b) {
            for (const char* stream : {"img", "cond"}) {
                const std::string pre =
                    "blocks." + std::to_string(b) + "." + stream + ".";
                add_param_const(pre + "ln1.g", {d}, T(1));
                add_param_const(pre + "ln1.b", {d}, T(0));
                for (const char* which : {"q", "k", "v"}) {
                    add_param(pre + "w" + which, {d, d}, rng, sd);
                    add_param_const(pre + "b" + which, {d}, T(0));
                }
                add_param(pre + "wo", {d, d}, rng, sd);
                add_param_const(pre + "bo", {d}, T(0));
                add_param_const(pre + "ln2.g", {d}, T(1));
                add_param_const(pre + "ln2.b", {d}, T(0));
                add_param(pre + "mlp.w1", {d, md}, rng, sd);
                add_param_const(pre + "mlp.b1", {md}, T(0));
                add_param(pre + "mlp.w2", {md, d}, rng, sd);
                add_param_const(pre + "mlp.b2", {d}, T(0));
            }
        }
        add_param_const("ln_f.g", {d}, T(1));
        add_param_const("ln_f.b", {d}, T(0));
        add_param_const("unembed.w", {d, pd}, T(0));
        add_param_const("unembed.b", {pd}, T(0));
    }

    void build_buffers() {
        pos_visual_ = make_tensor<T>({cfg_.tokens_per_view(), cfg_.d},
                                     sincos_grid<T>(cfg_.hs(), cfg_.ws(), cfg_.d));
        std::vector<T> pc(size_t(cfg_.n_cond) * cfg_.d);
        for (int i = 0; i < cfg_.n_cond; ++i) {
            auto v = sincos_vec<T>(double(i), cfg_.d);
            std::copy(v.begin(), v.end(), pc.begin() + size_t(i) * cfg_.d);
        }
        pos_cond_ = make_tensor<T>({cfg_.n_cond, cfg_.d}, pc);
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, TensorPtrT<T>>> params_;
    TensorPtrT<T> pos_visual_;
    TensorPtrT<T> pos_cond_;
};

using Model = ModelT<float>;

} // namespace geoscene
