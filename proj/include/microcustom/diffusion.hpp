#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "microcustom/model_common.hpp"
#include "microcustom/scenes.hpp"
#include "microcustom/text_encoder.hpp"

namespace mc {

// Variance-preserving cosine schedule: alpha_t^2 + sigma_t^2 = 1.
struct NoiseSchedule {
    int total_steps = 200;
    std::vector<double> alpha;  // alpha_t = sqrt(alpha_bar_t), decreasing
    std::vector<double> sigma;  // sigma_t = sqrt(1 - alpha_bar_t), increasing

    static NoiseSchedule cosine(int total = 200) {
        NoiseSchedule ns;
        ns.total_steps = total;
        const double s = 0.008;
        auto abar = [&](double t) {
            const double v = std::cos((t / total + s) / (1.0 + s) * 1.5707963267948966);
            return v * v;
        };
        const double a0 = abar(0.0);
        for (int t = 0; t < total; ++t) {
            double ab = abar(static_cast<double>(t)) / a0;
            ab = std::min(1.0, std::max(1e-5, ab));
            ns.alpha.push_back(std::sqrt(ab));
            ns.sigma.push_back(std::sqrt(1.0 - ab));
        }
        return ns;
    }
    double alpha_bar(int t) const { return alpha[static_cast<size_t>(t)] * alpha[static_cast<size_t>(t)]; }
};

struct DenoiserConfig {
    int ch0 = 32;   // 32x32 stage width
    int ch1 = 64;   // 16x16 stage width (cross-attention width)
    int heads = 4;
    int temb_width = 64;
    int text_dim = 64;
    int cross_layers = 2;  // both at 16x16; layer 0 is the instrumented one
};

constexpr int kAttnRes = 16;  // cross-attention resolution (queries = 16x16)

// z_t = alpha_t z + sigma_t eps (pure data-side affine mix).
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z, int t, const Tensor<T>& eps, const NoiseSchedule& ns) {
    if (t < 0 || t >= ns.total_steps) throw std::runtime_error("add_noise: t out of range");
    if (z.numel() != eps.numel()) throw std::runtime_error("add_noise: shape mismatch");
    Tensor<T> out = z;
    const T a = static_cast<T>(ns.alpha[static_cast<size_t>(t)]);
    const T s = static_cast<T>(ns.sigma[static_cast<size_t>(t)]);
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = a * z.data[i] + s * eps.data[i];
    return out;
}

template <typename T>
Tensor<T> sinusoidal_t_embedding(const std::vector<int>& ts, int width, int total_steps) {
    Tensor<T> out({static_cast<int64_t>(ts.size()), width});
    for (size_t b = 0; b < ts.size(); ++b)
        for (int j = 0; j < width / 2; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / (width / 2));
            const double x = static_cast<double>(ts[b]) / total_steps * 1000.0 * freq;
            out.at(static_cast<int64_t>(b), j) = static_cast<T>(std::sin(x));
            out.at(static_cast<int64_t>(b), j + width / 2) = static_cast<T>(std::cos(x));
        }
    return out;
}

// Tiny conditional denoiser: two resolutions, cross-attention to the text
// embedding at 16x16. NHWC activations flattened to (B*H*W, C) matrices.
template <typename T>
class Denoiser {
public:
    DenoiserConfig cfg;
    ParamSet<T> params;

    void init(Rng& rng, DenoiserConfig c = {}) {
        cfg = c;
        const int64_t c0 = cfg.ch0, c1 = cfg.ch1, tw = cfg.temb_width, td = cfg.text_dim;
        init_linear(params.add("temb.fc1.w", {tw, tw}), rng);
        params.add("temb.fc1.b", {1, tw});
        init_linear(params.add("temb.fc2.w", {tw, tw}), rng);
        params.add("temb.fc2.b", {1, tw});
        init_linear(params.add("temb.proj0.w", {tw, c0}), rng);
        params.add("temb.proj0.b", {1, c0});
        init_linear(params.add("temb.proj1.w", {tw, c1}), rng);
        params.add("temb.proj1.b", {1, c1});
        add_conv(params, "conv_in", 3, c0, rng);
        add_conv(params, "conv_e1", c0, c0, rng);
        add_conv(params, "conv_down", c0, c1, rng);
        add_conv(params, "conv_e2", c1, c1, rng);
        for (int l = 0; l < cfg.cross_layers; ++l) {
            const std::string p = "cross" + std::to_string(l);
            add_layernorm_params(params, p + ".lnq", c1);
            // wq over image features (c1), wk/wv project the text embedding
            init_linear(params.add(p + ".attn.wq", {c1, c1}), rng);
            init_linear(params.add(p + ".attn.wk", {td, c1}), rng);
            init_linear(params.add(p + ".attn.wv", {td, c1}), rng);
            init_linear(params.add(p + ".attn.wo", {c1, c1}), rng);
            add_conv(params, p + ".conv", c1, c1, rng);
        }
        add_conv(params, "conv_up", c1, c0, rng);
        add_conv(params, "conv_d1", 2 * c0, c0, rng);
        add_conv(params, "conv_out", c0, 3, rng);
        // zero-init the output projection: untrained model predicts 0
        auto& w = params.get("conv_out.w");
        std::fill(w.data.begin(), w.data.end(), T(0));
    }

    struct TextCond {
        int c_node = -1;                 // (L x text_dim) tape node
        const std::vector<int>* ids = nullptr;  // token ids for key PAD masking
    };

    // x: (B*32*32, 3) node of noised latents; ts: per-item timesteps.
    // cond: per item, per cross layer (cond[l][b]); XTI passes different
    // text embeddings per layer, everyone else the same.
    int forward(Binder<T>& bind, int x, const std::vector<int>& ts,
                const std::vector<std::vector<TextCond>>& cond,
                AttentionTrace<T>* trace = nullptr) const {
        Tape<T>& tp = bind.tape();
        const int64_t batch = static_cast<int64_t>(ts.size());
        if (tp.val(x).rows() != batch * 32 * 32 || tp.val(x).cols() != 3)
            throw std::runtime_error("denoiser: input must be (B*32*32, 3)");
        if (static_cast<int>(cond.size()) != cfg.cross_layers)
            throw std::runtime_error("denoiser: need conditioning for every cross layer");
        for (const auto& layer : cond)
            if (static_cast<int64_t>(layer.size()) != batch)
                throw std::runtime_error("denoiser: conditioning batch mismatch");

        // timestep embedding
        int temb = tp.input(sinusoidal_t_embedding<T>(ts, cfg.temb_width, 1000));
        temb = tp.gelu(tp.add_row_bcast(tp.matmul(temb, bind("temb.fc1.w")), bind("temb.fc1.b")));
        temb = tp.add_row_bcast(tp.matmul(temb, bind("temb.fc2.w")), bind("temb.fc2.b"));
        const int temb0 = tp.add_row_bcast(tp.matmul(temb, bind("temb.proj0.w")), bind("temb.proj0.b"));
        const int temb1 = tp.add_row_bcast(tp.matmul(temb, bind("temb.proj1.w")), bind("temb.proj1.b"));

        using CD = typename Tape<T>::ConvDims;
        // 32x32 stage
        int h = tp.gelu(conv(bind, "conv_in", x, CD{batch, 32, 32, 3, cfg.ch0, 1}));
        h = tp.add_item_row_bcast(h, temb0, batch);
        h = tp.gelu(conv(bind, "conv_e1", h, CD{batch, 32, 32, cfg.ch0, cfg.ch0, 1}));
        const int skip = h;
        // down to 16x16
        int g = tp.gelu(conv(bind, "conv_down", h, CD{batch, 32, 32, cfg.ch0, cfg.ch1, 2}));
        g = tp.add_item_row_bcast(g, temb1, batch);
        g = tp.gelu(conv(bind, "conv_e2", g, CD{batch, 16, 16, cfg.ch1, cfg.ch1, 1}));
        // cross-attention blocks
        for (int l = 0; l < cfg.cross_layers; ++l) {
            const std::string p = "cross" + std::to_string(l);
            const int q_in = tp.layernorm_rows(g, bind(p + ".lnq.g"), bind(p + ".lnq.b"));
            std::vector<int> outs;
            for (int64_t b = 0; b < batch; ++b) {
                const TextCond& tc = cond[static_cast<size_t>(l)][static_cast<size_t>(b)];
                const int qb = tp.slice_rows(q_in, b * 256, (b + 1) * 256);
                outs.push_back(cross_attend(bind, p + ".attn", qb, tc, trace, l,
                                            static_cast<int>(b)));
            }
            g = tp.add(g, tp.concat_rows(outs));
            g = tp.gelu(conv(bind, p + ".conv", g, CD{batch, 16, 16, cfg.ch1, cfg.ch1, 1}));
        }
        // back to 32x32 with skip connection
        int u = tp.upsample2x(g, batch, 16, 16);
        u = tp.gelu(conv(bind, "conv_up", u, CD{batch, 32, 32, cfg.ch1, cfg.ch0, 1}));
        u = tp.concat_cols(u, skip);
        u = tp.gelu(conv(bind, "conv_d1", u, CD{batch, 32, 32, 2 * cfg.ch0, cfg.ch0, 1}));
        return conv(bind, "conv_out", u, CD{batch, 32, 32, cfg.ch0, 3, 1});
    }

private:
    static void add_conv(ParamSet<T>& ps, const std::string& name, int64_t cin, int64_t cout,
                         Rng& rng) {
        Tensor<T>& w = ps.add(name + ".w", {9 * cin, cout});
        fill_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(9 * cin)));
        ps.add(name + ".b", {1, cout});
    }

    int conv(Binder<T>& bind, const std::string& name, int x, typename Tape<T>::ConvDims d) const {
        return bind.tape().conv3x3(x, bind(name + ".w"), bind(name + ".b"), d);
    }

    // Single-item cross attention; mirrors multihead_attention but with
    // separate query/key input widths and PAD key masking.
    int cross_attend(Binder<T>& bind, const std::string& prefix, int qb, const TextCond& tc,
                     AttentionTrace<T>* trace, int layer, int item) const {
        Tape<T>& tp = bind.tape();
        const int64_t c1 = cfg.ch1;
        const int64_t dk = c1 / cfg.heads;
        const int q = tp.matmul(qb, bind(prefix + ".wq"));
        const int k = tp.matmul(tc.c_node, bind(prefix + ".wk"));
        const int v = tp.matmul(tc.c_node, bind(prefix + ".wv"));
        const int mask = tc.ids ? tp.input(key_pad_mask_tensor<T>(*tc.ids, 256)) : -1;
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
        int concat = -1;
        for (int h = 0; h < cfg.heads; ++h) {
            const int qh = tp.slice_cols(q, h * dk, (h + 1) * dk);
            const int kh = tp.slice_cols(k, h * dk, (h + 1) * dk);
            const int vh = tp.slice_cols(v, h * dk, (h + 1) * dk);
            int scores = tp.scale(tp.matmul_nt(qh, kh), inv_sqrt);
            if (mask >= 0) scores = tp.add(scores, mask);
            const int attn = tp.softmax_rows(scores);
            if (trace && item == 0)
                trace->entries.push_back({layer, h, tp.val(attn), tp.val(vh)});
            const int oh = tp.matmul(attn, vh);
            concat = h == 0 ? oh : tp.concat_cols(concat, oh);
        }
        if (trace && item == 0) {
            trace->layer_concat.push_back(tp.val(concat));
            trace->q_snapshots.push_back(tp.val(q));
            trace->wk_snapshots.push_back(tp.val(bind(prefix + ".wk")));
        }
        return tp.matmul(concat, bind(prefix + ".wo"));
    }
};

}  // namespace mc
