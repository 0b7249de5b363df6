#pragma once

#include <string>
#include <vector>

#include "microcustom/masking.hpp"
#include "microcustom/model_common.hpp"
#include "microcustom/optim.hpp"
#include "microcustom/prompts.hpp"
#include "microcustom/text_encoder.hpp"

namespace mc {

struct ContextualizerConfig {
    int blocks = 4;
    int d = 64;  // must equal the encoder width
    int heads = 4;
    int vocab_size = 0;
};

// Bidirectional self-attention stack over the text encoder output that
// predicts masked-token labels. Post-LN residual blocks, linear head.
template <typename T>
class Contextualizer {
public:
    ContextualizerConfig cfg;
    ParamSet<T> params;

    void init(ContextualizerConfig c, Rng& rng) {
        cfg = c;
        if (cfg.blocks < 1) throw std::runtime_error("contextualizer: blocks must be >= 1");
        for (int b = 0; b < cfg.blocks; ++b) {
            const std::string p = "block" + std::to_string(b);
            add_attention_params(params, p + ".attn", cfg.d, rng);
            add_layernorm_params(params, p + ".ln1", cfg.d);
            init_linear(params.add(p + ".fc1.w", {cfg.d, 4 * cfg.d}), rng);
            params.add(p + ".fc1.b", {1, 4 * cfg.d});
            init_linear(params.add(p + ".fc2.w", {4 * cfg.d, cfg.d}), rng);
            params.add(p + ".fc2.b", {1, cfg.d});
            add_layernorm_params(params, p + ".ln2", cfg.d);
        }
        init_linear(params.add("head.w", {cfg.d, cfg.vocab_size}), rng);
        params.add("head.b", {1, cfg.vocab_size});
    }

    // C_masked node -> logits at the masked positions (positions x V).
    // Returns -1 when there are no masked positions (empty logits).
    int predict_masked(Binder<T>& bind, int c_masked, const std::vector<int>& ids_masked,
                       const std::vector<int>& positions) const {
        if (positions.empty()) return -1;
        Tape<T>& tp = bind.tape();
        const int pad_mask = tp.input(key_pad_mask_tensor<T>(ids_masked, tp.val(c_masked).rows()));
        int x = c_masked;
        for (int b = 0; b < cfg.blocks; ++b) {
            const std::string p = "block" + std::to_string(b);
            const int a = multihead_attention(bind, p + ".attn", x, x, cfg.heads, pad_mask);
            x = tp.layernorm_rows(tp.add(x, a), bind(p + ".ln1.g"), bind(p + ".ln1.b"));
            int f = tp.add_row_bcast(tp.matmul(x, bind(p + ".fc1.w")), bind(p + ".fc1.b"));
            f = tp.gelu(f);
            f = tp.add_row_bcast(tp.matmul(f, bind(p + ".fc2.w")), bind(p + ".fc2.b"));
            x = tp.layernorm_rows(tp.add(x, f), bind(p + ".ln2.g"), bind(p + ".ln2.b"));
        }
        const int sel = tp.row_select(x, positions);
        return tp.add_row_bcast(tp.matmul(sel, bind("head.w")), bind("head.b"));
    }

    int mlm_loss(Binder<T>& bind, int logits, const std::vector<int>& labels,
                 bool* empty_flag = nullptr) const {
        if (logits < 0) {
            if (empty_flag) *empty_flag = true;
            return bind.tape().input(Tensor<T>({1}));
        }
        return bind.tape().cross_entropy_masked(logits, labels, empty_flag);
    }
};

struct PretrainCtxConfig {
    double lr = 1e-3;
    int batch = 64;
    int iterations = 5000;
    double rho_mask = 0.15;
    double mix_general = 0.7;  // caption share; the rest is class-substituted rich prompts
    uint64_t seed = 0;
};

struct PretrainCtxResult {
    std::vector<double> losses;
    uint64_t encoder_hash_before = 0;
    uint64_t encoder_hash_after = 0;
};

// Trains psi and the mask embedding row only; the encoder stays frozen
// (verified by hash). The corpus mixes general captions with rich prompts
// whose concept token is replaced by its class word, 70:30.
template <typename T>
PretrainCtxResult pretrain_contextualizer(TextEncoder<T>& enc, Contextualizer<T>& ctx,
                                          const Vocab& vocab,
                                          const std::vector<std::string>& general_captions,
                                          const std::vector<std::string>& class_prompts,
                                          const PretrainCtxConfig& cfg) {
    if (general_captions.empty() || class_prompts.empty())
        throw std::runtime_error("pretrain_contextualizer: empty corpus");
    PretrainCtxResult res;
    std::set<std::string> enc_trainable = {"emb.mask_row"};
    if (!enc.params.has("emb.mask_row")) {
        // p_mask starts as the current MASK table row
        Tensor<T>& row = enc.params.add("emb.mask_row", {1, enc.cfg.d});
        const Tensor<T>& table = enc.params.get("emb.table");
        for (int64_t j = 0; j < enc.cfg.d; ++j) row.data[static_cast<size_t>(j)] = table.at(kMaskId, j);
    }
    res.encoder_hash_before = frozen_hash(enc);

    AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    Rng rng(cfg.seed);

    std::vector<std::string> trainable_names(ctx.params.names());
    for (int it = 0; it < cfg.iterations; ++it) {
        Tape<T> tape;
        Binder<T> enc_bind(tape, enc.params, enc_trainable);
        Binder<T> ctx_bind(tape, ctx.params,
                           std::set<std::string>(trainable_names.begin(), trainable_names.end()));
        int total = -1;
        int used = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const bool general = rng.uniform() < cfg.mix_general;
            const std::string& text =
                general ? general_captions[static_cast<size_t>(
                              rng.uniform_int(static_cast<int64_t>(general_captions.size())))]
                        : class_prompts[static_cast<size_t>(
                              rng.uniform_int(static_cast<int64_t>(class_prompts.size())))];
            const PromptTokens p = vocab.tokenize(text);
            const MaskedPrompt m = random_mask(p, cfg.rho_mask, rng);
            if (m.positions.empty()) continue;
            const int c = encode_masked(enc, enc_bind, m);
            const int logits = ctx.predict_masked(ctx_bind, c, m.ids_masked, m.positions);
            const int loss = ctx.mlm_loss(ctx_bind, logits, m.labels);
            total = total < 0 ? loss : tape.add(total, loss);
            ++used;
        }
        if (total < 0) continue;
        total = tape.scale(total, static_cast<T>(1.0 / used));
        tape.backward(total);
        res.losses.push_back(static_cast<double>(tape.val(total).data[0]));

        std::vector<Tensor<T>*> ps;
        std::vector<Tensor<T>> gs;
        for (const auto& n : trainable_names) {
            ps.push_back(&ctx.params.get(n));
            gs.push_back(ctx_bind.grad_of(n));
        }
        ps.push_back(&enc.params.get("emb.mask_row"));
        gs.push_back(enc_bind.grad_of("emb.mask_row"));
        std::vector<const Tensor<T>*> gps;
        for (const auto& g : gs) gps.push_back(&g);
        opt.step(ps, gps);
    }
    res.encoder_hash_after = frozen_hash(enc);
    if (res.encoder_hash_after != res.encoder_hash_before)
        throw std::runtime_error("pretrain_contextualizer: frozen encoder changed");
    return res;
}

struct MlmEval {
    double accuracy = 0.0;   // masked-token top-1
    double mean_loss = 0.0;  // per-position cross entropy
    int positions = 0;
};

// Held-out evaluation: repeated random maskings of each prompt, top-1
// argmax against the hidden labels.
template <typename T>
MlmEval mlm_eval(const TextEncoder<T>& enc, const Contextualizer<T>& ctx_in, const Vocab& vocab,
                 const std::vector<std::string>& prompts, double rho_mask, uint64_t seed,
                 int draws_per_prompt = 8) {
    Contextualizer<T>& ctx = const_cast<Contextualizer<T>&>(ctx_in);
    TextEncoder<T>& e = const_cast<TextEncoder<T>&>(enc);
    MlmEval out;
    Rng rng(seed);
    double loss_sum = 0.0;
    int correct = 0;
    for (const auto& text : prompts) {
        const PromptTokens p = vocab.tokenize(text);
        for (int d = 0; d < draws_per_prompt; ++d) {
            const MaskedPrompt m = random_mask(p, rho_mask, rng);
            if (m.positions.empty()) continue;
            Tape<T> tape;
            tape.grad_enabled = false;
            Binder<T> enc_bind(tape, e.params);
            Binder<T> ctx_bind(tape, ctx.params);
            const int c = encode_masked(e, enc_bind, m);
            const int logits = ctx.predict_masked(ctx_bind, c, m.ids_masked, m.positions);
            const int loss = ctx.mlm_loss(ctx_bind, logits, m.labels);
            loss_sum += static_cast<double>(tape.val(loss).data[0]) *
                        static_cast<double>(m.positions.size());
            const Tensor<T>& lg = tape.val(logits);
            for (size_t i = 0; i < m.positions.size(); ++i) {
                int best = 0;
                for (int64_t v = 1; v < lg.cols(); ++v)
                    if (lg.at(static_cast<int64_t>(i), v) > lg.at(static_cast<int64_t>(i), best))
                        best = static_cast<int>(v);
                if (best == m.labels[i]) ++correct;
                ++out.positions;
            }
        }
    }
    if (out.positions > 0) {
        out.accuracy = static_cast<double>(correct) / out.positions;
        out.mean_loss = loss_sum / out.positions;
    }
    return out;
}

// Encode a masked prompt: MASK positions take the learned p_mask row, and
// any extra overrides (e.g. the concept row) apply on top.
template <typename T>
int encode_masked(const TextEncoder<T>& enc, Binder<T>& bind, const MaskedPrompt& m,
                  std::vector<typename TextEncoder<T>::RowOverride> extra = {},
                  AttentionTrace<T>* trace = nullptr) {
    if (enc.params.has("emb.mask_row"))
        extra.push_back({"emb.mask_row", m.positions});
    return enc.encode(bind, m.ids_masked, extra, trace);
}

// Hash of everything in the encoder except the mask row (the one encoder
// tensor Algorithm 1 is allowed to train).
template <typename T>
uint64_t frozen_hash(const TextEncoder<T>& enc) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& n : enc.params.names()) {
        if (n == "emb.mask_row") continue;
        h = hash_combine(h, tensor_hash(enc.params.get(n)));
    }
    return h;
}

}  // namespace mc
