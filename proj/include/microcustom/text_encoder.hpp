#pragma once

#include <string>
#include <vector>

#include "microcustom/model_common.hpp"
#include "microcustom/vocab.hpp"

namespace mc {

struct EncoderConfig {
    int layers = 3;
    int d = 64;
    int heads = 4;
    int max_len = kPromptLen;
};

// Causal transformer over the closed vocabulary; the per-token final-layer
// states are the text embedding C. Pre-LN blocks, learned positions,
// final layernorm.
template <typename T>
class TextEncoder {
public:
    EncoderConfig cfg;
    ParamSet<T> params;
    int vocab_size = 0;

    void init(int vsize, Rng& rng, EncoderConfig c = {}) {
        cfg = c;
        if (cfg.d % cfg.heads != 0) throw std::runtime_error("encoder: d not divisible by heads");
        vocab_size = vsize;
        fill_normal(params.add("emb.table", {vsize, cfg.d}), rng, 0.02);
        fill_normal(params.add("emb.pos", {cfg.max_len, cfg.d}), rng, 0.02);
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l);
            add_layernorm_params(params, p + ".ln1", cfg.d);
            add_attention_params(params, p + ".attn", cfg.d, rng);
            add_layernorm_params(params, p + ".ln2", cfg.d);
            init_linear(params.add(p + ".fc1.w", {cfg.d, 4 * cfg.d}), rng);
            params.add(p + ".fc1.b", {1, 4 * cfg.d});
            init_linear(params.add(p + ".fc2.w", {4 * cfg.d, cfg.d}), rng);
            params.add(p + ".fc2.b", {1, cfg.d});
        }
        add_layernorm_params(params, "lnf", cfg.d);
    }

    struct RowOverride {
        std::string param_name;       // (1 x d) row in this encoder's ParamSet
        std::vector<int> positions;   // where it shadows the table row
    };

    // Token ids -> C (max_len x d) tape node. `ids` must be kPromptLen long.
    // Overrides let trainable rows (concept token, mask embedding) shadow
    // their table rows.
    int encode(Binder<T>& bind, const std::vector<int>& ids,
               const std::vector<RowOverride>& overrides = {},
               AttentionTrace<T>* trace = nullptr) const {
        if (static_cast<int>(ids.size()) != cfg.max_len)
            throw std::runtime_error("encode: prompt longer than max length");
        for (int id : ids)
            if (id < 0 || id >= vocab_size) throw std::runtime_error("encode: token id out of range");
        Tape<T>& tp = bind.tape();
        int x = tp.embed(bind("emb.table"), ids);
        for (const auto& ov : overrides)
            if (!ov.positions.empty())
                x = tp.row_overwrite(x, bind(ov.param_name), ov.positions);
        x = tp.add(x, bind("emb.pos"));
        const int mask = tp.input(causal_mask_tensor<T>(cfg.max_len));
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l);
            const int h = tp.layernorm_rows(x, bind(p + ".ln1.g"), bind(p + ".ln1.b"));
            x = tp.add(x, multihead_attention(bind, p + ".attn", h, h, cfg.heads, mask, trace, l));
            const int h2 = tp.layernorm_rows(x, bind(p + ".ln2.g"), bind(p + ".ln2.b"));
            int f = tp.add_row_bcast(tp.matmul(h2, bind(p + ".fc1.w")), bind(p + ".fc1.b"));
            f = tp.gelu(f);
            f = tp.add_row_bcast(tp.matmul(f, bind(p + ".fc2.w")), bind(p + ".fc2.b"));
            x = tp.add(x, f);
        }
        return tp.layernorm_rows(x, bind("lnf.g"), bind("lnf.b"));
    }

    // Trainable concept row handle setup. init_mode: "copy-of-class-word" or
    // "small-gaussian".
    void add_concept_row(const Vocab& vocab, const std::string& concept_token,
                         const std::string& param_name, const std::string& init_mode,
                         const std::string& class_word, Rng& rng) {
        const int cid = vocab.id_of(concept_token);
        if (!vocab.is_concept(cid))
            throw std::runtime_error("concept row: '" + concept_token + "' not registered as concept");
        Tensor<T>& row = params.has(param_name) ? params.get(param_name)
                                                : params.add(param_name, {1, cfg.d});
        if (init_mode == "copy-of-class-word") {
            const int wid = vocab.id_of(class_word);
            const Tensor<T>& table = params.get("emb.table");
            for (int64_t j = 0; j < cfg.d; ++j) row.data[static_cast<size_t>(j)] = table.at(wid, j);
        } else if (init_mode == "small-gaussian") {
            fill_normal(row, rng, 0.02);
        } else {
            throw std::runtime_error("concept row: unknown init mode '" + init_mode + "'");
        }
    }
};

}  // namespace mc
