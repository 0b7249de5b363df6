#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "microcustom/masking.hpp"
#include "microcustom/pipeline.hpp"

namespace mc {

enum class Variant { TI, XTI, DB, CD };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::TI: return "ti";
        case Variant::XTI: return "xti";
        case Variant::DB: return "db";
        case Variant::CD: return "cd";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "ti") return Variant::TI;
    if (s == "xti") return Variant::XTI;
    if (s == "db") return Variant::DB;
    if (s == "cd") return Variant::CD;
    throw std::runtime_error("unknown customization variant '" + s + "' (ti|xti|db|cd)");
}

struct CustomizeConfig {
    Variant variant = Variant::TI;
    std::string concept_token = "[v]";
    std::string class_word = "circle";
    std::string concept_init = "copy-of-class-word";
    double lambda_mlm = 1e-4;
    double rho_mask = 0.15;
    double lr = 2e-3;
    double lr_model = 2e-4;  // used for theta/Gamma params under DB/CD
    int iterations = 500;
    int diff_batch = 4;
    int mlm_batch = 16;
    int n_prior = 8;       // prior-preservation set size (DB/CD)
    int prior_steps = 25;  // sampler steps when self-generating priors
    uint64_t seed = 0;
    bool disable_mlm_branch = false;  // hard-disables the branch regardless of lambda
};

struct TrainableSets {
    std::set<std::string> enc;
    std::set<std::string> unet;
};

// Theta per variant. Concept rows live in the encoder's ParamSet; XTI keeps
// one per cross-attention layer.
inline std::vector<std::string> concept_row_names(Variant v) {
    if (v == Variant::XTI) return {"concept.row0", "concept.row1"};
    return {"concept.row"};
}

template <typename T>
TrainableSets select_trainable(const BaseModel<T>& model, Variant v) {
    TrainableSets ts;
    for (const auto& n : concept_row_names(v)) ts.enc.insert(n);
    if (v == Variant::DB) {
        for (const auto& n : model.enc.params.names())
            if (n != "emb.mask_row" && n.rfind("concept.", 0) != 0) ts.enc.insert(n);
        for (const auto& n : model.unet.params.names()) ts.unet.insert(n);
    } else if (v == Variant::CD) {
        for (const auto& n : model.unet.params.names())
            if (n.rfind("cross", 0) == 0 &&
                (n.find(".attn.wk") != std::string::npos || n.find(".attn.wv") != std::string::npos))
                ts.unet.insert(n);
    }
    return ts;
}

struct LossRow {
    int iteration = 0;
    double diff = 0.0;
    double mlm = 0.0;
    double total = 0.0;
};

struct CustomizeResult {
    std::vector<LossRow> losses;
    uint64_t psi_hash_before = 0, psi_hash_after = 0;
    uint64_t frozen_hash_before = 0, frozen_hash_after = 0;
};

template <typename T>
uint64_t hash_of_names(const ParamSet<T>& ps, const std::set<std::string>& skip) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& n : ps.names()) {
        if (skip.count(n)) continue;
        h = hash_combine(h, tensor_hash(ps.get(n)));
    }
    return h;
}

// Algorithm-2 style customization loop: each step sums the denoising loss on
// the concept set with lambda times the MLM loss on masked template prompts,
// then updates Theta only. psi and the mask row stay frozen (hash-audited).
template <typename T>
CustomizeResult customize(BaseModel<T>& model, const std::vector<SpriteImage>& concept_images,
                          const std::vector<RichPrompt>& prompts, const CustomizeConfig& cfg,
                          const std::function<void(int, const LossRow&)>& progress = {}) {
    if (cfg.lambda_mlm < 0.0) throw std::runtime_error("customize: lambda must be >= 0");
    if (concept_images.empty()) throw std::runtime_error("customize: empty concept set");
    if (cfg.lambda_mlm > 0.0 && !cfg.disable_mlm_branch && !model.ctx_ready)
        throw std::runtime_error("customize: contextualizer is not pretrained (run pretrain-ctx)");
    const bool with_prior = cfg.variant == Variant::DB || cfg.variant == Variant::CD;
    if (with_prior && cfg.n_prior <= 0)
        throw std::runtime_error("customize: prior-preservation variants need n_prior > 0");

    Rng rng(cfg.seed);
    if (!model.vocab.contains(cfg.concept_token)) model.vocab.register_concept(cfg.concept_token);
    for (const auto& rn : concept_row_names(cfg.variant))
        model.enc.add_concept_row(model.vocab, cfg.concept_token, rn, cfg.concept_init,
                                  cfg.class_word, rng);

    CustomizeResult res;
    res.psi_hash_before = model.ctx.params.content_hash();
    const TrainableSets train = select_trainable(model, cfg.variant);
    const std::vector<std::string> row_names = concept_row_names(cfg.variant);
    std::set<std::string> enc_frozen_skip = train.enc;
    enc_frozen_skip.insert(row_names.begin(), row_names.end());
    res.frozen_hash_before = hash_of_names(model.enc.params, enc_frozen_skip);

    // prior-preservation set, self-generated before any update
    std::vector<Tensor<T>> prior_latents;
    const PromptTokens class_prompt = model.vocab.tokenize("a picture of " + cfg.class_word);
    if (with_prior) {
        std::vector<PromptTokens> ps(static_cast<size_t>(cfg.n_prior), class_prompt);
        SampleOptions so;
        so.steps = cfg.prior_steps;
        so.guidance = 7.5;
        so.seed = hash_combine(cfg.seed, 0x9e3779b97f4a7c15ull);
        for (const auto& img : sample_batch(model, ps, so)) prior_latents.push_back(image_to_latent<T>(img));
    }

    const PromptTokens concept_prompt =
        model.vocab.tokenize("a picture of " + cfg.concept_token + " " + cfg.class_word);
    std::vector<Tensor<T>> concept_latents;
    for (const auto& img : concept_images) concept_latents.push_back(image_to_latent<T>(img));

    using Ovr = typename TextEncoder<T>::RowOverride;
    auto concept_ovr = [&](int layer) -> std::vector<Ovr> {
        const auto rows = concept_row_names(cfg.variant);
        const std::string& rn = rows[static_cast<size_t>(std::min<int>(layer, static_cast<int>(rows.size()) - 1))];
        return {{rn, concept_prompt.concept_positions}};
    };
    const std::vector<Ovr> ovr0 = concept_ovr(0);
    const std::vector<Ovr> ovr1 = concept_ovr(1);
    const bool two_layer_rows = cfg.variant == Variant::XTI;

    // two learning-rate groups: concept rows fast, model weights slow
    AdamW<T> opt_row({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    AdamW<T> opt_model({cfg.lr_model, 0.9, 0.999, 1e-8, 0.0});
    const bool mlm_on = cfg.lambda_mlm > 0.0 && !cfg.disable_mlm_branch;

    for (int it = 0; it < cfg.iterations; ++it) {
        Tape<T> tape;
        Binder<T> enc_bind(tape, model.enc.params, train.enc);
        Binder<T> unet_bind(tape, model.unet.params, train.unet);
        Binder<T> ctx_bind(tape, model.ctx.params);  // frozen: nothing trainable

        std::vector<DiffusionPair<T>> batch;
        for (int b = 0; b < cfg.diff_batch; ++b) {
            DiffusionPair<T> pair;
            if (with_prior && b % 2 == 1) {
                pair.latent = prior_latents[static_cast<size_t>(
                    rng.uniform_int(static_cast<int64_t>(prior_latents.size())))];
                pair.prompt = class_prompt;
            } else {
                pair.latent = concept_latents[static_cast<size_t>(
                    rng.uniform_int(static_cast<int64_t>(concept_latents.size())))];
                pair.prompt = concept_prompt;
            }
            batch.push_back(std::move(pair));
        }
        const int diff = diffusion_loss_node(enc_bind, unet_bind, model, batch, ovr0, rng,
                                             two_layer_rows ? &ovr1 : nullptr);

        LossRow row;
        row.iteration = it;
        row.diff = static_cast<double>(tape.val(diff).data[0]);

        int total = diff;
        if (mlm_on) {
            std::vector<int> mlm_terms;
            for (int b = 0; b < cfg.mlm_batch; ++b) {
                const RichPrompt& rp = sample_prompt(prompts, rng);
                const PromptTokens pt = model.vocab.tokenize(rp.text);
                const MaskedPrompt m = random_mask(pt, cfg.rho_mask, rng);
                if (m.positions.empty()) continue;
                std::vector<Ovr> extra = {{concept_row_names(cfg.variant)[0], pt.concept_positions}};
                const int c = encode_masked(model.enc, enc_bind, m, extra);
                const int logits = model.ctx.predict_masked(ctx_bind, c, m.ids_masked, m.positions);
                mlm_terms.push_back(model.ctx.mlm_loss(ctx_bind, logits, m.labels));
            }
            if (!mlm_terms.empty()) {
                int s = mlm_terms[0];
                for (size_t i = 1; i < mlm_terms.size(); ++i) s = tape.add(s, mlm_terms[i]);
                const int mlm = tape.scale(s, static_cast<T>(1.0 / mlm_terms.size()));
                row.mlm = static_cast<double>(tape.val(mlm).data[0]);
                total = tape.add(diff, tape.scale(mlm, static_cast<T>(cfg.lambda_mlm)));
            }
        }
        row.total = static_cast<double>(tape.val(total).data[0]);
        if (!std::isfinite(row.total))
            throw std::runtime_error("customize: loss diverged to non-finite at iteration " +
                                     std::to_string(it));
        tape.backward(total);
        res.losses.push_back(row);

        // one optimizer step per learning-rate group: concept rows fast,
        // everything else (encoder + unet model weights) slow
        std::vector<Tensor<T>*> row_vars, model_vars;
        std::vector<Tensor<T>> row_grads, model_grads;
        for (const auto& n : train.enc) {
            const bool is_row = n.rfind("concept.", 0) == 0;
            (is_row ? row_vars : model_vars).push_back(&model.enc.params.get(n));
            (is_row ? row_grads : model_grads).push_back(enc_bind.grad_of(n));
        }
        for (const auto& n : train.unet) {
            model_vars.push_back(&model.unet.params.get(n));
            model_grads.push_back(unet_bind.grad_of(n));
        }
        auto step = [](AdamW<T>& opt, std::vector<Tensor<T>*>& vars,
                       const std::vector<Tensor<T>>& grads) {
            if (vars.empty()) return;
            std::vector<const Tensor<T>*> gp;
            for (const auto& g : grads) gp.push_back(&g);
            opt.step(vars, gp);
        };
        step(opt_row, row_vars, row_grads);
        step(opt_model, model_vars, model_grads);

        if (progress) progress(it, row);
    }

    res.psi_hash_after = model.ctx.params.content_hash();
    res.frozen_hash_after = hash_of_names(model.enc.params, enc_frozen_skip);
    if (res.psi_hash_after != res.psi_hash_before)
        throw std::runtime_error("customize: frozen contextualizer changed during training");
    if (res.frozen_hash_after != res.frozen_hash_before)
        throw std::runtime_error("customize: frozen encoder weights changed during training");
    return res;
}

}  // namespace mc
