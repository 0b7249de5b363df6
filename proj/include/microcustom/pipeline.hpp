#pragma once

#include <functional>
#include <string>
#include <vector>

#include "microcustom/contextualizer.hpp"
#include "microcustom/diffusion.hpp"
#include "microcustom/optim.hpp"
#include "microcustom/prompts.hpp"
#include "microcustom/scenes.hpp"
#include "microcustom/text_encoder.hpp"

namespace mc {

// Everything a run needs: frozen-or-trainable text encoder, denoiser,
// contextualizer, vocabulary, schedule.
template <typename T>
struct BaseModel {
    Vocab vocab;
    TextEncoder<T> enc;
    Denoiser<T> unet;
    Contextualizer<T> ctx;
    NoiseSchedule sched = NoiseSchedule::cosine(200);
    bool ctx_ready = false;

    static BaseModel fresh(uint64_t seed, EncoderConfig ec = {}, DenoiserConfig dc = {}) {
        BaseModel m;
        m.vocab = Vocab::build_default();
        m.vocab.register_concept("[v]");
        Rng rng(seed);
        m.enc.init(m.vocab.size(), rng, ec);
        m.unet.init(rng, dc);
        ContextualizerConfig cc;
        cc.d = ec.d;
        cc.vocab_size = m.vocab.size();
        m.ctx.init(cc, rng);
        return m;
    }

    uint64_t content_hash() const {
        uint64_t h = hash_combine(enc.params.content_hash(), unet.params.content_hash());
        return hash_combine(h, ctx.params.content_hash());
    }

    void save(const std::string& stem, const std::map<std::string, std::string>& extra_meta = {}) const {
        TensorStore store;
        enc.params.save_into(store, "enc.");
        unet.params.save_into(store, "unet.");
        ctx.params.save_into(store, "ctx.");
        store.meta["schedule_steps"] = std::to_string(sched.total_steps);
        store.meta["ctx_ready"] = ctx_ready ? "1" : "0";
        for (const auto& [k, v] : extra_meta) store.meta[k] = v;
        store.save(stem);
    }

    void load(const std::string& stem) {
        TensorStore store = TensorStore::load(stem);
        // dynamically added rows (mask/concept) must exist before load
        for (const auto& [name, t] : store.tensors) {
            if (name.rfind("enc.", 0) == 0) {
                const std::string local = name.substr(4);
                if (!enc.params.has(local)) enc.params.add(local, t.shape);
            }
        }
        enc.params.load_from(store, "enc.");
        unet.params.load_from(store, "unet.");
        ctx.params.load_from(store, "ctx.");
        sched = NoiseSchedule::cosine(std::stoi(store.meta.at("schedule_steps")));
        ctx_ready = store.meta.count("ctx_ready") && store.meta.at("ctx_ready") == "1";
    }
};

// [0,1] pixels <-> [-1,1] latents (the VAE of the full-scale system is the
// identity here).
template <typename T>
Tensor<T> image_to_latent(const SpriteImage& img) {
    Tensor<T> z({kImageSize * kImageSize, 3});
    for (int64_t i = 0; i < z.numel(); ++i)
        z.data[i] = static_cast<T>(2.0f * img.pixels.data[static_cast<size_t>(i)] - 1.0f);
    return z;
}

template <typename T>
SpriteImage latent_to_image(const Tensor<T>& z) {
    SpriteImage img;
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double v = (static_cast<double>(z.data[i]) + 1.0) / 2.0;
        img.pixels.data[static_cast<size_t>(i)] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return img;
}

template <typename T>
PromptTokens empty_prompt(const Vocab& vocab) {
    return vocab.tokenize("");
}

// One (image, prompt) pair in a diffusion batch.
template <typename T>
struct DiffusionPair {
    Tensor<T> latent;  // (1024 x 3), in [-1,1]
    PromptTokens prompt;
};

// Eq-style denoising loss on a batch: per-item uniform t, fresh noise,
// mean squared error between the noise and its prediction.
template <typename T>
int diffusion_loss_node(Binder<T>& enc_bind, Binder<T>& unet_bind, const BaseModel<T>& model,
                        const std::vector<DiffusionPair<T>>& batch,
                        const std::vector<typename TextEncoder<T>::RowOverride>& overrides,
                        Rng& rng,
                        const std::vector<typename TextEncoder<T>::RowOverride>* overrides_layer1 =
                            nullptr) {
    if (batch.empty()) throw std::runtime_error("diffusion_loss: empty batch");
    Tape<T>& tp = enc_bind.tape();
    const int64_t batch_n = static_cast<int64_t>(batch.size());
    std::vector<int> ts;
    Tensor<T> zt({batch_n * 1024, 3});
    Tensor<T> eps({batch_n * 1024, 3});
    for (int64_t b = 0; b < batch_n; ++b) {
        const int t = static_cast<int>(rng.uniform_int(model.sched.total_steps));
        ts.push_back(t);
        const T a = static_cast<T>(model.sched.alpha[static_cast<size_t>(t)]);
        const T s = static_cast<T>(model.sched.sigma[static_cast<size_t>(t)]);
        for (int64_t i = 0; i < 1024 * 3; ++i) {
            const T e = static_cast<T>(rng.normal());
            eps.data[static_cast<size_t>(b * 3072 + i)] = e;
            zt.data[static_cast<size_t>(b * 3072 + i)] =
                a * batch[static_cast<size_t>(b)].latent.data[static_cast<size_t>(i)] + s * e;
        }
    }
    std::vector<std::vector<typename Denoiser<T>::TextCond>> cond(
        static_cast<size_t>(model.unet.cfg.cross_layers));
    for (int64_t b = 0; b < batch_n; ++b) {
        const PromptTokens& p = batch[static_cast<size_t>(b)].prompt;
        const int c0 = model.enc.encode(enc_bind, p.ids, overrides);
        for (int l = 0; l < model.unet.cfg.cross_layers; ++l) {
            int c = c0;
            if (l > 0 && overrides_layer1)
                c = model.enc.encode(enc_bind, p.ids, *overrides_layer1);
            cond[static_cast<size_t>(l)].push_back({c, &p.ids});
        }
    }
    const int x = tp.input(std::move(zt));
    const int pred = model.unet.forward(unet_bind, x, ts, cond);
    return tp.mse(pred, tp.input(std::move(eps)));
}

struct SampleOptions {
    int steps = 50;
    double guidance = 7.5;
    uint64_t seed = 0;
};

// Ancestral sampling over a strided sub-schedule (equals plain DDPM when
// steps == total). guidance == 1 runs the conditional branch only so the
// algebraic identity with a conditional-only sampler is exact; guidance == 0
// likewise reduces to the unconditional branch.
template <typename T>
std::vector<SpriteImage> sample_batch(
    const BaseModel<T>& model_in, const std::vector<PromptTokens>& prompts,
    const SampleOptions& opt,
    const std::vector<typename TextEncoder<T>::RowOverride>& overrides = {},
    const std::vector<typename TextEncoder<T>::RowOverride>* overrides_layer1 = nullptr,
    AttentionTrace<T>* trace = nullptr, int trace_at_step = -1) {
    BaseModel<T>& model = const_cast<BaseModel<T>&>(model_in);  // params read-only below
    const int64_t batch_n = static_cast<int64_t>(prompts.size());
    const int total = model.sched.total_steps;
    const int steps = std::min(opt.steps, total);
    if (steps < 1) throw std::runtime_error("sample: steps must be >= 1");

    std::vector<int> ts;  // descending sub-schedule
    for (int k = steps - 1; k >= 0; --k)
        ts.push_back(static_cast<int>((static_cast<int64_t>(k) + 1) * total / steps) - 1);

    Rng rng(opt.seed);
    Tensor<T> x({batch_n * 1024, 3});
    for (auto& v : x.data) v = static_cast<T>(rng.normal());
    const PromptTokens uncond = model.vocab.tokenize("");

    const bool need_cond = opt.guidance != 0.0;
    const bool need_uncond = opt.guidance != 1.0;

    for (size_t step = 0; step < ts.size(); ++step) {
        const int t = ts[step];
        Tape<T> tape;
        tape.grad_enabled = false;
        Binder<T> enc_bind(tape, model.enc.params);
        Binder<T> unet_bind(tape, model.unet.params);
        std::vector<int> tvec(static_cast<size_t>(batch_n), t);

        auto run = [&](bool conditional) {
            std::vector<std::vector<typename Denoiser<T>::TextCond>> cond(
                static_cast<size_t>(model.unet.cfg.cross_layers));
            for (int64_t b = 0; b < batch_n; ++b) {
                const PromptTokens& p = conditional ? prompts[static_cast<size_t>(b)] : uncond;
                const int c0 = model.enc.encode(enc_bind, p.ids, conditional ? overrides
                                                                             : std::vector<typename TextEncoder<T>::RowOverride>{});
                for (int l = 0; l < model.unet.cfg.cross_layers; ++l) {
                    int c = c0;
                    if (l > 0 && conditional && overrides_layer1)
                        c = model.enc.encode(enc_bind, p.ids, *overrides_layer1);
                    cond[static_cast<size_t>(l)].push_back({c, &p.ids});
                }
            }
            AttentionTrace<T>* tr =
                (trace && conditional && static_cast<int>(step) == trace_at_step) ? trace : nullptr;
            return model.unet.forward(unet_bind, tape.input(x), tvec, cond, tr);
        };

        Tensor<T> eps_hat;
        if (!need_uncond) {
            eps_hat = tape.val(run(true));
        } else if (!need_cond) {
            eps_hat = tape.val(run(false));
        } else {
            const Tensor<T> ec = tape.val(run(true));  // copy: the second pass
            const Tensor<T> eu = tape.val(run(false));  // reallocates the tape

            eps_hat = eu;
            const T s = static_cast<T>(opt.guidance);
            for (int64_t i = 0; i < eps_hat.numel(); ++i)
                eps_hat.data[i] = eu.data[i] + s * (ec.data[i] - eu.data[i]);
        }

        const double abar_t = model.sched.alpha_bar(t);
        const double abar_prev = step + 1 < ts.size() ? model.sched.alpha_bar(ts[step + 1]) : 1.0;
        const double var =
            (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev);
        const double sig = std::sqrt(std::max(0.0, var));
        const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - var));
        const double sa_t = std::sqrt(abar_t), ss_t = std::sqrt(1.0 - abar_t);
        const double sa_p = std::sqrt(abar_prev);
        const bool last = step + 1 == ts.size();
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double e = static_cast<double>(eps_hat.data[i]);
            double x0 = (static_cast<double>(x.data[i]) - ss_t * e) / sa_t;
            x0 = std::min(1.0, std::max(-1.0, x0));  // keep ancestral chain in range
            double nx = sa_p * x0 + dir * e;
            if (!last) nx += sig * rng.normal();
            x.data[i] = static_cast<T>(nx);
        }
    }

    std::vector<SpriteImage> out;
    for (int64_t b = 0; b < batch_n; ++b) {
        Tensor<T> zi({1024, 3});
        std::copy(x.data.begin() + b * 3072, x.data.begin() + (b + 1) * 3072, zi.data.begin());
        out.push_back(latent_to_image(zi));
    }
    return out;
}

template <typename T>
SpriteImage sample_one(const BaseModel<T>& model, const PromptTokens& prompt,
                       const SampleOptions& opt) {
    return sample_batch(model, std::vector<PromptTokens>{prompt}, opt)[0];
}

// ---- base pretraining ----

struct PretrainBaseConfig {
    double lr = 1e-3;
    double lr_final = 1e-4;  // cosine decay target; constant lr leaves the loss plateaued
    int batch = 32;
    int iterations = 6000;
    double caption_dropout = 0.1;
    uint64_t seed = 0;
    int log_every = 200;
};

// Caption augmentation menu: position-shifted variants teach the encoder the
// sentence shapes customization and evaluation use later.
inline std::string augment_caption(const SceneSpec& s, Rng& rng) {
    const std::string tex = texture_names()[static_cast<int>(s.texture)];
    const std::string col = color_names()[s.color];
    const std::string shp = shape_names()[static_cast<int>(s.shape)];
    const std::string bg = background_names()[s.background];
    const std::string pos = position_names()[static_cast<int>(s.position)];
    const std::string sty = style_names()[static_cast<int>(s.style)];
    const std::string tail = " on " + bg + " at " + pos + " in " + sty + " style";
    const double u = rng.uniform();
    if (u < 0.40) return "a " + tex + " " + col + " " + shp + tail;
    if (u < 0.60) return "a " + col + " " + shp + tail;
    if (u < 0.80) return "a picture of " + col + " " + shp + tail;
    if (u < 0.90) return "a picture of " + tex + " " + col + " " + shp;
    return "a " + tex + " " + col + " " + shp + " on " + bg;
}

template <typename T>
struct PretrainBaseResult {
    std::vector<double> losses;
    double final_avg_loss = 0.0;
};

template <typename T>
PretrainBaseResult<T> pretrain_base(BaseModel<T>& model, const std::vector<CaptionedImage>& corpus,
                                    const PretrainBaseConfig& cfg,
                                    const std::function<void(int, double)>& progress = {}) {
    if (corpus.empty()) throw std::runtime_error("pretrain_base: empty corpus");
    PretrainBaseResult<T> res;
    Rng rng(cfg.seed);

    std::set<std::string> enc_train(model.enc.params.names().begin(), model.enc.params.names().end());
    std::set<std::string> unet_train(model.unet.params.names().begin(), model.unet.params.names().end());
    AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});

    double running = 0.0;
    int running_n = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        opt.config().lr =
            cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) *
                               (1.0 + std::cos(M_PI * it / std::max(1, cfg.iterations - 1)));
        Tape<T> tape;
        Binder<T> enc_bind(tape, model.enc.params, enc_train);
        Binder<T> unet_bind(tape, model.unet.params, unet_train);
        std::vector<DiffusionPair<T>> batch;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& item =
                corpus[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(corpus.size())))];
            DiffusionPair<T> pair;
            pair.latent = image_to_latent<T>(item.image);
            const std::string cap =
                rng.uniform() < cfg.caption_dropout ? "" : augment_caption(item.spec, rng);
            pair.prompt = model.vocab.tokenize(cap);
            batch.push_back(std::move(pair));
        }
        const int loss = diffusion_loss_node(enc_bind, unet_bind, model, batch, {}, rng);
        const double lv = static_cast<double>(tape.val(loss).data[0]);
        if (!std::isfinite(lv)) {
            model.save("diverged_state_dump");
            throw std::runtime_error("pretrain_base: loss diverged to non-finite at iteration " +
                                     std::to_string(it) + " (state dumped)");
        }
        tape.backward(loss);
        res.losses.push_back(lv);
        running += lv;
        ++running_n;

        std::vector<Tensor<T>*> ps;
        std::vector<Tensor<T>> gs;
        for (const auto& n : model.enc.params.names()) {
            ps.push_back(&model.enc.params.get(n));
            gs.push_back(enc_bind.grad_of(n));
        }
        for (const auto& n : model.unet.params.names()) {
            ps.push_back(&model.unet.params.get(n));
            gs.push_back(unet_bind.grad_of(n));
        }
        std::vector<const Tensor<T>*> gps;
        for (const auto& g : gs) gps.push_back(&g);
        opt.step(ps, gps);

        if (progress && cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) {
            progress(it + 1, running / running_n);
            running = 0.0;
            running_n = 0;
        }
    }
    res.final_avg_loss = res.losses.empty()
                             ? 0.0
                             : res.losses.back();
    return res;
}

}  // namespace mc
