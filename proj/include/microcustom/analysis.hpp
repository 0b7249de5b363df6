#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "microcustom/customize.hpp"
#include "microcustom/pipeline.hpp"

namespace mc {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0 || nb <= 0) return 0.0;
    return num / std::sqrt(na * nb);
}

struct MeanStd {
    double mean = 0.0, stddev = 0.0;
    int n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd ms;
    ms.n = static_cast<int>(xs.size());
    if (xs.empty()) return ms;
    for (double x : xs) ms.mean += x;
    ms.mean /= ms.n;
    for (double x : xs) ms.stddev += (x - ms.mean) * (x - ms.mean);
    ms.stddev = ms.n > 1 ? std::sqrt(ms.stddev / (ms.n - 1)) : 0.0;
    return ms;
}

// ---- sim1 / sim2 ----

// Occurrence-aligned position of `word` in a tokenized prompt.
inline int nth_position_of(const Vocab& vocab, const PromptTokens& p, const std::string& word,
                           int nth) {
    const int wid = vocab.id_of(word);
    int seen = 0;
    for (size_t i = 0; i < p.ids.size(); ++i)
        if (p.ids[i] == wid && seen++ == nth) return static_cast<int>(i);
    return -1;
}

struct SimPair {
    double sim1 = 0.0;  // cos(c_i*, c_b) on the concept prompt
    double sim2 = 0.0;  // cos(c_b, c_hat_b) across concept prompt / twin
};

// Contextualized-embedding similarity for one rich prompt. c_i* is the
// concept-token output row, c_b the head-noun output row; the twin prompt
// (concept token removed) supplies c_hat_b, aligned by token identity.
template <typename T>
SimPair sim_pair_for_prompt(const BaseModel<T>& model_in, const std::string& concept_row,
                            const RichPrompt& rp) {
    BaseModel<T>& model = const_cast<BaseModel<T>&>(model_in);
    const PromptTokens p = model.vocab.tokenize(rp.text);
    const PromptTokens twin = model.vocab.tokenize(rp.twin_text);
    if (p.concept_positions.size() != 1)
        throw std::runtime_error("sim analysis: prompt must contain the concept token once: " +
                                 rp.text);
    const int pos_c = p.concept_positions[0];
    const int pos_b = nth_position_of(model.vocab, p, rp.head_noun, 0);
    const int pos_tb = nth_position_of(model.vocab, twin, rp.head_noun, 0);
    if (pos_b < 0 || pos_tb < 0 || !twin.concept_positions.empty())
        throw std::runtime_error("sim analysis: twin misalignment for prompt: " + rp.text);

    Tape<T> tape;
    tape.grad_enabled = false;
    Binder<T> bind(tape, model.enc.params);
    const int cC = model.enc.encode(bind, p.ids, {{concept_row, p.concept_positions}});
    const int cT = model.enc.encode(bind, twin.ids);
    auto row = [&](int node, int r) {
        const Tensor<T>& v = tape.val(node);
        std::vector<double> out(static_cast<size_t>(v.cols()));
        for (int64_t j = 0; j < v.cols(); ++j) out[static_cast<size_t>(j)] = static_cast<double>(v.at(r, j));
        return out;
    };
    SimPair sp;
    sp.sim1 = cosine(row(cC, pos_c), row(cC, pos_b));
    sp.sim2 = cosine(row(cC, pos_b), row(cT, pos_tb));
    return sp;
}

struct SimReport {
    MeanStd sim1, sim2;
};

template <typename T>
SimReport concept_context_similarity(const BaseModel<T>& model, const std::string& concept_row,
                                     const std::vector<RichPrompt>& prompts) {
    std::vector<double> s1, s2;
    for (const auto& rp : prompts) {
        const SimPair sp = sim_pair_for_prompt(model, concept_row, rp);
        s1.push_back(sp.sim1);
        s2.push_back(sp.sim2);
    }
    SimReport r;
    r.sim1 = mean_std(s1);
    r.sim2 = mean_std(s2);
    return r;
}

// ---- symmetric KL over cross-attention columns ----

// A, B: nonnegative masses over queries; each is renormalized to a
// distribution before 0.5*(KL(A||B)+KL(B||A)). Natural log, 1e-12 floor.
inline double skl_cross_attention(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size()) throw std::runtime_error("skl: length mismatch");
    auto norm = [](std::vector<double>& v) {
        double s = 0;
        for (double x : v) {
            if (x < 0) throw std::runtime_error("skl: negative attention mass");
            s += x;
        }
        if (s <= 0) throw std::runtime_error("skl: zero-sum attention map");
        for (double& x : v) x /= s;
    };
    norm(a);
    norm(b);
    double out = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double p = std::max(a[i], 1e-12), q = std::max(b[i], 1e-12);
        out += 0.5 * p * std::log(p / q) + 0.5 * q * std::log(q / p);
    }
    return out;
}

// Head-averaged A_cross columns (concept token vs head noun) pulled from a
// traced sampling step mid-trajectory.
template <typename T>
double skl_for_prompt(const BaseModel<T>& model_in, const std::string& concept_row,
                      const RichPrompt& rp, const SampleOptions& opt) {
    BaseModel<T>& model = const_cast<BaseModel<T>&>(model_in);
    const PromptTokens p = model.vocab.tokenize(rp.text);
    if (p.concept_positions.size() != 1)
        throw std::runtime_error("skl analysis: prompt must contain the concept token once");
    const int pos_c = p.concept_positions[0];
    const int pos_b = nth_position_of(model.vocab, p, rp.head_noun, 0);
    if (pos_b < 0) throw std::runtime_error("skl analysis: head noun missing from prompt");

    AttentionTrace<T> trace;
    std::vector<typename TextEncoder<T>::RowOverride> ovr = {{concept_row, p.concept_positions}};
    sample_batch(model, std::vector<PromptTokens>{p}, opt, ovr, nullptr, &trace,
                 std::max(0, opt.steps / 2));

    // average heads at the instrumented layer (cross layer 0)
    Tensor<T> avg;
    int n_heads = 0;
    for (const auto& e : trace.entries) {
        if (e.layer != 0) continue;
        if (n_heads == 0) avg = e.attn;
        else
            for (int64_t i = 0; i < avg.numel(); ++i) avg.data[i] += e.attn.data[i];
        ++n_heads;
    }
    if (n_heads == 0) throw std::runtime_error("skl analysis: trace captured no cross-attention");
    auto column = [&](int k) {
        std::vector<double> col(static_cast<size_t>(avg.rows()));
        for (int64_t q = 0; q < avg.rows(); ++q)
            col[static_cast<size_t>(q)] = static_cast<double>(avg.at(q, k)) / n_heads;
        return col;
    };
    return skl_cross_attention(column(pos_c), column(pos_b));
}

// ---- fidelity metrics ----

struct EvalPrompt {
    PromptTokens tokens;
    SceneSpec spec;  // target attributes with the concept as subject
    std::string text;
};

// "a picture of [v] <class> on <bg> at <pos> in plain style" over a
// background x position grid; the concept supplies subject attributes.
template <typename T>
std::vector<EvalPrompt> build_eval_prompts(const BaseModel<T>& model, const ConceptDef& def,
                                           const std::string& concept_token,
                                           const std::string& class_word) {
    std::vector<EvalPrompt> out;
    const std::array<int, 3> bgs = {def.background, (def.background + 2) % kNumBackgrounds,
                                    (def.background + 5) % kNumBackgrounds};
    for (int bg : bgs)
        for (int pos = 0; pos < kNumPositions; ++pos) {
            EvalPrompt ep;
            ep.spec.shape = def.shape;
            ep.spec.color = def.color;
            ep.spec.texture = def.texture;
            ep.spec.background = bg;
            ep.spec.position = static_cast<Position>(pos);
            ep.spec.style = Style::Plain;
            ep.text = "a picture of " + concept_token + " " + class_word + " on " +
                      background_names()[bg] + " at " + position_names()[pos] + " in plain style";
            ep.tokens = model.vocab.tokenize(ep.text);
            out.push_back(std::move(ep));
        }
    return out;
}

struct FidelityReport {
    double background = 0, position = 0, style = 0;
    double mean = 0;  // prompt fidelity: mean of the three context attributes
    int n_images = 0;
};

template <typename T>
std::vector<SpriteImage> generate_for_eval(
    const BaseModel<T>& model, const std::vector<EvalPrompt>& prompts, int n_per_prompt,
    const SampleOptions& opt,
    const std::vector<typename TextEncoder<T>::RowOverride>& overrides,
    const std::vector<typename TextEncoder<T>::RowOverride>* overrides_layer1 = nullptr) {
    std::vector<PromptTokens> batch;
    for (const auto& ep : prompts)
        for (int i = 0; i < n_per_prompt; ++i) batch.push_back(ep.tokens);
    return sample_batch(model, batch, opt, overrides, overrides_layer1);
}

template <typename T>
FidelityReport prompt_fidelity(const BaseModel<T>& model, const std::vector<EvalPrompt>& prompts,
                               int n_per_prompt, const SampleOptions& opt,
                               const std::vector<typename TextEncoder<T>::RowOverride>& overrides,
                               const std::vector<typename TextEncoder<T>::RowOverride>*
                                   overrides_layer1 = nullptr) {
    const auto images = generate_for_eval(model, prompts, n_per_prompt, opt, overrides,
                                          overrides_layer1);
    FidelityReport r;
    size_t k = 0;
    for (const auto& ep : prompts)
        for (int i = 0; i < n_per_prompt; ++i, ++k) {
            const AttributeMatch m = attribute_match(images[k], ep.spec);
            r.background += m.background;
            r.position += m.position;
            r.style += m.style;
        }
    r.n_images = static_cast<int>(k);
    if (k > 0) {
        r.background /= static_cast<double>(k);
        r.position /= static_cast<double>(k);
        r.style /= static_cast<double>(k);
    }
    r.mean = (r.background + r.position + r.style) / 3.0;
    return r;
}

// Foreground pixels by the matcher's rule: anything that is not the
// estimated background color (inversion-corrected).
inline std::vector<uint8_t> estimate_foreground(const SpriteImage& img) {
    const SceneEstimate est = estimate_scene(img);
    std::vector<uint8_t> mask(kImageSize * kImageSize, 0);
    if (!est.has_subject) return mask;
    const bool inv = est.guess.style == Style::Inverted;
    const Rgb bg = background_palette()[est.guess.background];
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c) {
                const double v = inv ? 1.0 - img.px(y, x, c) : img.px(y, x, c);
                const double t = c == 0 ? bg.r : c == 1 ? bg.g : bg.b;
                d += (v - t) * (v - t);
            }
            if (d > 0.08) mask[static_cast<size_t>(y * kImageSize + x)] = 1;
        }
    return mask;
}

// Color/shape feature vector over a pixel subset: mean RGB, area fraction,
// normalized spatial second moments, dark fraction.
inline std::vector<double> subject_features(const SpriteImage& img,
                                            const std::vector<uint8_t>& mask) {
    std::vector<double> f(8, 0.0);
    double n = 0, cx = 0, cy = 0;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            if (!mask[static_cast<size_t>(y * kImageSize + x)]) continue;
            ++n;
            cx += x;
            cy += y;
            for (int c = 0; c < 3; ++c) f[static_cast<size_t>(c)] += img.px(y, x, c);
            const double lum = (img.px(y, x, 0) + img.px(y, x, 1) + img.px(y, x, 2)) / 3.0;
            if (lum < 0.25) f[7] += 1.0;
        }
    if (n == 0) return {};
    for (int c = 0; c < 3; ++c) f[static_cast<size_t>(c)] /= n;
    f[3] = n / (kImageSize * kImageSize);
    cx /= n;
    cy /= n;
    double vx = 0, vy = 0, vxy = 0;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            if (!mask[static_cast<size_t>(y * kImageSize + x)]) continue;
            vx += (x - cx) * (x - cx);
            vy += (y - cy) * (y - cy);
            vxy += (x - cx) * (y - cy);
        }
    f[4] = std::sqrt(vx / n) / kImageSize;
    f[5] = std::sqrt(vy / n) / kImageSize;
    f[6] = vxy / n / (kImageSize * kImageSize) + 0.5;  // shifted so cosine stays meaningful
    f[7] /= n;
    return f;
}

struct SubjectFidelityReport {
    double masked = 0, whole = 0;
    int n_pairs = 0;
    int n_no_foreground = 0;
};

template <typename T>
SubjectFidelityReport subject_fidelity(
    const BaseModel<T>& model, const std::vector<SpriteImage>& concept_images,
    const std::vector<EvalPrompt>& prompts, int n_per_prompt, const SampleOptions& opt,
    const std::vector<typename TextEncoder<T>::RowOverride>& overrides,
    const std::vector<typename TextEncoder<T>::RowOverride>* overrides_layer1 = nullptr) {
    if (concept_images.empty()) throw std::runtime_error("subject_fidelity: no concept images");
    const auto images = generate_for_eval(model, prompts, n_per_prompt, opt, overrides,
                                          overrides_layer1);
    std::vector<std::vector<double>> ref_feats;
    std::vector<std::vector<double>> ref_whole;
    for (const auto& ci : concept_images) {
        std::vector<uint8_t> m(ci.foreground_mask.begin(), ci.foreground_mask.end());
        ref_feats.push_back(subject_features(ci, m));
        ref_whole.push_back(std::vector<double>(ci.pixels.data.begin(), ci.pixels.data.end()));
    }
    SubjectFidelityReport r;
    for (const auto& gi : images) {
        const auto gmask = estimate_foreground(gi);
        const auto gf = subject_features(gi, gmask);
        const std::vector<double> gw(gi.pixels.data.begin(), gi.pixels.data.end());
        double best_m = 0, mean_w = 0;
        if (gf.empty()) ++r.n_no_foreground;  // scored 0, still counted
        for (size_t j = 0; j < ref_feats.size(); ++j) {
            if (!gf.empty() && !ref_feats[j].empty())
                best_m += cosine(gf, ref_feats[j]);
            mean_w += cosine(gw, ref_whole[j]);
        }
        r.masked += best_m / static_cast<double>(ref_feats.size());
        r.whole += mean_w / static_cast<double>(ref_feats.size());
        ++r.n_pairs;
    }
    if (r.n_pairs > 0) {
        r.masked /= r.n_pairs;
        r.whole /= r.n_pairs;
    }
    return r;
}

// ---- proposition bound checks ----

struct BoundReport {
    int tested = 0;
    int skipped = 0;     // precondition not met
    int violations = 0;  // beyond slack
    double min_margin = 0.0;   // min over instances of rhs - lhs
    double worst_ratio = 0.0;  // max over instances of lhs / rhs (rhs > 0)
    bool holds = true;
    // prop2 extras
    double delta_g = 0.0;
    double kappa = 0.0;
    bool hypothesis_met = true;
};

// Prop 1: rows of A within delta of one-hot on column jstar keep A*V within
// delta * sum_j ||V[j,:]|| of V[jstar,:].
inline BoundReport verify_prop1(const Tensor<double>& A, const Tensor<double>& V, int jstar,
                                double delta, double slack = 1e-6) {
    BoundReport r;
    r.min_margin = std::numeric_limits<double>::infinity();
    double sumnorm = 0;
    for (int64_t j = 0; j < V.rows(); ++j) {
        double s = 0;
        for (int64_t k = 0; k < V.cols(); ++k) s += V.at(j, k) * V.at(j, k);
        sumnorm += std::sqrt(s);
    }
    const double rhs = delta * sumnorm;
    for (int64_t i = 0; i < A.rows(); ++i) {
        double rowsum = 0;
        for (int64_t j = 0; j < A.cols(); ++j) rowsum += A.at(i, j);
        if (std::abs(rowsum - 1.0) > 1e-9 || A.at(i, jstar) < 1.0 - delta - 1e-12) {
            ++r.skipped;
            continue;
        }
        double lhs = 0;
        for (int64_t k = 0; k < V.cols(); ++k) {
            double ci = 0;
            for (int64_t j = 0; j < A.cols(); ++j) ci += A.at(i, j) * V.at(j, k);
            const double d = ci - V.at(jstar, k);
            lhs += d * d;
        }
        lhs = std::sqrt(lhs);
        ++r.tested;
        r.min_margin = std::min(r.min_margin, rhs - lhs);
        if (rhs > 0) r.worst_ratio = std::max(r.worst_ratio, lhs / rhs);
        if (lhs > rhs + slack) ++r.violations;
    }
    r.holds = r.violations == 0;
    return r;
}

// Prop 3: ||M[:,i] - M[:,j]|| <= ||Q||_F ||W_K||_F ||c_i - c_j|| with
// M[:,k] = Q (c_k W_K)^T.
inline BoundReport verify_prop3(const Tensor<double>& Q, const Tensor<double>& WK,
                                const std::vector<double>& ci, const std::vector<double>& cj,
                                double rel_slack = 1e-5) {
    BoundReport r;
    const int64_t nq = Q.rows(), dk = Q.cols(), d = WK.rows();
    if (WK.cols() != dk || static_cast<int64_t>(ci.size()) != d ||
        static_cast<int64_t>(cj.size()) != d)
        throw std::runtime_error("verify_prop3: shape mismatch");
    std::vector<double> ki(static_cast<size_t>(dk), 0.0), kj(static_cast<size_t>(dk), 0.0);
    for (int64_t a = 0; a < d; ++a)
        for (int64_t b = 0; b < dk; ++b) {
            ki[static_cast<size_t>(b)] += ci[static_cast<size_t>(a)] * WK.at(a, b);
            kj[static_cast<size_t>(b)] += cj[static_cast<size_t>(a)] * WK.at(a, b);
        }
    double lhs = 0;
    for (int64_t q = 0; q < nq; ++q) {
        double mi = 0, mj = 0;
        for (int64_t b = 0; b < dk; ++b) {
            mi += Q.at(q, b) * ki[static_cast<size_t>(b)];
            mj += Q.at(q, b) * kj[static_cast<size_t>(b)];
        }
        lhs += (mi - mj) * (mi - mj);
    }
    lhs = std::sqrt(lhs);
    double qf = 0, wf = 0, cd = 0;
    for (double v : Q.data) qf += v * v;
    for (double v : WK.data) wf += v * v;
    for (size_t a = 0; a < ci.size(); ++a) cd += (ci[a] - cj[a]) * (ci[a] - cj[a]);
    const double rhs = std::sqrt(qf) * std::sqrt(wf) * std::sqrt(cd);
    r.tested = 1;
    r.min_margin = rhs - lhs;
    r.worst_ratio = rhs > 0 ? lhs / rhs : 0.0;
    r.violations = lhs > rhs * (1.0 + rel_slack) + 1e-12 ? 1 : 0;
    r.holds = r.violations == 0;
    return r;
}

// Prop 2: first-order bound around a near-optimum of a scalar loss over one
// context embedding, with a curvature slack estimated by symmetric probes.
// f: loss as a function of the embedding; g: its gradient (same dimension).
inline BoundReport verify_prop2(const std::function<double(const std::vector<double>&)>& f,
                                const std::function<std::vector<double>(const std::vector<double>&)>& g,
                                const std::vector<double>& cb, const std::vector<double>& cb_hat,
                                Rng& rng, double grad_norm_gate = 0.5) {
    BoundReport r;
    const auto grad = g(cb_hat);
    double gn = 0;
    for (double v : grad) gn += v * v;
    r.delta_g = std::sqrt(gn);
    r.hypothesis_met = r.delta_g <= grad_norm_gate;

    // curvature probe: symmetric second differences along random directions
    const double eps = 1e-2;
    double kappa = 0;
    const double f0 = f(cb_hat);
    for (int k = 0; k < 8; ++k) {
        std::vector<double> u(cb_hat.size());
        double un = 0;
        for (auto& v : u) {
            v = rng.normal();
            un += v * v;
        }
        un = std::sqrt(un);
        std::vector<double> up = cb_hat, um = cb_hat;
        for (size_t i = 0; i < u.size(); ++i) {
            up[i] += eps * u[i] / un;
            um[i] -= eps * u[i] / un;
        }
        kappa = std::max(kappa, std::abs(f(up) - 2 * f0 + f(um)) / (eps * eps));
    }
    r.kappa = kappa;

    double dist = 0;
    for (size_t i = 0; i < cb.size(); ++i) dist += (cb[i] - cb_hat[i]) * (cb[i] - cb_hat[i]);
    dist = std::sqrt(dist);
    const double lhs = f(cb) - f0;
    const double rhs = r.delta_g * dist + kappa * dist * dist;
    r.tested = 1;
    r.min_margin = rhs - lhs;
    r.worst_ratio = rhs > 0 ? lhs / rhs : 0.0;
    r.violations = r.hypothesis_met && lhs > rhs + 1e-9 ? 1 : 0;
    r.holds = r.violations == 0;
    return r;
}

}  // namespace mc
