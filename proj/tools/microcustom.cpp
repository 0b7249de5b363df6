// Single entry point for the pipeline: dataset generation, pretraining,
// customization, sampling, analysis, bound verification, and reporting.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "microcustom/analysis.hpp"
#include "microcustom/customize.hpp"

using namespace mc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "microcustom 1.0";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k))
            throw ConfigError(where + ": unknown key '" + k + "'");
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    try {
        return json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

// deterministic float formatting for CSV bytes
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_text(const fs::path& p, const std::string& body) {
    if (!p.parent_path().empty()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << body;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

struct RunDir {
    fs::path out;
    fs::path dataset() const { return out / "dataset"; }
    fs::path heldout() const { return out / "dataset" / "heldout.txt"; }
    std::string base_stem() const { return (out / "checkpoints" / "base").string(); }
    std::string custom_stem() const { return (out / "checkpoints" / "custom").string(); }
    void ensure() const { fs::create_directories(out / "checkpoints"); }
};

void write_manifest(const RunDir& rd, const std::string& subcommand, const json& resolved) {
    json m;
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["config"] = resolved;
    write_text(rd.out / ("config_" + subcommand + ".json"), m.dump(2) + "\n");
}

// ---- concept handling ----

struct ConceptSpec {
    ConceptDef def{Shape::Circle, 2, Texture::Solid, 1};
    std::string class_word = "circle";
    int k = 4;
};

template <typename A>
int index_in(const A& names, const std::string& w, const std::string& what) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == w) return static_cast<int>(i);
    throw ConfigError("unknown " + what + " '" + w + "'");
}

ConceptSpec concept_from(const json& cfg) {
    const json c = cfg.value("concept", json::object());
    check_keys(c, "concept", {"shape", "color", "texture", "background", "k"});
    ConceptSpec cs;
    cs.class_word = get_or<std::string>(c, "shape", "circle");
    cs.def.shape = static_cast<Shape>(index_in(shape_names(), cs.class_word, "shape"));
    cs.def.color = index_in(color_names(), get_or<std::string>(c, "color", "blue"), "color");
    cs.def.texture = static_cast<Texture>(
        index_in(texture_names(), get_or<std::string>(c, "texture", "solid"), "texture"));
    cs.def.background = index_in(background_names(), get_or<std::string>(c, "background", "sand"),
                                 "background");
    cs.k = get_or<int>(c, "k", 4);
    return cs;
}

BaseModel<float> load_model(const std::string& stem, const std::string& needed_for) {
    if (!fs::exists(stem + ".json"))
        throw DependencyError("missing checkpoint '" + stem + "' (required for " + needed_for + ")");
    BaseModel<float> m = BaseModel<float>::fresh(0);
    m.load(stem);
    return m;
}

std::string losses_csv(const std::vector<double>& losses) {
    std::string s = "iteration,loss\n";
    for (size_t i = 0; i < losses.size(); ++i)
        s += std::to_string(i) + "," + fmt(losses[i]) + "\n";
    return s;
}

// ---- subcommands ----

int cmd_gen_data(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json g = cfg.value("gen_data", json::object());
    check_keys(g, "gen_data", {"n", "heldout"});
    const int64_t n = get_or<int64_t>(g, "n", 5000);
    const int heldout = get_or<int>(g, "heldout", 200);
    if (n <= 0) throw ConfigError("gen_data.n must be > 0");
    fs::create_directories(rd.dataset());
    const auto corpus = build_pretraining_corpus(n, seed);
    save_dataset(rd.dataset().string(), corpus);
    // held-out captions drawn from the full spec enumeration with a shifted seed
    Rng rng(hash_combine(seed, 0xda3e39cb94b95bdbull));
    const auto specs = all_scene_specs();
    std::string h;
    for (int i = 0; i < heldout; ++i)
        h += caption_of(specs[static_cast<size_t>(
                 rng.uniform_int(static_cast<int64_t>(specs.size())))]) +
             "\n";
    write_text(rd.heldout(), h);
    std::cout << "wrote " << n << " training pairs and " << heldout << " held-out captions\n";
    return 0;
}

int cmd_pretrain_base(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json p = cfg.value("pretrain_base", json::object());
    check_keys(p, "pretrain_base",
               {"lr", "batch", "iterations", "caption_dropout", "log_every"});
    if (!fs::exists(rd.dataset() / "dataset.jsonl"))
        throw DependencyError("missing dataset under " + rd.dataset().string() +
                              " (run gen-data first)");
    const auto corpus = load_dataset(rd.dataset().string());
    PretrainBaseConfig c;
    c.lr = get_or<double>(p, "lr", c.lr);
    c.batch = get_or<int>(p, "batch", 16);
    c.iterations = get_or<int>(p, "iterations", 2500);
    c.caption_dropout = get_or<double>(p, "caption_dropout", c.caption_dropout);
    c.log_every = get_or<int>(p, "log_every", c.log_every);
    c.seed = seed;
    BaseModel<float> model = BaseModel<float>::fresh(seed);
    const auto res = pretrain_base(model, corpus, c, [&](int it, double avg) {
        std::cout << "iter " << it << " avg loss " << avg << "\n" << std::flush;
    });
    model.save(rd.base_stem());
    write_text(rd.out / "base_losses.csv", losses_csv(res.losses));
    std::cout << "final avg loss " << res.final_avg_loss << "\n";
    return 0;
}

int cmd_pretrain_ctx(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json p = cfg.value("pretrain_ctx", json::object());
    check_keys(p, "pretrain_ctx",
               {"lr", "batch", "iterations", "rho_mask", "mix_general", "eval_prompts"});
    BaseModel<float> model = load_model(rd.base_stem(), "pretrain-ctx");
    if (!fs::exists(rd.dataset() / "dataset.jsonl"))
        throw DependencyError("missing dataset under " + rd.dataset().string());
    const auto corpus = load_dataset(rd.dataset().string());
    std::vector<std::string> captions;
    for (const auto& it : corpus) captions.push_back(it.caption);

    // class-substituted rich prompts for every shape class
    std::vector<std::string> class_prompts;
    for (const auto& cls : shape_names())
        for (const auto& rp : build_rich_prompt_set("[v]", cls)) {
            std::string t = rp.text;
            const size_t pos = t.find("[v]");
            t.replace(pos, 3, cls);
            class_prompts.push_back(t);
        }

    PretrainCtxConfig c;
    c.lr = get_or<double>(p, "lr", c.lr);
    c.batch = get_or<int>(p, "batch", 32);
    c.iterations = get_or<int>(p, "iterations", 1500);
    c.rho_mask = get_or<double>(p, "rho_mask", c.rho_mask);
    c.mix_general = get_or<double>(p, "mix_general", c.mix_general);
    c.seed = seed;
    const auto res = pretrain_contextualizer(model.enc, model.ctx, model.vocab, captions,
                                             class_prompts, c);
    model.ctx_ready = true;
    model.save(rd.base_stem());
    write_text(rd.out / "ctx_losses.csv", losses_csv(res.losses));

    // held-out accuracy over template prompts unseen by the loop's rng
    Rng erng(hash_combine(seed, 0xa0761d6478bd642full));
    std::vector<std::string> eval_set;
    const int n_eval = get_or<int>(p, "eval_prompts", 200);
    for (int i = 0; i < n_eval; ++i)
        eval_set.push_back(class_prompts[static_cast<size_t>(
            erng.uniform_int(static_cast<int64_t>(class_prompts.size())))]);
    const MlmEval ev = mlm_eval(model.enc, model.ctx, model.vocab, eval_set, c.rho_mask,
                                hash_combine(seed, 1), 4);
    write_text(rd.out / "ctx_eval.csv",
               "accuracy,mean_loss,positions\n" + fmt(ev.accuracy) + "," + fmt(ev.mean_loss) +
                   "," + std::to_string(ev.positions) + "\n");
    std::cout << "mlm accuracy " << ev.accuracy << " mean loss " << ev.mean_loss << "\n";
    return 0;
}

CustomizeConfig customize_config_from(const json& cfg, uint64_t seed,
                                      const ConceptSpec& cs) {
    const json c = cfg.value("customize", json::object());
    check_keys(c, "customize",
               {"variant", "lambda_mlm", "rho_mask", "lr", "lr_model", "iterations", "diff_batch",
                "mlm_batch", "n_prior", "prior_steps", "disable_mlm_branch", "concept_init"});
    CustomizeConfig cc;
    cc.variant = parse_variant(get_or<std::string>(c, "variant", "ti"));
    cc.class_word = cs.class_word;
    cc.concept_init = get_or<std::string>(c, "concept_init", cc.concept_init);
    cc.lambda_mlm = get_or<double>(c, "lambda_mlm", cc.lambda_mlm);
    cc.rho_mask = get_or<double>(c, "rho_mask", cc.rho_mask);
    cc.lr = get_or<double>(c, "lr", cc.lr);
    cc.lr_model = get_or<double>(c, "lr_model", cc.lr_model);
    cc.iterations = get_or<int>(c, "iterations", cc.iterations);
    cc.diff_batch = get_or<int>(c, "diff_batch", cc.diff_batch);
    cc.mlm_batch = get_or<int>(c, "mlm_batch", cc.mlm_batch);
    cc.n_prior = get_or<int>(c, "n_prior", cc.n_prior);
    cc.prior_steps = get_or<int>(c, "prior_steps", cc.prior_steps);
    cc.disable_mlm_branch = get_or<bool>(c, "disable_mlm_branch", cc.disable_mlm_branch);
    cc.seed = seed;
    return cc;
}

int cmd_customize(const RunDir& rd, const json& cfg, uint64_t seed) {
    const ConceptSpec cs = concept_from(cfg);
    const CustomizeConfig cc = customize_config_from(cfg, seed, cs);
    BaseModel<float> model = load_model(rd.base_stem(), "customize");
    const auto images = build_concept_set(cs.def, cs.k, hash_combine(seed, 2));
    const auto prompts = build_rich_prompt_set(cc.concept_token, cc.class_word);
    const CustomizeResult res = customize(model, images, prompts, cc);
    model.save(rd.custom_stem(), {{"variant", variant_name(cc.variant)}});
    std::string csv = "iteration,diff,mlm,total\n";
    for (const auto& row : res.losses)
        csv += std::to_string(row.iteration) + "," + fmt(row.diff) + "," + fmt(row.mlm) + "," +
               fmt(row.total) + "\n";
    write_text(rd.out / "customize_losses.csv", csv);
    std::cout << "customized (" << variant_name(cc.variant) << "), final total loss "
              << res.losses.back().total << "\n";
    return 0;
}

void write_ppm(const fs::path& p, const SpriteImage& img) {
    std::ostringstream s;
    s << "P6\n" << kImageSize << " " << kImageSize << "\n255\n";
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c)
                s.put(static_cast<char>(std::lround(img.px(y, x, c) * 255.0f)));
    write_text(p, s.str());
}

int cmd_generate(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json g = cfg.value("generate", json::object());
    check_keys(g, "generate", {"prompt", "n", "steps", "guidance"});
    const std::string stem = fs::exists(rd.custom_stem() + ".json") ? rd.custom_stem()
                                                                     : rd.base_stem();
    BaseModel<float> model = load_model(stem, "generate");
    const std::string text = get_or<std::string>(g, "prompt", "a red circle on grass");
    const int n = get_or<int>(g, "n", 4);
    SampleOptions opt;
    opt.steps = get_or<int>(g, "steps", 20);
    opt.guidance = get_or<double>(g, "guidance", 7.5);
    opt.seed = seed;

    PromptTokens p = model.vocab.tokenize(text);
    std::vector<typename TextEncoder<float>::RowOverride> ovr;
    if (!p.concept_positions.empty()) {
        if (!model.enc.params.has("concept.row"))
            throw DependencyError("prompt uses the concept token but no customized row exists");
        ovr.push_back({"concept.row", p.concept_positions});
    }
    const auto imgs = sample_batch(model, std::vector<PromptTokens>(static_cast<size_t>(n), p),
                                   opt, ovr);
    for (int i = 0; i < n; ++i)
        write_ppm(rd.out / "samples" / ("sample_" + std::to_string(i) + ".ppm"),
                  imgs[static_cast<size_t>(i)]);
    std::cout << "wrote " << n << " samples for: " << text << "\n";
    return 0;
}

struct AnalyzeRow {
    double sim1, sim2, skl;
    double prompt_fid, bg, pos, style;
    double subj_masked, subj_whole;
};

AnalyzeRow analyze_model(BaseModel<float>& model, const ConceptSpec& cs, const json& a,
                         uint64_t seed) {
    const std::string row0 = concept_row_names(
        model.enc.params.has("concept.row") ? Variant::TI : Variant::XTI)[0];
    if (!model.enc.params.has(row0))
        throw DependencyError("checkpoint has no concept row (run customize first)");
    const auto prompts = build_rich_prompt_set("[v]", cs.class_word);
    const SimReport sim = concept_context_similarity(model, row0, prompts);

    SampleOptions skl_opt;
    skl_opt.steps = get_or<int>(a, "steps", 20);
    skl_opt.guidance = get_or<double>(a, "guidance", 7.5);
    skl_opt.seed = hash_combine(seed, 3);
    std::vector<double> skls;
    const int n_skl = std::min<int>(get_or<int>(a, "skl_prompts", 5),
                                    static_cast<int>(prompts.size()));
    for (int i = 0; i < n_skl; ++i)
        skls.push_back(skl_for_prompt(model, row0, prompts[static_cast<size_t>(i) *
                                                           prompts.size() / n_skl],
                                      skl_opt));

    const auto eval_prompts = build_eval_prompts(model, cs.def, "[v]", cs.class_word);
    SampleOptions eval_opt = skl_opt;
    eval_opt.seed = hash_combine(seed, 4);
    const int n_per = get_or<int>(a, "n_per_prompt", 2);
    std::vector<typename TextEncoder<float>::RowOverride> ovr = {
        {row0, eval_prompts[0].tokens.concept_positions}};
    const FidelityReport pf = prompt_fidelity(model, eval_prompts, n_per, eval_opt, ovr);
    const auto images = build_concept_set(cs.def, cs.k, hash_combine(seed, 2));
    const SubjectFidelityReport sf =
        subject_fidelity(model, images, eval_prompts, n_per, eval_opt, ovr);

    AnalyzeRow r;
    r.sim1 = sim.sim1.mean;
    r.sim2 = sim.sim2.mean;
    r.skl = mean_std(skls).mean;
    r.prompt_fid = pf.mean;
    r.bg = pf.background;
    r.pos = pf.position;
    r.style = pf.style;
    r.subj_masked = sf.masked;
    r.subj_whole = sf.whole;
    return r;
}

const char* kAnalysisHeader =
    "sim1,sim2,skl,prompt_fidelity,background,position,style,subject_masked,subject_whole\n";

std::string analysis_row_csv(const AnalyzeRow& r) {
    return fmt(r.sim1) + "," + fmt(r.sim2) + "," + fmt(r.skl) + "," + fmt(r.prompt_fid) + "," +
           fmt(r.bg) + "," + fmt(r.pos) + "," + fmt(r.style) + "," + fmt(r.subj_masked) + "," +
           fmt(r.subj_whole) + "\n";
}

int cmd_analyze(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json a = cfg.value("analyze", json::object());
    check_keys(a, "analyze", {"steps", "guidance", "n_per_prompt", "skl_prompts"});
    const ConceptSpec cs = concept_from(cfg);
    BaseModel<float> model = load_model(rd.custom_stem(), "analyze");
    const AnalyzeRow r = analyze_model(model, cs, a, seed);
    write_text(rd.out / "analysis.csv", std::string(kAnalysisHeader) + analysis_row_csv(r));
    std::cout << "sim1 " << r.sim1 << " sim2 " << r.sim2 << " skl " << r.skl << " prompt_fid "
              << r.prompt_fid << " subject " << r.subj_masked << "\n";
    return 0;
}

int cmd_verify_bounds(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json v = cfg.value("verify_bounds", json::object());
    check_keys(v, "verify_bounds", {"instances", "restarts"});
    const int n_inst = get_or<int>(v, "instances", 1000);
    const int restarts = get_or<int>(v, "restarts", 100);
    Rng rng(seed);
    std::string csv = "prop,tested,skipped,violations,min_margin,worst_ratio,holds\n";

    auto emit = [&](const std::string& name, int tested, int skipped, int violations,
                    double margin, double ratio) {
        csv += name + "," + std::to_string(tested) + "," + std::to_string(skipped) + "," +
               std::to_string(violations) + "," + fmt(margin) + "," + fmt(ratio) + "," +
               (violations == 0 ? "1" : "0") + "\n";
        return violations;
    };

    // prop 1: random + adversarial (ratio-climbing restarts)
    int t1 = 0, s1 = 0, v1 = 0;
    double m1 = std::numeric_limits<double>::infinity(), r1 = 0;
    auto prop1_instance = [&](double scale) {
        const int n = 4 + static_cast<int>(rng.uniform_int(6));
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        const int jstar = static_cast<int>(rng.uniform_int(n));
        const double delta = rng.uniform() * 0.3;
        Tensor<double> A({4, n}), V({n, d});
        for (auto& x : V.data) x = rng.normal() * scale;
        for (int64_t i = 0; i < 4; ++i) {
            const double dp = rng.uniform() * delta;
            double s = 0;
            std::vector<double> w(static_cast<size_t>(n), 0.0);
            for (int j = 0; j < n; ++j)
                if (j != jstar) s += w[static_cast<size_t>(j)] = rng.uniform();
            for (int j = 0; j < n; ++j)
                A.at(i, j) =
                    j == jstar ? 1.0 - dp : (s > 0 ? dp * w[static_cast<size_t>(j)] / s : 0.0);
        }
        const BoundReport r = verify_prop1(A, V, jstar, delta);
        t1 += r.tested;
        s1 += r.skipped;
        v1 += r.violations;
        if (r.tested) m1 = std::min(m1, r.min_margin);
        r1 = std::max(r1, r.worst_ratio);
    };
    for (int i = 0; i < n_inst; ++i) prop1_instance(1.0);
    for (int i = 0; i < restarts; ++i) prop1_instance(std::pow(10.0, rng.uniform() * 4 - 2));
    const int bad1 = emit("prop1", t1, s1, v1, m1, r1);

    // prop 3: random + adversarial near-aligned constructions
    int t3 = 0, v3 = 0;
    double m3 = std::numeric_limits<double>::infinity(), r3 = 0;
    auto prop3_instance = [&](bool aligned) {
        const int nq = 2 + static_cast<int>(rng.uniform_int(6));
        const int dk = 2 + static_cast<int>(rng.uniform_int(4));
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        Tensor<double> Q({nq, dk}), WK({d, dk});
        std::vector<double> ci(static_cast<size_t>(d)), cj(static_cast<size_t>(d));
        if (aligned) {
            // rank-1 everything: pushes the Cauchy-Schwarz chain toward equality
            std::vector<double> u(static_cast<size_t>(dk));
            for (auto& x : u) x = rng.normal();
            for (int64_t i = 0; i < nq; ++i)
                for (int64_t b = 0; b < dk; ++b)
                    Q.at(i, b) = (i == 0 ? 1.0 : 0.0) * u[static_cast<size_t>(b)];
            for (int64_t a = 0; a < d; ++a)
                for (int64_t b = 0; b < dk; ++b)
                    WK.at(a, b) = (a == 0 ? 1.0 : 0.0) * u[static_cast<size_t>(b)];
            for (size_t a = 0; a < ci.size(); ++a) ci[a] = a == 0 ? rng.normal() : 0.0;
            for (size_t a = 0; a < cj.size(); ++a) cj[a] = a == 0 ? rng.normal() : 0.0;
        } else {
            for (auto& x : Q.data) x = rng.normal();
            for (auto& x : WK.data) x = rng.normal();
            for (auto& x : ci) x = rng.normal();
            for (auto& x : cj) x = rng.normal();
        }
        const BoundReport r = verify_prop3(Q, WK, ci, cj);
        t3 += r.tested;
        v3 += r.violations;
        m3 = std::min(m3, r.min_margin);
        r3 = std::max(r3, r.worst_ratio);
    };
    for (int i = 0; i < n_inst; ++i) prop3_instance(false);
    for (int i = 0; i < restarts; ++i) prop3_instance(true);
    const int bad3 = emit("prop3", t3, 0, v3, m3, r3);

    // prop 2 on a family of quadratic oracles (the hypothesis-gated bound)
    int t2 = 0, v2 = 0;
    double m2 = std::numeric_limits<double>::infinity(), r2 = 0;
    for (int i = 0; i < n_inst / 10; ++i) {
        const int d = 3 + static_cast<int>(rng.uniform_int(6));
        std::vector<double> target(static_cast<size_t>(d)), cb(static_cast<size_t>(d));
        std::vector<double> curv(static_cast<size_t>(d));
        for (auto& x : target) x = rng.normal();
        for (auto& x : curv) x = 0.1 + rng.uniform() * 2.0;
        for (size_t k = 0; k < cb.size(); ++k) cb[k] = target[k] + rng.normal() * 0.3;
        auto f = [&](const std::vector<double>& x) {
            double s = 0;
            for (size_t k = 0; k < x.size(); ++k)
                s += 0.5 * curv[k] * (x[k] - target[k]) * (x[k] - target[k]);
            return s;
        };
        auto g = [&](const std::vector<double>& x) {
            std::vector<double> out(x.size());
            for (size_t k = 0; k < x.size(); ++k) out[k] = curv[k] * (x[k] - target[k]);
            return out;
        };
        const BoundReport r = verify_prop2(f, g, cb, target, rng);
        t2 += r.tested;
        v2 += r.violations;
        m2 = std::min(m2, r.min_margin);
        r2 = std::max(r2, r.worst_ratio);
    }
    const int bad2 = emit("prop2", t2, 0, v2, m2, r2);

    write_text(rd.out / "bounds_report.csv", csv);
    std::cout << csv;
    return bad1 + bad3 + bad2 ? 4 : 0;
}

int cmd_sweep(const RunDir& rd, const json& cfg, uint64_t seed) {
    const json s = cfg.value("sweep", json::object());
    check_keys(s, "sweep", {"param", "values", "concepts", "seeds"});
    const std::string param = get_or<std::string>(s, "param", "lambda");
    if (param != "lambda" && param != "rho_mask")
        throw ConfigError("sweep.param must be 'lambda' or 'rho_mask'");
    std::vector<double> values = get_or<std::vector<double>>(s, "values", {0.0, 5e-5, 1e-4});
    const int n_concepts = get_or<int>(s, "concepts", 3);
    const int n_seeds = get_or<int>(s, "seeds", 3);
    const json a = cfg.value("analyze", json::object());

    // distinct concepts: rotate shape/color/background
    std::vector<ConceptSpec> concepts;
    for (int c = 0; c < n_concepts; ++c) {
        ConceptSpec cs;
        cs.def.shape = static_cast<Shape>(c % kNumShapes);
        cs.class_word = shape_names()[static_cast<size_t>(c % kNumShapes)];
        cs.def.color = (2 + 3 * c) % kNumColors;
        cs.def.texture = static_cast<Texture>(c % kNumTextures);
        cs.def.background = (1 + 2 * c) % kNumBackgrounds;
        concepts.push_back(cs);
    }

    std::string csv = std::string("param,value,concept,seed,") + kAnalysisHeader;
    for (double val : values)
        for (int c = 0; c < n_concepts; ++c)
            for (int sd = 0; sd < n_seeds; ++sd) {
                BaseModel<float> model = load_model(rd.base_stem(), "sweep");
                CustomizeConfig cc = customize_config_from(cfg, hash_combine(seed, sd), concepts[c]);
                if (param == "lambda") cc.lambda_mlm = val;
                else cc.rho_mask = val;
                const auto images =
                    build_concept_set(concepts[c].def, concepts[c].k, hash_combine(seed, 2));
                const auto prompts = build_rich_prompt_set("[v]", concepts[c].class_word);
                customize(model, images, prompts, cc);
                const AnalyzeRow r = analyze_model(model, concepts[c], a, hash_combine(seed, sd));
                csv += param + "," + fmt(val) + "," + std::to_string(c) + "," +
                       std::to_string(sd) + "," + analysis_row_csv(r);
                std::cout << param << "=" << val << " concept " << c << " seed " << sd
                          << " prompt_fid " << r.prompt_fid << "\n" << std::flush;
            }
    write_text(rd.out / "sweep.csv", csv);
    return 0;
}

// ---- report: merge CSVs and draw SVG line plots ----

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DependencyError("missing csv: " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string svg_line_plot(const std::string& title, const std::vector<double>& xs,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    const int W = 480, H = 320, L = 60, B = 40;
    double xmin = xs[0], xmax = xs[0], ymin = 1e300, ymax = -1e300;
    for (double x : xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    for (const auto& [n, ys] : series)
        for (double y : ys) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto X = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - 20); };
    auto Y = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - B - 30); };
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<text x='" << W / 2 << "' y='18' text-anchor='middle' font-size='13'>" << title
      << "</text>\n";
    s << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - 20 << "' y2='" << H - B
      << "' stroke='black'/>\n";
    s << "<line x1='" << L << "' y1='30' x2='" << L << "' y2='" << H - B << "' stroke='black'/>\n";
    for (size_t k = 0; k < series.size(); ++k) {
        const auto& [name, ys] = series[k];
        s << "<polyline fill='none' stroke='" << palette[k % 4] << "' points='";
        for (size_t i = 0; i < xs.size(); ++i) s << fmt(X(xs[i])) << "," << fmt(Y(ys[i])) << " ";
        s << "'/>\n<text x='" << W - 120 << "' y='" << 40 + 16 * k << "' font-size='11' fill='"
          << palette[k % 4] << "'>" << name << "</text>\n";
    }
    for (double x : xs)
        s << "<text x='" << fmt(X(x)) << "' y='" << H - B + 16
          << "' text-anchor='middle' font-size='10'>" << fmt(x) << "</text>\n";
    s << "<text x='12' y='34' font-size='10'>" << fmt(ymax) << "</text>\n";
    s << "<text x='12' y='" << H - B << "' font-size='10'>" << fmt(ymin) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

int cmd_report(const RunDir& rd, const json& cfg, uint64_t) {
    const json rep = cfg.value("report", json::object());
    check_keys(rep, "report", {"sweeps"});
    std::vector<std::string> inputs =
        get_or<std::vector<std::string>>(rep, "sweeps", {(rd.out / "sweep.csv").string()});
    if (inputs.empty()) throw ConfigError("report: empty input list");

    std::vector<std::vector<std::string>> all;
    std::vector<std::string> header;
    for (const auto& path : inputs) {
        const auto rows = read_csv(path);
        if (rows.empty()) throw DependencyError("report: empty csv " + path);
        if (header.empty()) header = rows[0];
        else if (header != rows[0])
            throw ConfigError("report: inconsistent csv schema in " + path);
        for (size_t i = 1; i < rows.size(); ++i) all.push_back(rows[i]);
    }
    std::string merged;
    for (size_t j = 0; j < header.size(); ++j)
        merged += header[j] + (j + 1 < header.size() ? "," : "\n");
    for (const auto& row : all)
        for (size_t j = 0; j < row.size(); ++j) merged += row[j] + (j + 1 < row.size() ? "," : "\n");
    write_text(rd.out / "report.csv", merged);

    // seed/concept-averaged metric-vs-value plots per swept parameter
    auto col = [&](const std::string& name) {
        for (size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return static_cast<int>(j);
        throw ConfigError("report: column '" + name + "' missing");
    };
    const int jparam = col("param"), jval = col("value");
    for (const std::string param : {"lambda", "rho_mask"}) {
        std::map<double, std::map<std::string, std::vector<double>>> buckets;
        for (const auto& row : all) {
            if (row[static_cast<size_t>(jparam)] != param) continue;
            const double v = std::stod(row[static_cast<size_t>(jval)]);
            for (const std::string metric : {"prompt_fidelity", "subject_masked", "sim1", "sim2", "skl"})
                buckets[v][metric].push_back(
                    std::stod(row[static_cast<size_t>(col(metric))]));
        }
        if (buckets.empty()) continue;
        std::vector<double> xs;
        std::vector<std::pair<std::string, std::vector<double>>> series = {
            {"prompt_fidelity", {}}, {"subject_masked", {}}};
        for (const auto& [v, metrics] : buckets) {
            xs.push_back(v);
            series[0].second.push_back(mean_std(metrics.at("prompt_fidelity")).mean);
            series[1].second.push_back(mean_std(metrics.at("subject_masked")).mean);
        }
        write_text(rd.out / ("plot_" + param + ".svg"),
                   svg_line_plot("fidelity vs " + param, xs, series));
    }
    std::cout << "report.csv with " << all.size() << " rows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"microcustom: MLM-regularized text-to-image customization, desk scale"};
    app.require_subcommand(1);
    std::string config_path, out_dir = "runs/default";
    int64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--out", out_dir, "run directory for artifacts");
    app.add_option("--seed", seed, "global seed override")->each([&](const std::string&) {
        seed_set = true;
    });

    const std::map<std::string, std::function<int(const RunDir&, const json&, uint64_t)>> cmds = {
        {"gen-data", cmd_gen_data},         {"pretrain-base", cmd_pretrain_base},
        {"pretrain-ctx", cmd_pretrain_ctx}, {"customize", cmd_customize},
        {"generate", cmd_generate},         {"analyze", cmd_analyze},
        {"verify-bounds", cmd_verify_bounds}, {"sweep", cmd_sweep},
        {"report", cmd_report}};
    for (const auto& [name, fn] : cmds) app.add_subcommand(name)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const std::string sub = app.get_subcommands()[0]->get_name();
    RunDir rd;
    rd.out = out_dir;
    try {
        json cfg = load_config(config_path);
        check_keys(cfg, "config",
                   {"out", "seed", "gen_data", "pretrain_base", "pretrain_ctx", "concept",
                    "customize", "generate", "analyze", "verify_bounds", "sweep", "report"});
        if (cfg.contains("out") && out_dir == "runs/default")
            out_dir = cfg.at("out").get<std::string>();
        if (!seed_set) seed = get_or<int64_t>(cfg, "seed", 0);
        cfg["out"] = out_dir;
        cfg["seed"] = seed;
        rd.out = out_dir;
        rd.ensure();
        write_manifest(rd, sub, cfg);
        return cmds.at(sub)(rd, cfg, static_cast<uint64_t>(seed));
    } catch (const ConfigError& e) {
        write_text(rd.out.empty() ? fs::path("error.json") : rd.out / "error.json",
                   json{{"code", 2}, {"error", e.what()}}.dump() + "\n");
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DependencyError& e) {
        write_text(rd.out.empty() ? fs::path("error.json") : rd.out / "error.json",
                   json{{"code", 3}, {"error", e.what()}}.dump() + "\n");
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        write_text(rd.out.empty() ? fs::path("error.json") : rd.out / "error.json",
                   json{{"code", 4}, {"error", e.what()}}.dump() + "\n");
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
