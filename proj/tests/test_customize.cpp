#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "microcustom/customize.hpp"

using namespace mc;

namespace {

BaseModel<float> tiny_model(uint64_t seed = 3) {
    EncoderConfig ec;
    ec.layers = 1;
    ec.d = 16;
    ec.heads = 2;
    DenoiserConfig dc;
    dc.ch0 = 8;
    dc.ch1 = 16;
    dc.heads = 2;
    dc.temb_width = 16;
    dc.text_dim = 16;
    BaseModel<float> m = BaseModel<float>::fresh(seed, ec, dc);
    m.ctx_ready = true;  // tests exercise the loop, not contextualizer quality
    return m;
}

std::vector<SpriteImage> tiny_concept_images() {
    return build_concept_set({Shape::Circle, 2, Texture::Solid, 1}, 3, 5);
}

CustomizeConfig tiny_config(Variant v) {
    CustomizeConfig cfg;
    cfg.variant = v;
    cfg.iterations = 4;
    cfg.diff_batch = 2;
    cfg.mlm_batch = 4;
    cfg.n_prior = 2;
    cfg.prior_steps = 2;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("variant names round-trip and junk is rejected") {
    for (Variant v : {Variant::TI, Variant::XTI, Variant::DB, Variant::CD})
        CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS(parse_variant("dreambooth"));
    CHECK_THROWS(parse_variant(""));
}

TEST_CASE("concept rows and trainable sets per variant") {
    BaseModel<float> m = tiny_model();
    Rng rng(1);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row", "copy-of-class-word", "circle", rng);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row0", "copy-of-class-word", "circle", rng);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row1", "copy-of-class-word", "circle", rng);
    m.enc.params.add("emb.mask_row", {1, m.enc.cfg.d});

    CHECK(concept_row_names(Variant::TI) == std::vector<std::string>{"concept.row"});
    CHECK(concept_row_names(Variant::XTI) ==
          (std::vector<std::string>{"concept.row0", "concept.row1"}));

    const TrainableSets ti = select_trainable(m, Variant::TI);
    CHECK(ti.enc == std::set<std::string>{"concept.row"});
    CHECK(ti.unet.empty());

    const TrainableSets xti = select_trainable(m, Variant::XTI);
    CHECK(xti.enc == (std::set<std::string>{"concept.row0", "concept.row1"}));
    CHECK(xti.unet.empty());

    const TrainableSets db = select_trainable(m, Variant::DB);
    CHECK(db.enc.count("concept.row") == 1);
    CHECK(db.enc.count("emb.table") == 1);
    CHECK(db.enc.count("emb.mask_row") == 0);   // psi's one encoder row stays frozen
    CHECK(db.enc.count("concept.row0") == 0);   // other variants' rows excluded
    CHECK(db.unet.size() == m.unet.params.names().size());

    const TrainableSets cd = select_trainable(m, Variant::CD);
    CHECK(cd.enc == std::set<std::string>{"concept.row"});
    for (const auto& n : cd.unet) {
        CHECK(n.rfind("cross", 0) == 0);
        CHECK((n.find(".attn.wk") != std::string::npos ||
               n.find(".attn.wv") != std::string::npos));
    }
    CHECK(cd.unet.count("cross0.attn.wk") == 1);
    CHECK(cd.unet.count("cross0.attn.wv") == 1);
    CHECK(cd.unet.count("cross0.attn.wq") == 0);
    CHECK(cd.unet.count("cross0.attn.wo") == 0);
}

TEST_CASE("config guards: bad lambda, missing contextualizer, empty inputs") {
    BaseModel<float> m = tiny_model();
    const auto imgs = tiny_concept_images();
    const auto prompts = build_rich_prompt_set("[v]", "circle");

    CustomizeConfig bad = tiny_config(Variant::TI);
    bad.lambda_mlm = -1.0;
    CHECK_THROWS(customize(m, imgs, prompts, bad));

    CHECK_THROWS(customize(m, {}, prompts, tiny_config(Variant::TI)));

    CustomizeConfig noprior = tiny_config(Variant::DB);
    noprior.n_prior = 0;
    CHECK_THROWS(customize(m, imgs, prompts, noprior));

    BaseModel<float> raw = tiny_model();
    raw.ctx_ready = false;
    CHECK_THROWS(customize(raw, imgs, prompts, tiny_config(Variant::TI)));
    CustomizeConfig off = tiny_config(Variant::TI);
    off.disable_mlm_branch = true;
    CHECK_NOTHROW(customize(raw, imgs, prompts, off));  // branch disabled: no ctx needed
}

TEST_CASE("lambda = 0 and disable_mlm_branch take the identical bitwise path") {
    const auto imgs = tiny_concept_images();
    const auto prompts = build_rich_prompt_set("[v]", "circle");
    auto run = [&](double lambda, bool disabled) {
        BaseModel<float> m = tiny_model();
        CustomizeConfig cfg = tiny_config(Variant::TI);
        cfg.lambda_mlm = lambda;
        cfg.disable_mlm_branch = disabled;
        const CustomizeResult r = customize(m, imgs, prompts, cfg);
        return std::make_pair(r, m.content_hash());
    };
    const auto [r0, h0] = run(0.0, false);
    const auto [rd, hd] = run(1e-4, true);
    CHECK(h0 == hd);
    REQUIRE(r0.losses.size() == rd.losses.size());
    for (size_t i = 0; i < r0.losses.size(); ++i) {
        CHECK(r0.losses[i].total == rd.losses[i].total);
        CHECK(r0.losses[i].mlm == 0.0);
        CHECK(rd.losses[i].mlm == 0.0);
    }
    // and an active MLM branch changes the trajectory
    const auto [ron, hon] = run(1e-2, false);
    CHECK(hon != h0);
}

TEST_CASE("logged rows satisfy total = diff + lambda * mlm") {
    BaseModel<float> m = tiny_model();
    CustomizeConfig cfg = tiny_config(Variant::TI);
    cfg.lambda_mlm = 3e-3;
    const CustomizeResult r =
        customize(m, tiny_concept_images(), build_rich_prompt_set("[v]", "circle"), cfg);
    REQUIRE(r.losses.size() == 4);
    for (const auto& row : r.losses) {
        CHECK(row.mlm > 0.0);
        CHECK(std::abs(row.total - (row.diff + cfg.lambda_mlm * row.mlm)) < 1e-6);
    }
}

TEST_CASE("freeze audits: psi and non-trainable weights never move") {
    const auto imgs = tiny_concept_images();
    const auto prompts = build_rich_prompt_set("[v]", "circle");

    for (Variant v : {Variant::TI, Variant::XTI, Variant::DB, Variant::CD}) {
        CAPTURE(variant_name(v));
        BaseModel<float> m = tiny_model();
        const uint64_t unet_before = m.unet.params.content_hash();
        const uint64_t psi_before = m.ctx.params.content_hash();
        std::map<std::string, uint64_t> unet_rows;
        for (const auto& n : m.unet.params.names()) unet_rows[n] = tensor_hash(m.unet.params.get(n));

        const CustomizeResult r = customize(m, imgs, prompts, tiny_config(v));
        CHECK(r.psi_hash_before == r.psi_hash_after);
        CHECK(r.frozen_hash_before == r.frozen_hash_after);
        CHECK(m.ctx.params.content_hash() == psi_before);

        const TrainableSets tr = select_trainable(m, v);
        if (tr.unet.empty()) {
            CHECK(m.unet.params.content_hash() == unet_before);
        } else {
            for (const auto& [n, h] : unet_rows)
                if (!tr.unet.count(n)) CHECK(tensor_hash(m.unet.params.get(n)) == h);
        }
    }
}

TEST_CASE("concept rows move away from their class-word initialization") {
    BaseModel<float> m = tiny_model();
    const int cid = m.vocab.id_of("circle");
    customize(m, tiny_concept_images(), build_rich_prompt_set("[v]", "circle"),
              tiny_config(Variant::TI));
    const Tensor<float>& row = m.enc.params.get("concept.row");
    const Tensor<float>& table = m.enc.params.get("emb.table");
    double diff = 0;
    for (int64_t j = 0; j < row.cols(); ++j)
        diff += std::abs(static_cast<double>(row.at(0, j)) - table.at(cid, j));
    CHECK(diff > 0.0);
}

TEST_CASE("customization is deterministic in the seed") {
    const auto imgs = tiny_concept_images();
    const auto prompts = build_rich_prompt_set("[v]", "circle");
    auto run = [&](uint64_t seed) {
        BaseModel<float> m = tiny_model();
        CustomizeConfig cfg = tiny_config(Variant::DB);
        cfg.seed = seed;
        const CustomizeResult r = customize(m, imgs, prompts, cfg);
        std::vector<double> totals;
        for (const auto& row : r.losses) totals.push_back(row.total);
        return std::make_pair(totals, m.content_hash());
    };
    const auto [t1, h1] = run(11);
    const auto [t2, h2] = run(11);
    CHECK(t1 == t2);
    CHECK(h1 == h2);
    const auto [t3, h3] = run(12);
    CHECK(h3 != h1);
}

TEST_CASE("XTI trains a distinct row per cross layer") {
    BaseModel<float> m = tiny_model();
    customize(m, tiny_concept_images(), build_rich_prompt_set("[v]", "circle"),
              tiny_config(Variant::XTI));
    CHECK(tensor_hash(m.enc.params.get("concept.row0")) !=
          tensor_hash(m.enc.params.get("concept.row1")));
}
