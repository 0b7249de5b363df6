#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "microcustom/analysis.hpp"
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
    return BaseModel<float>::fresh(seed, ec, dc);
}

}  // namespace

TEST_CASE("cosine: parallel, orthogonal, anti-parallel, degenerate") {
    CHECK(cosine({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine({1, 1}, {-1, -1}) == doctest::Approx(-1.0));
    CHECK(cosine({0, 0}, {1, 2}) == 0.0);
}

TEST_CASE("mean_std oracle: known sample mean and Bessel-corrected stddev") {
    const MeanStd ms = mean_std({1.0, 2.0, 3.0, 4.0});
    CHECK(ms.n == 4);
    CHECK(ms.mean == doctest::Approx(2.5));
    CHECK(ms.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(mean_std({7.0}).stddev == 0.0);
    CHECK(mean_std({}).n == 0);
}

TEST_CASE("nth_position_of locates repeated words by occurrence") {
    const Vocab v = Vocab::build_default();
    const PromptTokens p = v.tokenize("a picture of grass on grass");
    CHECK(nth_position_of(v, p, "grass", 0) == 4);
    CHECK(nth_position_of(v, p, "grass", 1) == 6);
    CHECK(nth_position_of(v, p, "grass", 2) == -1);
    CHECK(nth_position_of(v, p, "snow", 0) == -1);
}

TEST_CASE("symmetric KL: identity, hand value, scale invariance, symmetry, guards") {
    CHECK(skl_cross_attention({0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}) == doctest::Approx(0.0));
    // 0.5*(KL([.5,.5]||[.9,.1]) + KL([.9,.1]||[.5,.5])) = 0.43944492...
    CHECK(skl_cross_attention({0.5, 0.5}, {0.9, 0.1}) == doctest::Approx(0.4394449155).epsilon(1e-8));
    // inputs are masses, not distributions: scaling must not matter
    CHECK(skl_cross_attention({5.0, 5.0}, {0.09, 0.01}) ==
          doctest::Approx(skl_cross_attention({0.5, 0.5}, {0.9, 0.1})));
    CHECK(skl_cross_attention({0.5, 0.5}, {0.9, 0.1}) ==
          doctest::Approx(skl_cross_attention({0.9, 0.1}, {0.5, 0.5})));
    CHECK_THROWS(skl_cross_attention({0.5, 0.5}, {0.5}));
    CHECK_THROWS(skl_cross_attention({-0.1, 1.1}, {0.5, 0.5}));
    CHECK_THROWS(skl_cross_attention({0.0, 0.0}, {0.5, 0.5}));
}

TEST_CASE("sim pair: bounded values, identical-row degenerate case, misalignment errors") {
    BaseModel<float> m = tiny_model();
    Rng rng(1);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row", "copy-of-class-word", "circle", rng);
    const auto prompts = build_rich_prompt_set("[v]", "circle");
    const SimReport r = concept_context_similarity(m, "concept.row", prompts);
    CHECK(r.sim1.n == static_cast<int>(prompts.size()));
    CHECK(std::abs(r.sim1.mean) <= 1.0);
    CHECK(std::abs(r.sim2.mean) <= 1.0);
    CHECK(r.sim1.stddev >= 0.0);

    RichPrompt bogus = prompts[0];
    bogus.head_noun = "snow";  // not present in this prompt
    if (bogus.text.find("snow") == std::string::npos)
        CHECK_THROWS(sim_pair_for_prompt(m, "concept.row", bogus));
    RichPrompt noconcept = prompts[0];
    noconcept.text = noconcept.twin_text;  // concept token absent
    CHECK_THROWS(sim_pair_for_prompt(m, "concept.row", noconcept));
}

TEST_CASE("skl_for_prompt: nonnegative, deterministic, zero against itself") {
    BaseModel<float> m = tiny_model();
    Rng rng(1);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row", "copy-of-class-word", "circle", rng);
    const auto prompts = build_rich_prompt_set("[v]", "circle");
    SampleOptions opt;
    opt.steps = 4;
    opt.seed = 9;
    const double d1 = skl_for_prompt(m, "concept.row", prompts[0], opt);
    const double d2 = skl_for_prompt(m, "concept.row", prompts[0], opt);
    CHECK(d1 >= 0.0);
    CHECK(d1 == d2);
}

TEST_CASE("eval prompt grid: 3 backgrounds x 3 positions, plain style, valid text") {
    BaseModel<float> m = tiny_model();
    const ConceptDef def{Shape::Triangle, 4, Texture::Dotted, 3};
    const auto eps = build_eval_prompts(m, def, "[v]", "triangle");
    REQUIRE(eps.size() == 9);
    std::set<int> bgs;
    std::set<int> poss;
    for (const auto& ep : eps) {
        bgs.insert(ep.spec.background);
        poss.insert(static_cast<int>(ep.spec.position));
        CHECK(ep.spec.shape == Shape::Triangle);
        CHECK(ep.spec.color == 4);
        CHECK(ep.spec.texture == Texture::Dotted);
        CHECK(ep.spec.style == Style::Plain);
        CHECK(ep.tokens.concept_positions.size() == 1);
    }
    CHECK(bgs == std::set<int>{3, 5, 0});  // def.background, +2, +5 mod 8
    CHECK(poss.size() == 3);
}

TEST_CASE("prompt fidelity: counts every image, scores stay in [0,1]") {
    BaseModel<float> m = tiny_model();
    Rng rng(1);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row", "copy-of-class-word", "circle", rng);
    const auto eps = build_eval_prompts(m, ConceptDef{Shape::Circle, 2, Texture::Solid, 1},
                                        "[v]", "circle");
    SampleOptions opt;
    opt.steps = 2;
    opt.seed = 5;
    const FidelityReport r = prompt_fidelity(m, eps, 1, opt, {{"concept.row", eps[0].tokens.concept_positions}});
    CHECK(r.n_images == 9);
    for (double v : {r.background, r.position, r.style, r.mean}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(r.mean == doctest::Approx((r.background + r.position + r.style) / 3.0));
}

TEST_CASE("estimate_foreground recovers the renderer's mask on clean scenes") {
    Rng rng(31);
    for (int k = 0; k < 20; ++k) {
        SceneSpec s;
        s.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
        s.color = static_cast<int>(rng.uniform_int(kNumColors));
        s.texture = static_cast<Texture>(rng.uniform_int(kNumTextures));
        s.background = static_cast<int>(rng.uniform_int(kNumBackgrounds));
        s.position = static_cast<Position>(rng.uniform_int(kNumPositions));
        s.style = Style::Plain;
        const SpriteImage img = render_scene(s, 1000 + static_cast<uint64_t>(k));
        const auto est = estimate_foreground(img);
        int inter = 0, uni = 0;
        for (size_t i = 0; i < est.size(); ++i) {
            const bool a = est[i] != 0, b = img.foreground_mask[i] != 0;
            inter += a && b;
            uni += a || b;
        }
        REQUIRE(uni > 0);
        CHECK(static_cast<double>(inter) / uni > 0.6);
    }
}

TEST_CASE("subject features: hand oracle on a synthetic square") {
    SpriteImage img;
    std::vector<uint8_t> mask(kImageSize * kImageSize, 0);
    // 8x8 red square at rows/cols 12..19
    for (int y = 12; y < 20; ++y)
        for (int x = 12; x < 20; ++x) {
            img.px(y, x, 0) = 0.8f;
            mask[static_cast<size_t>(y * kImageSize + x)] = 1;
        }
    const auto f = subject_features(img, mask);
    REQUIRE(f.size() == 8);
    CHECK(f[0] == doctest::Approx(0.8));          // mean R
    CHECK(f[1] == doctest::Approx(0.0));          // mean G
    CHECK(f[3] == doctest::Approx(64.0 / 1024));  // area fraction
    CHECK(f[4] == doctest::Approx(f[5]));          // symmetric spread
    CHECK(f[6] == doctest::Approx(0.5));           // zero covariance, shifted
    CHECK(f[7] == doctest::Approx(0.0));           // not dark (lum 0.267)
    CHECK(subject_features(img, std::vector<uint8_t>(kImageSize * kImageSize, 0)).empty());
}

TEST_CASE("prop 1 bound holds over random near-one-hot attention rows") {
    Rng rng(41);
    int tested = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(5));
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        const int jstar = static_cast<int>(rng.uniform_int(n));
        const double delta = rng.uniform() * 0.3;
        Tensor<double> A({3, n}), V({n, d});
        for (auto& v : V.data) v = rng.normal() * 2.0;
        for (int64_t i = 0; i < 3; ++i) {
            // mass delta' <= delta spread over the other columns
            const double dp = rng.uniform() * delta;
            std::vector<double> w(static_cast<size_t>(n), 0.0);
            double s = 0;
            for (int j = 0; j < n; ++j)
                if (j != jstar) s += w[static_cast<size_t>(j)] = rng.uniform();
            for (int j = 0; j < n; ++j)
                A.at(i, j) = j == jstar ? 1.0 - dp : (s > 0 ? dp * w[static_cast<size_t>(j)] / s : 0.0);
        }
        const BoundReport r = verify_prop1(A, V, jstar, delta);
        CHECK(r.holds);
        CHECK(r.violations == 0);
        tested += r.tested;
        if (r.tested > 0) CHECK(r.min_margin >= -1e-6);
    }
    CHECK(tested > 2000);
}

TEST_CASE("prop 1 skips rows outside the near-one-hot hypothesis") {
    Tensor<double> A({2, 3}), V({3, 2});
    A.data = {0.5, 0.3, 0.2,   // far from one-hot: skipped
              0.99, 0.005, 0.005};
    V.data = {1, 0, 0, 1, 1, 1};
    const BoundReport r = verify_prop1(A, V, 0, 0.02);
    CHECK(r.skipped == 1);
    CHECK(r.tested == 1);
    CHECK(r.holds);
}

TEST_CASE("prop 3 bound holds over random instances and is near-tight for aligned ones") {
    Rng rng(43);
    double best_ratio = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int nq = 2 + static_cast<int>(rng.uniform_int(6));
        const int dk = 2 + static_cast<int>(rng.uniform_int(4));
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        Tensor<double> Q({nq, dk}), WK({d, dk});
        for (auto& v : Q.data) v = rng.normal();
        for (auto& v : WK.data) v = rng.normal();
        std::vector<double> ci(static_cast<size_t>(d)), cj(static_cast<size_t>(d));
        for (auto& v : ci) v = rng.normal();
        for (auto& v : cj) v = rng.normal();
        const BoundReport r = verify_prop3(Q, WK, ci, cj);
        CHECK(r.holds);
        CHECK(r.worst_ratio <= 1.0 + 1e-5);
        best_ratio = std::max(best_ratio, r.worst_ratio);
    }
    // rank-1 aligned construction achieves the Cauchy-Schwarz bound
    Tensor<double> Q({1, 2}), WK({2, 2});
    Q.data = {3.0, 0.0};
    WK.data = {2.0, 0.0, 0.0, 0.0};  // only the first row/col active
    const BoundReport tight = verify_prop3(Q, WK, {1.0, 0.0}, {0.0, 0.0});
    CHECK(tight.worst_ratio == doctest::Approx(1.0));
    CHECK(tight.holds);
    CHECK_THROWS(verify_prop3(Q, WK, {1.0}, {0.0, 0.0}));
}

TEST_CASE("prop 2 on a quadratic oracle: bound holds at the optimum, gate trips away from it") {
    const std::vector<double> target = {1.0, -2.0, 0.5};
    auto f = [&](const std::vector<double>& x) {
        double s = 0;
        for (size_t i = 0; i < x.size(); ++i) s += 0.5 * (x[i] - target[i]) * (x[i] - target[i]);
        return s;
    };
    auto g = [&](const std::vector<double>& x) {
        std::vector<double> out(x.size());
        for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - target[i];
        return out;
    };
    Rng rng(47);
    const std::vector<double> cb = {1.3, -1.8, 0.6};
    const BoundReport r = verify_prop2(f, g, cb, target, rng);
    CHECK(r.hypothesis_met);       // gradient at the optimum is zero
    CHECK(r.delta_g == doctest::Approx(0.0));
    CHECK(r.kappa == doctest::Approx(1.0).epsilon(1e-4));  // unit curvature
    CHECK(r.holds);                 // lhs = 0.5 d^2 <= kappa d^2
    CHECK(r.min_margin > 0.0);

    // far from the optimum the small-perturbation hypothesis fails
    Rng rng2(53);
    const BoundReport far = verify_prop2(f, g, cb, {10.0, 10.0, 10.0}, rng2);
    CHECK_FALSE(far.hypothesis_met);
    CHECK(far.violations == 0);  // bound only asserted under the hypothesis
}

TEST_CASE("subject_fidelity guards and bounded output") {
    BaseModel<float> m = tiny_model();
    Rng rng(1);
    m.enc.add_concept_row(m.vocab, "[v]", "concept.row", "copy-of-class-word", "circle", rng);
    const auto imgs = build_concept_set({Shape::Circle, 2, Texture::Solid, 1}, 2, 5);
    const auto eps = build_eval_prompts(m, ConceptDef{Shape::Circle, 2, Texture::Solid, 1},
                                        "[v]", "circle");
    SampleOptions opt;
    opt.steps = 2;
    opt.seed = 7;
    const std::vector<EvalPrompt> two(eps.begin(), eps.begin() + 2);
    const SubjectFidelityReport r =
        subject_fidelity(m, imgs, two, 1, opt, {{"concept.row", eps[0].tokens.concept_positions}});
    CHECK(r.n_pairs == 2);
    CHECK(r.masked <= 1.0 + 1e-9);
    CHECK(r.whole <= 1.0 + 1e-9);
    CHECK_THROWS(subject_fidelity(m, {}, two, 1, opt, {}));
}
