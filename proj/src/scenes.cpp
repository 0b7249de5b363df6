#include "microcustom/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mc {

namespace {

constexpr int kN = kImageSize;
constexpr float kAreaLo = 0.21f;  // renderer targets, inside the [0.2, 0.6] contract
constexpr float kAreaHi = 0.59f;

const Rgb kBlack{0.0f, 0.0f, 0.0f};

float dist2(const Rgb& a, const Rgb& b) {
    const float dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
    return dr * dr + dg * dg + db * db;
}

// Point-in-shape membership at unit scale s, centered at origin.
bool in_shape(Shape shape, float dx, float dy, float s) {
    switch (shape) {
        case Shape::Circle:
            return dx * dx + dy * dy <= s * s;
        case Shape::Square:
            return std::fabs(dx) <= 0.886f * s && std::fabs(dy) <= 0.886f * s;
        case Shape::Triangle: {
            // vertices (0,-1.35s), (-1.16s, 0.95s), (1.16s, 0.95s)
            const float x0 = 0.0f, y0 = -1.35f * s;
            const float x1 = -1.16f * s, y1 = 0.95f * s;
            const float x2 = 1.16f * s, y2 = 0.95f * s;
            auto side = [&](float ax, float ay, float bx, float by) {
                return (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
            };
            const float d0 = side(x0, y0, x1, y1);
            const float d1 = side(x1, y1, x2, y2);
            const float d2 = side(x2, y2, x0, y0);
            const bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            const bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(neg && pos);
        }
        case Shape::Star: {
            // 5-point star: boundary radius alternates between R and r_in
            const float R = 1.32f * s, rin = 0.78f * s;
            const float rad = std::sqrt(dx * dx + dy * dy);
            if (rad > R) return false;
            if (rad <= rin * 0.809f) return true;  // inscribed-polygon fast path
            float th = std::atan2(dy, dx) + 1.5707963f;  // point up
            const float sector = 0.62831853f;            // 2*pi/10
            float u = std::fmod(th, 2 * sector);
            if (u < 0) u += 2 * sector;
            const float frac = std::fabs(u - sector) / sector;  // 0 at spike tip, 1 at valley
            const float rb = R + (rin - R) * frac;
            return rad <= rb;
        }
        case Shape::Cross:
            return (std::fabs(dx) <= 0.42f * s && std::fabs(dy) <= 1.28f * s) ||
                   (std::fabs(dy) <= 0.42f * s && std::fabs(dx) <= 1.28f * s);
    }
    return false;
}

int position_cx(Position p) {
    switch (p) {
        case Position::Left: return 10;
        case Position::Center: return 16;
        case Position::Right: return 22;
    }
    return 16;
}

std::vector<uint8_t> rasterize(Shape shape, Style style, float cx, float cy, float s) {
    std::vector<uint8_t> mask(kN * kN, 0);
    const float inner = style == Style::Outline ? 0.55f * s : -1.0f;
    for (int y = 0; y < kN; ++y)
        for (int x = 0; x < kN; ++x) {
            const float dx = static_cast<float>(x) + 0.5f - cx;
            const float dy = static_cast<float>(y) + 0.5f - cy;
            if (!in_shape(shape, dx, dy, s)) continue;
            if (inner > 0 && in_shape(shape, dx, dy, inner)) continue;
            mask[y * kN + x] = 1;
        }
    return mask;
}

}  // namespace

const std::array<std::string, kNumShapes>& shape_names() {
    static const std::array<std::string, kNumShapes> v{"circle", "square", "triangle", "star", "cross"};
    return v;
}
const std::array<std::string, kNumColors>& color_names() {
    static const std::array<std::string, kNumColors> v{"red",    "green", "blue", "yellow",
                                                       "purple", "orange", "pink", "cyan"};
    return v;
}
const std::array<std::string, kNumTextures>& texture_names() {
    static const std::array<std::string, kNumTextures> v{"solid", "striped", "dotted"};
    return v;
}
const std::array<std::string, kNumBackgrounds>& background_names() {
    static const std::array<std::string, kNumBackgrounds> v{"grass", "snow", "water", "sand",
                                                            "asphalt", "sky", "soil", "brick"};
    return v;
}
const std::array<std::string, kNumPositions>& position_names() {
    static const std::array<std::string, kNumPositions> v{"left", "center", "right"};
    return v;
}
const std::array<std::string, kNumStyles>& style_names() {
    static const std::array<std::string, kNumStyles> v{"plain", "inverted", "outline"};
    return v;
}

const std::array<Rgb, kNumColors>& color_palette() {
    static const std::array<Rgb, kNumColors> v{{{1.00f, 0.00f, 0.00f},
                                                {0.00f, 1.00f, 0.00f},
                                                {0.00f, 0.00f, 1.00f},
                                                {1.00f, 1.00f, 0.00f},
                                                {0.60f, 0.00f, 1.00f},
                                                {1.00f, 0.55f, 0.00f},
                                                {1.00f, 0.45f, 0.75f},
                                                {0.00f, 1.00f, 1.00f}}};
    return v;
}
const std::array<Rgb, kNumBackgrounds>& background_palette() {
    static const std::array<Rgb, kNumBackgrounds> v{{{0.00f, 0.45f, 0.00f},
                                                     {0.95f, 0.95f, 0.95f},
                                                     {0.00f, 0.30f, 0.60f},
                                                     {0.80f, 0.70f, 0.45f},
                                                     {0.22f, 0.22f, 0.25f},
                                                     {0.45f, 0.70f, 1.00f},
                                                     {0.30f, 0.20f, 0.05f},
                                                     {0.60f, 0.12f, 0.10f}}};
    return v;
}

SpriteImage render_scene(const SceneSpec& spec, uint64_t seed) {
    Rng rng(hash_combine(seed, 0x5ce11e5u));
    const float cx = static_cast<float>(position_cx(spec.position)) +
                     static_cast<float>(rng.uniform_int(3)) - 1.0f;
    const float cy = 16.0f + static_cast<float>(rng.uniform_int(5)) - 2.0f;
    float s = 8.6f + static_cast<float>(rng.uniform()) * 0.8f;
    if (spec.style == Style::Outline) s += 2.5f;

    std::vector<uint8_t> mask;
    // bounded corrective loop keeps the subject in the 20-60% area band
    for (int it = 0; it < 12; ++it) {
        mask = rasterize(spec.shape, spec.style, cx, cy, s);
        const int area = static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t(1)));
        const float frac = static_cast<float>(area) / (kN * kN);
        if (frac < kAreaLo) s += 0.5f;
        else if (frac > kAreaHi) s -= 0.5f;
        else break;
    }

    SpriteImage img;
    const Rgb bg = background_palette()[spec.background];
    const Rgb fg = color_palette()[spec.color];
    const int icx = static_cast<int>(cx), icy = static_cast<int>(cy);
    for (int y = 0; y < kN; ++y)
        for (int x = 0; x < kN; ++x) {
            Rgb c = bg;
            if (mask[y * kN + x]) {
                c = fg;
                if (spec.texture == Texture::Striped && (((y - icy) % 4 + 4) % 4 < 2)) c = kBlack;
                if (spec.texture == Texture::Dotted && (((y - icy) % 4 + 4) % 4 < 2) &&
                    (((x - icx) % 4 + 4) % 4 < 2))
                    c = kBlack;
            }
            if (spec.style == Style::Inverted) c = {1.0f - c.r, 1.0f - c.g, 1.0f - c.b};
            img.px(y, x, 0) = c.r;
            img.px(y, x, 1) = c.g;
            img.px(y, x, 2) = c.b;
            img.foreground_mask[y * kN + x] = mask[y * kN + x];
        }
    return img;
}

std::string caption_of(const SceneSpec& spec) {
    return "a " + texture_names()[static_cast<int>(spec.texture)] + " " +
           color_names()[spec.color] + " " + shape_names()[static_cast<int>(spec.shape)] + " on " +
           background_names()[spec.background] + " at " +
           position_names()[static_cast<int>(spec.position)] + " in " +
           style_names()[static_cast<int>(spec.style)] + " style";
}

namespace {
template <size_t N>
int index_of(const std::array<std::string, N>& names, const std::string& w, const char* what) {
    for (size_t i = 0; i < N; ++i)
        if (names[i] == w) return static_cast<int>(i);
    throw std::runtime_error(std::string("parse_caption: unknown ") + what + " '" + w + "'");
}
}  // namespace

SceneSpec parse_caption(const std::string& caption) {
    std::vector<std::string> w;
    std::string cur;
    for (char c : caption) {
        if (c == ' ') {
            if (!cur.empty()) w.push_back(cur);
            cur.clear();
        } else
            cur += c;
    }
    if (!cur.empty()) w.push_back(cur);
    // a <texture> <color> <shape> on <bg> at <pos> in <style> style
    if (w.size() != 11 || w[0] != "a" || w[4] != "on" || w[6] != "at" || w[8] != "in" ||
        w[10] != "style")
        throw std::runtime_error("parse_caption: malformed caption '" + caption + "'");
    SceneSpec s;
    s.texture = static_cast<Texture>(index_of(texture_names(), w[1], "texture"));
    s.color = index_of(color_names(), w[2], "color");
    s.shape = static_cast<Shape>(index_of(shape_names(), w[3], "shape"));
    s.background = index_of(background_names(), w[5], "background");
    s.position = static_cast<Position>(index_of(position_names(), w[7], "position"));
    s.style = static_cast<Style>(index_of(style_names(), w[9], "style"));
    return s;
}

namespace {

struct PixelClass {
    bool is_bg = false;
    bool is_black = false;
    int color_idx = -1;
};

// Classify a pixel against: the resolved background color, black, and the
// eight subject colors.
PixelClass classify(const Rgb& p, const Rgb& bg) {
    PixelClass out;
    float best = dist2(p, bg);
    int label = -2;  // -2 bg, -1 black, >=0 color
    const float dblack = dist2(p, kBlack);
    if (dblack < best) {
        best = dblack;
        label = -1;
    }
    for (int i = 0; i < kNumColors; ++i) {
        const float d = dist2(p, color_palette()[i]);
        if (d < best) {
            best = d;
            label = i;
        }
    }
    if (label == -2) out.is_bg = true;
    else if (label == -1) out.is_black = true;
    else out.color_idx = label;
    return out;
}

}  // namespace

SceneEstimate estimate_scene(const SpriteImage& img) {
    SceneEstimate est;

    // 1. background + style=inverted hypothesis: each border pixel votes for
    // its nearest (background, inverted?) pair; subject/outline pixels on the
    // border land far from every hypothesis and carry little weight
    std::array<float, 2 * kNumBackgrounds> vote_score{};
    for (int y = 0; y < kN; ++y)
        for (int x = 0; x < kN; ++x) {
            if (y > 1 && y < kN - 2 && x > 1 && x < kN - 2) continue;
            const Rgb p{img.px(y, x, 0), img.px(y, x, 1), img.px(y, x, 2)};
            int best = 0;
            float bd = 1e9f;
            for (int i = 0; i < kNumBackgrounds; ++i) {
                const Rgb b = background_palette()[i];
                const float dp = dist2(p, b);
                const float di = dist2(p, {1 - b.r, 1 - b.g, 1 - b.b});
                if (dp < bd) { bd = dp; best = i; }
                if (di < bd) { bd = di; best = kNumBackgrounds + i; }
            }
            if (bd < 0.02f) vote_score[static_cast<size_t>(best)] += 1.0f;
        }
    int best_hyp = 0;
    for (int i = 1; i < 2 * kNumBackgrounds; ++i)
        if (vote_score[static_cast<size_t>(i)] > vote_score[static_cast<size_t>(best_hyp)])
            best_hyp = i;
    const int best_bg = best_hyp % kNumBackgrounds;
    const bool inverted = best_hyp >= kNumBackgrounds;
    est.guess.background = best_bg;
    const Rgb bg = background_palette()[best_bg];

    // 2. per-pixel classification on the de-inverted image
    std::vector<PixelClass> cls(kN * kN);
    std::vector<uint8_t> fgm(kN * kN, 0);
    std::array<int, kNumColors> color_votes{};
    int n_fg = 0, n_black = 0;
    for (int y = 0; y < kN; ++y)
        for (int x = 0; x < kN; ++x) {
            Rgb p{img.px(y, x, 0), img.px(y, x, 1), img.px(y, x, 2)};
            if (inverted) p = {1 - p.r, 1 - p.g, 1 - p.b};
            cls[y * kN + x] = classify(p, bg);
            if (!cls[y * kN + x].is_bg) {
                fgm[y * kN + x] = 1;
                ++n_fg;
                if (cls[y * kN + x].is_black) ++n_black;
                else ++color_votes[cls[y * kN + x].color_idx];
            }
        }
    if (n_fg < 40) return est;  // degenerate: all background
    est.has_subject = true;

    // 3. subject color by majority vote over non-black foreground
    int best_color = 0;
    for (int i = 1; i < kNumColors; ++i)
        if (color_votes[i] > color_votes[best_color]) best_color = i;
    est.guess.color = best_color;

    // 4. position from foreground centroid
    float cx = 0, cy = 0;
    for (int y = 0; y < kN; ++y)
        for (int x = 0; x < kN; ++x)
            if (fgm[y * kN + x]) {
                cx += static_cast<float>(x) + 0.5f;
                cy += static_cast<float>(y) + 0.5f;
            }
    cx /= static_cast<float>(n_fg);
    cy /= static_cast<float>(n_fg);
    est.guess.position = cx < 13.0f ? Position::Left : (cx < 19.0f ? Position::Center : Position::Right);

    // 5. texture: black fraction, then horizontal run length of black pixels
    const float black_frac = static_cast<float>(n_black) / static_cast<float>(n_fg);
    if (black_frac < 0.10f) {
        est.guess.texture = Texture::Solid;
    } else {
        double run_sum = 0;
        int run_count = 0;
        for (int y = 0; y < kN; ++y) {
            int run = 0;
            for (int x = 0; x <= kN; ++x) {
                const bool b = x < kN && fgm[y * kN + x] && cls[y * kN + x].is_black;
                if (b) ++run;
                else if (run > 0) {
                    run_sum += run;
                    ++run_count;
                    run = 0;
                }
            }
        }
        const double mean_run = run_count ? run_sum / run_count : 0.0;
        est.guess.texture = mean_run >= 3.5 ? Texture::Striped : Texture::Dotted;
    }

    // 6. style: inversion beats everything; else ring test (hollow core)
    if (inverted) {
        est.guess.style = Style::Inverted;
    } else {
        // fraction of a small core window around the centroid that is foreground
        int core = 0, core_fg = 0;
        for (int y = 0; y < kN; ++y)
            for (int x = 0; x < kN; ++x) {
                if (std::fabs(static_cast<float>(x) + 0.5f - cx) > 3.0f) continue;
                if (std::fabs(static_cast<float>(y) + 0.5f - cy) > 3.0f) continue;
                ++core;
                if (fgm[y * kN + x]) ++core_fg;
            }
        est.guess.style =
            (core > 0 && static_cast<float>(core_fg) / core < 0.35f) ? Style::Outline : Style::Plain;
    }

    // 7. shape: best IoU against canonical masks rendered at the estimated
    // centroid and scale. Outline rings are first filled (exterior flood
    // fill) so the area-based scale estimate applies to the full silhouette.
    std::vector<uint8_t> shape_mask = fgm;
    if (est.guess.style == Style::Outline) {
        std::vector<uint8_t> outside(kN * kN, 0);
        std::vector<int> stack;
        auto push = [&](int y, int x) {
            if (y < 0 || y >= kN || x < 0 || x >= kN) return;
            const int i = y * kN + x;
            if (outside[i] || fgm[i]) return;
            outside[i] = 1;
            stack.push_back(i);
        };
        for (int i = 0; i < kN; ++i) {
            push(0, i); push(kN - 1, i); push(i, 0); push(i, kN - 1);
        }
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            const int y = i / kN, x = i % kN;
            push(y - 1, x); push(y + 1, x); push(y, x - 1); push(y, x + 1);
        }
        for (int i = 0; i < kN * kN; ++i) shape_mask[i] = outside[i] ? 0 : 1;
        // recentre on the filled silhouette
        float scx = 0, scy = 0;
        int sn = 0;
        for (int y = 0; y < kN; ++y)
            for (int x = 0; x < kN; ++x)
                if (shape_mask[y * kN + x]) {
                    scx += static_cast<float>(x) + 0.5f;
                    scy += static_cast<float>(y) + 0.5f;
                    ++sn;
                }
        if (sn > 0) {
            cx = scx / static_cast<float>(sn);
            cy = scy / static_cast<float>(sn);
        }
    }
    int n_shape = 0;
    for (int i = 0; i < kN * kN; ++i) n_shape += shape_mask[i] != 0;
    const float scale = std::sqrt(static_cast<float>(n_shape) / 3.1415926f);
    float best_iou = -1.0f;
    int best_shape = 0;
    for (int sh = 0; sh < kNumShapes; ++sh) {
        for (float fs : {0.88f, 1.0f, 1.12f}) {
            const auto tmpl = rasterize(static_cast<Shape>(sh), Style::Plain, cx, cy, scale * fs);
            int inter = 0, uni = 0;
            for (int i = 0; i < kN * kN; ++i) {
                const bool a = shape_mask[i] != 0, b = tmpl[i] != 0;
                if (a && b) ++inter;
                if (a || b) ++uni;
            }
            const float iou = uni ? static_cast<float>(inter) / uni : 0.0f;
            if (iou > best_iou) {
                best_iou = iou;
                best_shape = sh;
            }
        }
    }
    est.guess.shape = static_cast<Shape>(best_shape);
    return est;
}

AttributeMatch attribute_match(const SpriteImage& img, const SceneSpec& spec) {
    const SceneEstimate est = estimate_scene(img);
    AttributeMatch m;
    m.background = est.guess.background == spec.background;
    if (!est.has_subject) return m;  // all subject attributes stay false
    m.color = est.guess.color == spec.color;
    m.shape = est.guess.shape == spec.shape;
    m.texture = est.guess.texture == spec.texture;
    m.position = est.guess.position == spec.position;
    m.style = est.guess.style == spec.style;
    return m;
}

std::vector<SceneSpec> all_scene_specs() {
    std::vector<SceneSpec> out;
    out.reserve(8640);
    for (int sh = 0; sh < kNumShapes; ++sh)
        for (int c = 0; c < kNumColors; ++c)
            for (int t = 0; t < kNumTextures; ++t)
                for (int b = 0; b < kNumBackgrounds; ++b)
                    for (int p = 0; p < kNumPositions; ++p)
                        for (int st = 0; st < kNumStyles; ++st)
                            out.push_back(SceneSpec{static_cast<Shape>(sh), c, static_cast<Texture>(t),
                                                    b, static_cast<Position>(p),
                                                    static_cast<Style>(st)});
    return out;
}

namespace {
SceneSpec random_spec(Rng& rng) {
    SceneSpec s;
    s.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
    s.color = static_cast<int>(rng.uniform_int(kNumColors));
    s.texture = static_cast<Texture>(rng.uniform_int(kNumTextures));
    s.background = static_cast<int>(rng.uniform_int(kNumBackgrounds));
    s.position = static_cast<Position>(rng.uniform_int(kNumPositions));
    s.style = static_cast<Style>(rng.uniform_int(kNumStyles));
    return s;
}
}  // namespace

std::vector<CaptionedImage> build_pretraining_corpus(int64_t n, uint64_t seed) {
    if (n < 0) throw std::runtime_error("build_pretraining_corpus: negative count");
    Rng rng(seed);
    std::vector<CaptionedImage> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        CaptionedImage item;
        item.spec = random_spec(rng);
        item.image = render_scene(item.spec, rng.next_u64());
        item.caption = caption_of(item.spec);
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<SpriteImage> build_concept_set(const ConceptDef& def, int k, uint64_t seed) {
    if (k < 1 || k > 8) throw std::runtime_error("build_concept_set: k must be in [1,8]");
    Rng rng(seed);
    std::vector<SpriteImage> out;
    for (int i = 0; i < k; ++i) {
        SceneSpec s;
        s.shape = def.shape;
        s.color = def.color;
        s.texture = def.texture;
        s.background = def.background;
        s.position = static_cast<Position>(rng.uniform_int(kNumPositions));
        s.style = Style::Plain;
        out.push_back(render_scene(s, rng.next_u64()));
    }
    return out;
}

void save_dataset(const std::string& dir, const std::vector<CaptionedImage>& items) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream idx(dir + "/dataset.jsonl");
    std::ofstream blob(dir + "/images.bin", std::ios::binary);
    if (!idx || !blob) throw std::runtime_error("save_dataset: cannot open output files");
    uint64_t offset = 0;
    for (const auto& it : items) {
        nlohmann::json rec;
        rec["caption"] = it.caption;
        rec["shape"] = static_cast<int>(it.spec.shape);
        rec["color"] = it.spec.color;
        rec["texture"] = static_cast<int>(it.spec.texture);
        rec["background"] = it.spec.background;
        rec["position"] = static_cast<int>(it.spec.position);
        rec["style"] = static_cast<int>(it.spec.style);
        rec["image"] = "images.bin";
        rec["offset"] = offset;
        idx << rec.dump() << "\n";
        blob.write(reinterpret_cast<const char*>(it.image.pixels.data.data()),
                   static_cast<std::streamsize>(it.image.pixels.data.size() * sizeof(float)));
        blob.write(reinterpret_cast<const char*>(it.image.foreground_mask.data()),
                   static_cast<std::streamsize>(it.image.foreground_mask.size()));
        offset += it.image.pixels.data.size() * sizeof(float) + it.image.foreground_mask.size();
    }
}

std::vector<CaptionedImage> load_dataset(const std::string& dir) {
    std::ifstream idx(dir + "/dataset.jsonl");
    std::ifstream blob(dir + "/images.bin", std::ios::binary);
    if (!idx || !blob) throw std::runtime_error("load_dataset: missing dataset files in " + dir);
    std::vector<CaptionedImage> out;
    std::string line;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line);
        CaptionedImage it;
        it.caption = rec["caption"].get<std::string>();
        it.spec.shape = static_cast<Shape>(rec["shape"].get<int>());
        it.spec.color = rec["color"].get<int>();
        it.spec.texture = static_cast<Texture>(rec["texture"].get<int>());
        it.spec.background = rec["background"].get<int>();
        it.spec.position = static_cast<Position>(rec["position"].get<int>());
        it.spec.style = static_cast<Style>(rec["style"].get<int>());
        blob.seekg(static_cast<std::streamoff>(rec["offset"].get<uint64_t>()));
        blob.read(reinterpret_cast<char*>(it.image.pixels.data.data()),
                  static_cast<std::streamsize>(it.image.pixels.data.size() * sizeof(float)));
        blob.read(reinterpret_cast<char*>(it.image.foreground_mask.data()),
                  static_cast<std::streamsize>(it.image.foreground_mask.size()));
        if (!blob) throw std::runtime_error("load_dataset: truncated image blob");
        out.push_back(std::move(it));
    }
    return out;
}

}  // namespace mc
