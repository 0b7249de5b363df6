#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "microcustom/tensor.hpp"

namespace mc {

constexpr int kImageSize = 32;

enum class Shape { Circle, Square, Triangle, Star, Cross };
enum class Texture { Solid, Striped, Dotted };
enum class Position { Left, Center, Right };
enum class Style { Plain, Inverted, Outline };

constexpr int kNumShapes = 5;
constexpr int kNumColors = 8;
constexpr int kNumTextures = 3;
constexpr int kNumBackgrounds = 8;
constexpr int kNumPositions = 3;
constexpr int kNumStyles = 3;

struct Rgb {
    float r, g, b;
};

const std::array<std::string, kNumShapes>& shape_names();
const std::array<std::string, kNumColors>& color_names();
const std::array<std::string, kNumTextures>& texture_names();
const std::array<std::string, kNumBackgrounds>& background_names();
const std::array<std::string, kNumPositions>& position_names();
const std::array<std::string, kNumStyles>& style_names();

const std::array<Rgb, kNumColors>& color_palette();
const std::array<Rgb, kNumBackgrounds>& background_palette();

struct SceneSpec {
    Shape shape = Shape::Circle;
    int color = 0;       // index into color_palette
    Texture texture = Texture::Solid;
    int background = 0;  // index into background_palette
    Position position = Position::Center;
    Style style = Style::Plain;

    bool operator==(const SceneSpec&) const = default;
};

struct SpriteImage {
    // H x W x 3, row-major, values in [0,1]
    Tensor<float> pixels{std::vector<int64_t>{kImageSize, kImageSize, 3}};
    // true exactly where the renderer drew the subject
    std::vector<uint8_t> foreground_mask = std::vector<uint8_t>(kImageSize * kImageSize, 0);

    float& px(int y, int x, int c) { return pixels.data[(y * kImageSize + x) * 3 + c]; }
    float px(int y, int x, int c) const { return pixels.data[(y * kImageSize + x) * 3 + c]; }
    bool fg(int y, int x) const { return foreground_mask[y * kImageSize + x] != 0; }
};

struct AttributeMatch {
    bool background = false;
    bool color = false;
    bool shape = false;
    bool texture = false;
    bool position = false;
    bool style = false;  // extra diagnostic beyond the five subject/context attributes
    bool all_five() const { return background && color && shape && texture && position; }
};

SpriteImage render_scene(const SceneSpec& spec, uint64_t seed);
std::string caption_of(const SceneSpec& spec);
SceneSpec parse_caption(const std::string& caption);

// What the matcher believes about an image; spec-independent.
struct SceneEstimate {
    bool has_subject = false;
    SceneSpec guess;
};
SceneEstimate estimate_scene(const SpriteImage& img);
AttributeMatch attribute_match(const SpriteImage& img, const SceneSpec& spec);

struct CaptionedImage {
    SceneSpec spec;
    SpriteImage image;
    std::string caption;
};

std::vector<CaptionedImage> build_pretraining_corpus(int64_t n, uint64_t seed);

// k views of one subject on a single fixed background, varying seed/position.
struct ConceptDef {
    Shape shape;
    int color;
    Texture texture;
    int background;  // the one minimal-context background
};
std::vector<SpriteImage> build_concept_set(const ConceptDef& def, int k, uint64_t seed);

// Enumerate every spec (8640 of them), in a fixed order.
std::vector<SceneSpec> all_scene_specs();

// Dataset persistence: JSONL records + raw f32 image/mask blobs.
void save_dataset(const std::string& dir, const std::vector<CaptionedImage>& items);
std::vector<CaptionedImage> load_dataset(const std::string& dir);

}  // namespace mc
