#include "microcustom/prompts.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "microcustom/scenes.hpp"

namespace mc {

const std::array<std::string, kNumPromptCategories>& prompt_category_names() {
    static const std::array<std::string, kNumPromptCategories> v{
        "human_interactive", "relative_position", "background", "image_style",
        "attributes_changing"};
    return v;
}

const std::array<PromptTemplate, kNumPromptCategories>& prompt_templates() {
    static const std::array<PromptTemplate, kNumPromptCategories> v{{
        {PromptCategory::HumanInteractive, "a {f} is playing with {c}"},
        {PromptCategory::RelativePosition, "a picture of {c} next to a {f}"},
        {PromptCategory::Background, "a picture of {c} on {f} with {f} in view"},
        {PromptCategory::ImageStyle, "a picture of {c} in {f} style"},
        {PromptCategory::AttributesChanging, "a picture of a {f} {c}"},
    }};
    return v;
}

std::vector<std::string> default_fillers(PromptCategory cat) {
    switch (cat) {
        case PromptCategory::HumanInteractive:
            return {"farmer", "wizard", "robot", "knight", "painter",
                    "dancer", "pirate", "clown", "astronaut", "chef"};
        case PromptCategory::RelativePosition:
            return {"vase", "lamp", "tree", "rock", "box", "chair", "bottle", "drum", "kite", "bell"};
        case PromptCategory::Background: {
            std::vector<std::string> v(background_names().begin(), background_names().end());
            v.push_back("cave");
            v.push_back("forest");
            return v;
        }
        case PromptCategory::ImageStyle:
            return {"plain", "inverted", "outline", "sketch", "neon",
                    "retro", "mosaic", "pixel", "glossy", "matte"};
        case PromptCategory::AttributesChanging: {
            std::vector<std::string> v(color_names().begin(), color_names().end());
            v.push_back("striped");
            v.push_back("dotted");
            return v;
        }
    }
    return {};
}

namespace {
std::string substitute(std::string pattern, const std::string& key, const std::string& value,
                       bool all) {
    size_t pos = 0;
    while ((pos = pattern.find(key, pos)) != std::string::npos) {
        pattern.replace(pos, key.size(), value);
        pos += value.size();
        if (!all) break;
    }
    return pattern;
}
}  // namespace

std::vector<RichPrompt> build_rich_prompt_set(
    const std::string& concept_token, const std::string& class_word,
    const std::vector<std::vector<std::string>>& fillers) {
    if (fillers.size() != kNumPromptCategories)
        throw std::runtime_error("build_rich_prompt_set: need fillers for all five categories");
    const std::string phrase = concept_token + " " + class_word;
    std::vector<RichPrompt> out;
    for (int c = 0; c < kNumPromptCategories; ++c) {
        if (fillers[static_cast<size_t>(c)].empty())
            throw std::runtime_error("build_rich_prompt_set: empty filler list for category " +
                                     prompt_category_names()[static_cast<size_t>(c)]);
        for (const auto& f : fillers[static_cast<size_t>(c)]) {
            RichPrompt p;
            p.category = static_cast<PromptCategory>(c);
            p.filler = f;
            std::string t = substitute(prompt_templates()[static_cast<size_t>(c)].pattern, "{f}", f, true);
            p.text = substitute(t, "{c}", phrase, false);
            p.twin_text = substitute(t, "{c}", class_word, false);
            p.head_noun = f;
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<RichPrompt> build_rich_prompt_set(const std::string& concept_token,
                                              const std::string& class_word) {
    std::vector<std::vector<std::string>> fillers;
    for (int c = 0; c < kNumPromptCategories; ++c)
        fillers.push_back(default_fillers(static_cast<PromptCategory>(c)));
    return build_rich_prompt_set(concept_token, class_word, fillers);
}

const RichPrompt& sample_prompt(const std::vector<RichPrompt>& set, Rng& rng) {
    if (set.empty()) throw std::runtime_error("sample_prompt: empty prompt set");
    return set[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(set.size())))];
}

std::string plain_prompt(const Vocab& vocab, const std::string& concept_token,
                         const std::string& class_word) {
    const int id = vocab.id_of(concept_token);
    if (!vocab.is_concept(id))
        throw std::runtime_error("plain_prompt: '" + concept_token + "' is not a concept token");
    return "a picture of " + concept_token + " " + class_word;
}

void save_prompt_set(const std::string& path, const std::string& concept_token,
                     const std::vector<RichPrompt>& set) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_prompt_set: cannot write " + path);
    nlohmann::json header;
    header["concept_token"] = concept_token;
    header["categories"] = prompt_category_names();
    f << header.dump() << "\n";
    for (const auto& p : set) {
        nlohmann::json rec;
        rec["category"] = static_cast<int>(p.category);
        rec["filler"] = p.filler;
        rec["text"] = p.text;
        rec["twin"] = p.twin_text;
        rec["head"] = p.head_noun;
        f << rec.dump() << "\n";
    }
}

std::vector<RichPrompt> load_prompt_set(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_prompt_set: cannot read " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_prompt_set: empty file " + path);
    std::vector<RichPrompt> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line);
        RichPrompt p;
        p.category = static_cast<PromptCategory>(rec["category"].get<int>());
        p.filler = rec["filler"].get<std::string>();
        p.text = rec["text"].get<std::string>();
        p.twin_text = rec["twin"].get<std::string>();
        p.head_noun = rec["head"].get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace mc
