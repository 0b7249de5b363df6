#pragma once

#include <array>
#include <string>
#include <vector>

#include "microcustom/tensor.hpp"
#include "microcustom/vocab.hpp"

namespace mc {

enum class PromptCategory {
    HumanInteractive,
    RelativePosition,
    Background,
    ImageStyle,
    AttributesChanging,
};
constexpr int kNumPromptCategories = 5;
const std::array<std::string, kNumPromptCategories>& prompt_category_names();

// One template per category; {c} is the concept phrase slot, {f} a context
// filler slot (the background template repeats its filler).
struct PromptTemplate {
    PromptCategory category;
    std::string pattern;
};
const std::array<PromptTemplate, kNumPromptCategories>& prompt_templates();
std::vector<std::string> default_fillers(PromptCategory cat);

struct RichPrompt {
    PromptCategory category;
    std::string filler;
    std::string text;       // with the concept phrase
    std::string twin_text;  // identical but without the concept token
    std::string head_noun;  // context token used by the similarity analysis
};

// Cartesian instantiation of the five templates over per-category fillers.
// Every prompt contains the concept token exactly once.
std::vector<RichPrompt> build_rich_prompt_set(const std::string& concept_token,
                                              const std::string& class_word,
                                              const std::vector<std::vector<std::string>>& fillers);
std::vector<RichPrompt> build_rich_prompt_set(const std::string& concept_token,
                                              const std::string& class_word);

const RichPrompt& sample_prompt(const std::vector<RichPrompt>& set, Rng& rng);

// Context-simple prompt for the denoising branch: "a picture of [v] <class>".
std::string plain_prompt(const Vocab& vocab, const std::string& concept_token,
                         const std::string& class_word);

// Prompt-set persistence: JSON header line, then one prompt per line.
void save_prompt_set(const std::string& path, const std::string& concept_token,
                     const std::vector<RichPrompt>& set);
std::vector<RichPrompt> load_prompt_set(const std::string& path);

}  // namespace mc
