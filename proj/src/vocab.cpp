#include "microcustom/vocab.hpp"

#include <stdexcept>

#include "microcustom/scenes.hpp"

namespace mc {

int Vocab::add_word(const std::string& w) {
    auto it = str_to_id_.find(w);
    if (it != str_to_id_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(w);
    str_to_id_[w] = id;
    return id;
}

int Vocab::register_concept(const std::string& token) {
    const int id = add_word(token);
    concept_ids_.insert(id);
    return id;
}

int Vocab::id_of(const std::string& w) const {
    auto it = str_to_id_.find(w);
    if (it == str_to_id_.end())
        throw std::runtime_error("vocab: out-of-vocabulary word '" + w + "'");
    return it->second;
}

const std::string& Vocab::word_of(int id) const {
    if (id < 0 || id >= size()) throw std::runtime_error("vocab: id out of range");
    return words_[static_cast<size_t>(id)];
}

Vocab Vocab::build_default() {
    Vocab v;
    v.add_word("<pad>");
    v.add_word("<bos>");
    v.add_word("<eos>");
    v.add_word("<mask>");
    for (const char* w : {"a", "picture", "of", "on", "at", "in", "style", "is", "playing",
                          "with", "next", "to", "view"})
        v.add_word(w);
    for (const auto& w : shape_names()) v.add_word(w);
    for (const auto& w : color_names()) v.add_word(w);
    for (const auto& w : texture_names()) v.add_word(w);
    for (const auto& w : background_names()) v.add_word(w);
    for (const auto& w : position_names()) v.add_word(w);
    for (const auto& w : style_names()) v.add_word(w);
    // prompt-set fillers
    for (const char* w : {"farmer", "wizard", "robot", "knight", "painter", "dancer", "pirate",
                          "clown", "astronaut", "chef"})
        v.add_word(w);
    for (const char* w : {"vase", "lamp", "tree", "rock", "box", "chair", "bottle", "drum",
                          "kite", "bell"})
        v.add_word(w);
    for (const char* w : {"cave", "forest"}) v.add_word(w);
    for (const char* w : {"sketch", "neon", "retro", "mosaic", "pixel", "glossy", "matte"})
        v.add_word(w);
    return v;
}

PromptTokens Vocab::tokenize(const std::string& text) const {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) words.push_back(cur);
            cur.clear();
        } else
            cur += c;
    }
    if (!cur.empty()) words.push_back(cur);
    if (static_cast<int>(words.size()) + 2 > kPromptLen)
        throw std::runtime_error("tokenize: prompt longer than " + std::to_string(kPromptLen - 2) +
                                 " words: '" + text + "'");
    PromptTokens p;
    p.ids.assign(kPromptLen, kPadId);
    p.ids[0] = kBosId;
    int pos = 1;
    for (const auto& w : words) {
        const int id = id_of(w);
        if (is_concept(id)) p.concept_positions.push_back(pos);
        p.ids[static_cast<size_t>(pos++)] = id;
    }
    p.ids[static_cast<size_t>(pos)] = kEosId;
    return p;
}

std::string Vocab::detokenize(const PromptTokens& p) const {
    std::string out;
    for (int id : p.ids) {
        if (id == kBosId || id == kPadId) continue;
        if (id == kEosId) break;
        if (!out.empty()) out += ' ';
        out += word_of(id);
    }
    return out;
}

}  // namespace mc
