#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace mc {

constexpr int kPromptLen = 16;  // fixed token length L, PAD-filled

constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kMaskId = 3;

struct PromptTokens {
    std::vector<int> ids;             // length kPromptLen
    std::vector<int> concept_positions;

    int length() const {  // tokens up to and including EOS
        for (size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == kEosId) return static_cast<int>(i) + 1;
        return static_cast<int>(ids.size());
    }
    bool operator==(const PromptTokens&) const = default;
};

// Closed-world vocabulary with reserved specials and registered concept
// tokens. Bijective between strings and ids.
class Vocab {
public:
    static Vocab build_default();

    int add_word(const std::string& w);
    int register_concept(const std::string& token);

    int id_of(const std::string& w) const;
    const std::string& word_of(int id) const;
    bool contains(const std::string& w) const { return str_to_id_.count(w) != 0; }
    bool is_concept(int id) const { return concept_ids_.count(id) != 0; }
    int size() const { return static_cast<int>(words_.size()); }
    const std::set<int>& concept_ids() const { return concept_ids_; }

    PromptTokens tokenize(const std::string& text) const;
    std::string detokenize(const PromptTokens& p) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> str_to_id_;
    std::set<int> concept_ids_;
};

}  // namespace mc
