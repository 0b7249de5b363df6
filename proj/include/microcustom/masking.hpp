#pragma once

#include <stdexcept>
#include <vector>

#include "microcustom/tensor.hpp"
#include "microcustom/vocab.hpp"

namespace mc {

struct MaskedPrompt {
    std::vector<int> ids_masked;  // length kPromptLen, MASK substituted
    std::vector<int> labels;      // original ids at masked positions
    std::vector<int> positions;   // masked positions, ascending
};

// Independent per-position replacement by the mask token. Specials, PAD and
// concept tokens are never eligible.
inline MaskedPrompt random_mask(const PromptTokens& p, double rho_mask, Rng& rng) {
    if (rho_mask < 0.0 || rho_mask > 1.0)
        throw std::runtime_error("random_mask: rho_mask outside [0,1]");
    MaskedPrompt out;
    out.ids_masked = p.ids;
    for (size_t i = 0; i < p.ids.size(); ++i) {
        const int id = p.ids[i];
        if (id == kPadId || id == kBosId || id == kEosId || id == kMaskId) continue;
        bool is_concept = false;
        for (int cp : p.concept_positions)
            if (cp == static_cast<int>(i)) is_concept = true;
        if (is_concept) continue;
        if (rng.uniform() < rho_mask) {
            out.positions.push_back(static_cast<int>(i));
            out.labels.push_back(id);
            out.ids_masked[i] = kMaskId;
        }
    }
    return out;
}

inline std::vector<int> reconstruct_ids(const MaskedPrompt& m) {
    std::vector<int> ids = m.ids_masked;
    for (size_t i = 0; i < m.positions.size(); ++i)
        ids[static_cast<size_t>(m.positions[i])] = m.labels[i];
    return ids;
}

}  // namespace mc
