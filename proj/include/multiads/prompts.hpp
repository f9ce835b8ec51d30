#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "multiads/kba.hpp"

namespace multiads {

inline constexpr std::string_view kNormalState = "normal";

/// All prompts for one state of one product.
struct PromptSet {
    std::string state_id;
    std::string product;
    std::vector<std::string> prompts;

    bool operator==(const PromptSet&) const = default;
};

/// Text substituted for [cls]: the product key with underscores as spaces.
inline std::string product_display_name(std::string_view product) {
    std::string out(product);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

namespace detail {

inline std::string replace_once(std::string_view text, std::string_view token, std::string_view value) {
    const auto pos = text.find(token);
    std::string out;
    out.reserve(text.size() + value.size());
    out.append(text.substr(0, pos));
    out.append(value);
    out.append(text.substr(pos + token.size()));
    return out;
}

}  // namespace detail

/// Phrase-major, template-minor cross product of the state's phrases with the
/// KBA templates.
inline PromptSet build_prompt_set(const Kba& kba, std::string_view product, std::string_view state_id) {
    if (!kba.has_product(product)) throw UnknownProduct("'" + std::string(product) + "'");
    const std::vector<std::string>* phrases = nullptr;
    if (state_id == kNormalState) {
        phrases = &kba.normal_phrases();
    } else {
        if (!kba.has_defect(state_id)) throw UnknownState("'" + std::string(state_id) + "'");
        phrases = &kba.defect(state_id).phrases;
    }

    const std::string cls = product_display_name(product);
    PromptSet set{std::string(state_id), std::string(product), {}};
    set.prompts.reserve(phrases->size() * kba.templates().size());
    for (const auto& phrase : *phrases) {
        const std::string filled = detail::replace_once(phrase, kClassToken, cls);
        for (const auto& tmpl : kba.templates()) {
            set.prompts.push_back(detail::replace_once(tmpl, kTemplateToken, filled));
        }
    }
    return set;
}

/// "normal" followed by every defect id (stored order) or, when `filtered`,
/// only the product's relevant defects. Index in this list is the channel.
inline std::vector<std::string> build_state_roster(const Kba& kba, std::string_view product, bool filtered) {
    std::vector<std::string> roster{std::string(kNormalState)};
    if (filtered) {
        for (const auto& id : kba.relevant_defects(product)) roster.push_back(id);
    } else {
        if (!kba.has_product(product)) throw UnknownProduct("'" + std::string(product) + "'");
        for (const auto& d : kba.defect_types()) roster.push_back(d.id);
    }
    return roster;
}

inline std::vector<PromptSet> build_prompt_sets(const Kba& kba, std::string_view product, bool filtered) {
    std::vector<PromptSet> sets;
    for (const auto& state : build_state_roster(kba, product, filtered)) {
        sets.push_back(build_prompt_set(kba, product, state));
    }
    return sets;
}

inline ordered_json prompt_sets_to_json(const std::vector<PromptSet>& sets) {
    ordered_json out = ordered_json::array();
    for (const auto& s : sets) out.push_back({{"state_id", s.state_id}, {"prompts", s.prompts}});
    return out;
}

}  // namespace multiads
