#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "multiads/error.hpp"

namespace multiads {

using ordered_json = nlohmann::ordered_json;

inline constexpr std::string_view kClassToken = "[cls]";
inline constexpr std::string_view kTemplateToken = "{}";

/// Lowercase, map '_' and '-' to spaces, collapse whitespace runs, trim.
/// Dataset folders say `scratch_neck` where the taxonomy says "scratch neck".
inline std::string normalize_term(std::string_view term) {
    std::string out;
    out.reserve(term.size());
    bool pending_space = false;
    for (char raw : term) {
        char c = raw == '_' || raw == '-' ? ' ' : raw;
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

inline std::size_t count_occurrences(std::string_view text, std::string_view token) {
    std::size_t n = 0;
    for (auto pos = text.find(token); pos != std::string_view::npos; pos = text.find(token, pos + token.size())) ++n;
    return n;
}

struct DefectType {
    std::string id;
    std::string superclass;
    std::vector<std::string> variations;
    std::vector<std::string> phrases;
    std::vector<std::string> attributes;

    bool operator==(const DefectType&) const = default;
};

struct ProductClass {
    std::string name;
    std::vector<std::string> relevant_defect_ids;

    bool operator==(const ProductClass&) const = default;
};

/// Knowledge base for anomalies: defect superclasses with their dataset
/// variations and prompt phrases, plus which defects each product can show.
/// Immutable once constructed; every instance satisfies the invariants
/// checked in `validate`.
class Kba {
  public:
    Kba(std::vector<std::string> normal_phrases, std::vector<std::string> templates,
        std::vector<DefectType> defects, std::vector<ProductClass> products)
        : normal_phrases_(std::move(normal_phrases)),
          templates_(std::move(templates)),
          defects_(std::move(defects)),
          products_(std::move(products)) {
        validate();
    }

    [[nodiscard]] const std::vector<std::string>& normal_phrases() const noexcept { return normal_phrases_; }
    [[nodiscard]] const std::vector<std::string>& templates() const noexcept { return templates_; }
    [[nodiscard]] const std::vector<DefectType>& defect_types() const noexcept { return defects_; }
    [[nodiscard]] const std::vector<ProductClass>& products() const noexcept { return products_; }

    [[nodiscard]] bool has_defect(std::string_view id) const { return defect_index_.contains(std::string(id)); }
    [[nodiscard]] bool has_product(std::string_view name) const { return product_index_.contains(std::string(name)); }

    [[nodiscard]] const DefectType& defect(std::string_view id) const {
        auto it = defect_index_.find(std::string(id));
        if (it == defect_index_.end()) throw UnknownState("no defect type '" + std::string(id) + "'");
        return defects_[it->second];
    }

    [[nodiscard]] const ProductClass& product(std::string_view name) const {
        auto it = product_index_.find(std::string(name));
        if (it == product_index_.end()) throw UnknownProduct("no product '" + std::string(name) + "'");
        return products_[it->second];
    }

    /// Defect type id whose superclass name or one of whose variations matches
    /// `variation` after normalization.
    [[nodiscard]] std::string resolve_superclass(std::string_view variation) const {
        auto it = variation_index_.find(normalize_term(variation));
        if (it == variation_index_.end()) throw UnknownVariation("'" + std::string(variation) + "'");
        return defects_[it->second].id;
    }

    /// The product's relevant defect ids in stored order.
    /// Relevant defect ids in the KBA's stored defect order, whatever order
    /// the product lists them in.
    [[nodiscard]] std::vector<std::string> relevant_defects(std::string_view product_name) const {
        const auto& ids = product(product_name).relevant_defect_ids;
        std::vector<std::string> out;
        for (const auto& d : defects_)
            if (std::find(ids.begin(), ids.end(), d.id) != ids.end()) out.push_back(d.id);
        return out;
    }

    bool operator==(const Kba& other) const {
        return normal_phrases_ == other.normal_phrases_ && templates_ == other.templates_ &&
               defects_ == other.defects_ && products_ == other.products_;
    }

  private:
    void validate() {
        if (normal_phrases_.empty()) throw ValidationError("normal_phrases is empty");
        if (templates_.empty()) throw ValidationError("templates is empty");
        for (const auto& p : normal_phrases_) {
            if (count_occurrences(p, kClassToken) != 1)
                throw ValidationError("normal phrase '" + p + "' must contain [cls] exactly once");
        }
        for (const auto& t : templates_) {
            if (count_occurrences(t, kTemplateToken) != 1)
                throw ValidationError("template '" + t + "' must contain {} exactly once");
        }

        for (std::size_t i = 0; i < defects_.size(); ++i) {
            const auto& d = defects_[i];
            if (d.id.empty()) throw ValidationError("defect type with empty id");
            if (d.id == "normal") throw ValidationError("defect id 'normal' is reserved for the normal state");
            if (!defect_index_.emplace(d.id, i).second) throw ValidationError("duplicate defect id '" + d.id + "'");
            if (d.phrases.empty()) throw ValidationError("defect '" + d.id + "' has no phrases");
            for (const auto& p : d.phrases) {
                if (count_occurrences(p, kClassToken) != 1)
                    throw ValidationError("defect '" + d.id + "' phrase '" + p + "' must contain [cls] exactly once");
            }
            std::set<std::string> own;
            for (const auto& v : d.variations) {
                if (!own.insert(normalize_term(v)).second)
                    throw ValidationError("defect '" + d.id + "' repeats variation '" + v + "'");
            }
            own.insert(normalize_term(d.superclass));
            own.insert(normalize_term(d.id));
            for (const auto& term : own) {
                if (term.empty()) continue;
                auto [it, inserted] = variation_index_.emplace(term, i);
                if (!inserted && it->second != i) {
                    throw ValidationError("variation '" + term + "' is claimed by both '" + defects_[it->second].id +
                                          "' and '" + d.id + "'");
                }
            }
        }

        for (std::size_t i = 0; i < products_.size(); ++i) {
            const auto& p = products_[i];
            if (p.name.empty()) throw ValidationError("product with empty name");
            if (!product_index_.emplace(p.name, i).second)
                throw ValidationError("duplicate product '" + p.name + "'");
            std::set<std::string> seen;
            for (const auto& id : p.relevant_defect_ids) {
                if (!defect_index_.contains(id))
                    throw ValidationError("product '" + p.name + "' references unknown defect id '" + id + "'");
                if (!seen.insert(id).second)
                    throw ValidationError("product '" + p.name + "' lists defect '" + id + "' twice");
            }
        }
    }

    std::vector<std::string> normal_phrases_;
    std::vector<std::string> templates_;
    std::vector<DefectType> defects_;
    std::vector<ProductClass> products_;
    std::map<std::string, std::size_t> defect_index_;
    std::map<std::string, std::size_t> product_index_;
    std::map<std::string, std::size_t> variation_index_;
};

namespace detail {

/// Parse JSON rejecting duplicate object keys, which the library would
/// otherwise silently collapse.
inline ordered_json parse_strict(const std::string& text, const std::string& origin) {
    std::vector<std::set<std::string>> seen;
    std::vector<std::string> path;
    auto callback = [&](int /*depth*/, ordered_json::parse_event_t event, ordered_json& parsed) {
        using E = ordered_json::parse_event_t;
        switch (event) {
            case E::object_start: seen.emplace_back(); break;
            case E::object_end:
                if (!seen.empty()) seen.pop_back();
                break;
            case E::key: {
                const auto key = parsed.get<std::string>();
                if (!seen.empty() && !seen.back().insert(key).second) {
                    throw ValidationError("duplicate key '" + key + "' in " + origin);
                }
                break;
            }
            default: break;
        }
        return true;
    };
    try {
        return ordered_json::parse(text, callback);
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

inline std::vector<std::string> string_list(const ordered_json& j, const std::string& where) {
    if (!j.is_array()) throw ParseError(where + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& item : j) {
        if (!item.is_string()) throw ParseError(where + " must contain only strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

inline const ordered_json& member(const ordered_json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + " is missing '" + key + "'");
    return *it;
}

}  // namespace detail

inline Kba kba_from_json(const ordered_json& j) {
    if (!j.is_object()) throw ParseError("KBA root must be an object");
    for (const auto& [key, _] : j.items()) {
        if (key != "normal_phrases" && key != "templates" && key != "defect_types" && key != "products")
            throw ParseError("unknown KBA key '" + key + "'");
    }
    auto normal = detail::string_list(detail::member(j, "normal_phrases", "KBA"), "normal_phrases");
    auto templates = detail::string_list(detail::member(j, "templates", "KBA"), "templates");

    const auto& dj = detail::member(j, "defect_types", "KBA");
    if (!dj.is_object()) throw ParseError("defect_types must be an object");
    std::vector<DefectType> defects;
    for (const auto& [id, body] : dj.items()) {
        const std::string where = "defect_types." + id;
        if (!body.is_object()) throw ParseError(where + " must be an object");
        DefectType d;
        d.id = id;
        const auto& sc = detail::member(body, "superclass", where);
        if (!sc.is_string()) throw ParseError(where + ".superclass must be a string");
        d.superclass = sc.get<std::string>();
        d.variations = detail::string_list(detail::member(body, "variations", where), where + ".variations");
        d.phrases = detail::string_list(detail::member(body, "phrases", where), where + ".phrases");
        if (body.contains("attributes"))
            d.attributes = detail::string_list(body["attributes"], where + ".attributes");
        defects.push_back(std::move(d));
    }

    const auto& pj = detail::member(j, "products", "KBA");
    if (!pj.is_object()) throw ParseError("products must be an object");
    std::vector<ProductClass> products;
    for (const auto& [name, body] : pj.items()) {
        const std::string where = "products." + name;
        if (!body.is_object()) throw ParseError(where + " must be an object");
        products.push_back({name, detail::string_list(detail::member(body, "defects", where), where + ".defects")});
    }
    return Kba(std::move(normal), std::move(templates), std::move(defects), std::move(products));
}

inline ordered_json kba_to_json(const Kba& kba) {
    ordered_json j;
    j["normal_phrases"] = kba.normal_phrases();
    j["templates"] = kba.templates();
    ordered_json defects = ordered_json::object();
    for (const auto& d : kba.defect_types()) {
        defects[d.id] = {{"superclass", d.superclass},
                         {"variations", d.variations},
                         {"phrases", d.phrases},
                         {"attributes", d.attributes}};
    }
    j["defect_types"] = std::move(defects);
    ordered_json products = ordered_json::object();
    for (const auto& p : kba.products()) products[p.name] = {{"defects", p.relevant_defect_ids}};
    j["products"] = std::move(products);
    return j;
}

inline Kba parse_kba(const std::string& text, const std::string& origin = "<memory>") {
    return kba_from_json(detail::parse_strict(text, origin));
}

inline Kba load_kba(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open KBA file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_kba(ss.str(), path.string());
}

inline void save_kba(const Kba& kba, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write KBA file '" + path.string() + "'");
    out << kba_to_json(kba).dump(2) << '\n';
}

}  // namespace multiads
