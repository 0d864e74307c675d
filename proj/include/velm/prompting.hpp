#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "velm/dataset.hpp"
#include "velm/error.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"

namespace velm {

struct TaxonomyEntry {
    std::string normal_description;
    std::string classification_strategy;
    std::map<std::string, std::string> classes;  // class name -> description
    bool operator==(const TaxonomyEntry&) const = default;
};

using Taxonomy = std::map<std::string, TaxonomyEntry>;

inline Taxonomy taxonomy_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("taxonomy must be a JSON object keyed by category");
    Taxonomy t;
    try {
        for (const auto& [cat, e] : j.items()) {
            if (cat.starts_with("_")) continue;  // comment keys
            TaxonomyEntry entry;
            entry.normal_description = e.value("normal_description", std::string{});
            entry.classification_strategy = e.value("classification_strategy", std::string{});
            entry.classes = e.at("classes").get<std::map<std::string, std::string>>();
            t[cat] = std::move(entry);
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed taxonomy: ") + e.what());
    }
    return t;
}

inline Taxonomy load_taxonomy(const std::filesystem::path& path) {
    try {
        return taxonomy_from_json(read_json_file(path));
    } catch (const IoError&) {
        throw;
    } catch (const ValidationError& e) {
        throw IoError(e.what(), path);
    }
}

inline OrderedJson to_json(const Taxonomy& t) {
    OrderedJson j = OrderedJson::object();
    for (const auto& [cat, e] : t) {
        OrderedJson classes = OrderedJson::object();
        for (const auto& [name, desc] : e.classes) classes[name] = desc;
        j[cat] = {{"normal_description", e.normal_description},
                  {"classification_strategy", e.classification_strategy},
                  {"classes", classes}};
    }
    return j;
}

/// Prompt parts that can be switched off; the query image is always sent.
struct AblationFlags {
    bool reference_image = true;
    bool visual_prompt = true;
    bool normal_description = true;
    bool classification_strategy = true;
    bool anomaly_descriptions = true;

    bool operator==(const AblationFlags&) const = default;

    /// "full", or the removed parts as "w/o RI+VP".
    std::string label() const {
        std::string off;
        auto add = [&](bool on, const char* code) {
            if (on) return;
            if (!off.empty()) off += '+';
            off += code;
        };
        add(reference_image, "RI");
        add(visual_prompt, "VP");
        add(normal_description, "ND");
        add(classification_strategy, "CS");
        add(anomaly_descriptions, "AD");
        return off.empty() ? "full" : "w/o " + off;
    }
};

inline OrderedJson to_json(const AblationFlags& f) {
    return {{"RI", f.reference_image}, {"VP", f.visual_prompt}, {"ND", f.normal_description},
            {"CS", f.classification_strategy}, {"AD", f.anomaly_descriptions}};
}

inline AblationFlags flags_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("flag set must be an object");
    static const std::set<std::string> known{"RI", "VP", "ND", "CS", "AD"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ValidationError("unknown flag '" + k + "'");
        if (!v.is_boolean()) throw ValidationError("flag '" + k + "' must be boolean");
    }
    AblationFlags f;
    f.reference_image = j.value("RI", true);
    f.visual_prompt = j.value("VP", true);
    f.normal_description = j.value("ND", true);
    f.classification_strategy = j.value("CS", true);
    f.anomaly_descriptions = j.value("AD", true);
    return f;
}

/// Checks the taxonomy against the index: every category present, class keys equal to the class set,
/// and the texts needed by `flags` non-empty.
inline void validate_taxonomy(const Taxonomy& taxonomy, const DatasetIndex& index, const AblationFlags& flags = {}) {
    for (const auto& cat : index.categories()) {
        const auto& classes = index.class_set(cat);
        if (classes.empty()) continue;
        auto it = taxonomy.find(cat);
        if (it == taxonomy.end()) throw ValidationError("taxonomy has no entry for category '" + cat + "'");
        const auto& e = it->second;
        for (const auto& cls : classes) {
            auto c = e.classes.find(cls);
            if (c == e.classes.end()) throw ValidationError("taxonomy for '" + cat + "' lacks class '" + cls + "'");
            if (flags.anomaly_descriptions && c->second.empty()) {
                throw ValidationError("taxonomy for '" + cat + "' has an empty description for '" + cls + "'");
            }
        }
        for (const auto& [name, desc] : e.classes) {
            if (!std::binary_search(classes.begin(), classes.end(), name)) {
                throw ValidationError("taxonomy for '" + cat + "' names class '" + name + "' absent from the index");
            }
        }
        if (flags.normal_description && e.normal_description.empty()) {
            throw ValidationError("taxonomy for '" + cat + "' has an empty normal_description");
        }
        if (flags.classification_strategy && e.classification_strategy.empty()) {
            throw ValidationError("taxonomy for '" + cat + "' has an empty classification_strategy");
        }
    }
}

inline std::string display_name(std::string category) {
    for (auto& c : category)
        if (c == '_') c = ' ';
    return category;
}

inline constexpr const char* kOutputInstruction =
    "Answer with exactly one class name from the list, written exactly as listed, and nothing else.";

/// Fixed template: preamble, normal description, class list, strategy, output format.
inline std::string build_text_prompt(const std::string& category, const TaxonomyEntry& entry,
                                     const std::vector<std::string>& class_names, const AblationFlags& flags) {
    if (class_names.empty()) throw ValidationError("build_text_prompt: empty class list for '" + category + "'");
    std::set<std::string> seen;
    for (const auto& c : class_names) {
        if (!seen.insert(c).second) throw ValidationError("build_text_prompt: duplicate class '" + c + "'");
        if (flags.anomaly_descriptions && !entry.classes.count(c)) {
            throw ValidationError("build_text_prompt: no description for class '" + c + "' of '" + category + "'");
        }
    }
    const std::string object = display_name(category);
    std::string p;
    p += "You are an expert in industrial visual inspection. The images show a " + object +
         " that a vision model has flagged as anomalous. Classify the anomaly.\n";
    int n = 1;
    if (flags.reference_image) p += "Image " + std::to_string(n++) + " is a normal reference sample of the " + object + ".\n";
    p += "Image " + std::to_string(n++) + " is the query image.\n";
    if (flags.visual_prompt) {
        p += "Image " + std::to_string(n++) + " is the query image with the detected anomaly outlined by a red contour.\n";
    }
    if (flags.normal_description) p += "\n## Normal Object Description\n" + entry.normal_description + "\n";
    p += "\n## Anomaly Classes\n";
    for (const auto& c : class_names) {
        p += "- " + c;
        if (flags.anomaly_descriptions) p += ": " + entry.classes.at(c);
        p += "\n";
    }
    if (flags.classification_strategy) p += "\n## Classification Strategy\n" + entry.classification_strategy + "\n";
    p += "\n## Output Format\n";
    p += kOutputInstruction;
    p += "\n";
    return p;
}

enum class ImageRole { reference, query, visual_prompt };

inline const char* to_string(ImageRole r) {
    switch (r) {
        case ImageRole::reference: return "reference";
        case ImageRole::query: return "query";
        case ImageRole::visual_prompt: return "visual_prompt";
    }
    return "?";
}

struct RequestImage {
    ImageRole role;
    RgbImage image;
};

/// Self-contained: carries no sample id or dataset path.
struct ClassificationRequest {
    std::string category;
    std::vector<std::string> class_names;
    std::string text_prompt;
    std::vector<RequestImage> images;
    AblationFlags flags;

    const RgbImage& image(ImageRole role) const {
        for (const auto& i : images)
            if (i.role == role) return i.image;
        throw ValidationError(std::string("request has no ") + to_string(role) + " image");
    }
};

inline ClassificationRequest assemble_request(const RgbImage* reference, const RgbImage& query, const RgbImage* overlay,
                                              const std::string& category, const TaxonomyEntry& entry,
                                              const std::vector<std::string>& class_names, const AblationFlags& flags) {
    if (query.empty()) throw ValidationError("assemble_request: empty query image");
    if (flags.reference_image && (!reference || reference->empty())) {
        throw ValidationError("assemble_request: reference image requested but missing");
    }
    if (flags.visual_prompt && (!overlay || overlay->empty())) {
        throw ValidationError("assemble_request: visual prompt requested but no overlay given");
    }
    ClassificationRequest r;
    r.category = category;
    r.class_names = class_names;
    r.text_prompt = build_text_prompt(category, entry, class_names, flags);
    r.flags = flags;
    if (flags.reference_image) r.images.push_back({ImageRole::reference, *reference});
    r.images.push_back({ImageRole::query, query});
    if (flags.visual_prompt) r.images.push_back({ImageRole::visual_prompt, *overlay});
    return r;
}

}  // namespace velm
