#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "velm/error.hpp"
#include "velm/json.hpp"
#include "velm/rng.hpp"

namespace velm {

inline constexpr const char* kGood = "good";

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

struct SampleRecord {
    std::string id;  // root-relative path, generic separators
    std::string category;
    Split split = Split::test;
    std::string anomaly_class = kGood;
    std::string image_path;
    std::optional<std::string> mask_path;

    bool is_good() const { return anomaly_class == kGood; }
    bool operator==(const SampleRecord&) const = default;
};

/// Immutable corpus view. class_sets and categories are always derived from samples.
/// The tombstone sets record what a refinement removed so re-applying it is a no-op.
class DatasetIndex {
public:
    DatasetIndex() = default;
    explicit DatasetIndex(std::vector<SampleRecord> samples) : samples_(std::move(samples)) { rebuild(); }

    const std::vector<std::string>& categories() const { return categories_; }
    const std::vector<SampleRecord>& samples() const { return samples_; }
    const std::map<std::string, std::vector<std::string>>& class_sets() const { return class_sets_; }

    const std::vector<std::string>& class_set(const std::string& category) const {
        static const std::vector<std::string> none;
        auto it = class_sets_.find(category);
        return it == class_sets_.end() ? none : it->second;
    }

    bool has_category(const std::string& c) const { return std::binary_search(categories_.begin(), categories_.end(), c); }
    bool has_class(const std::string& category, const std::string& cls) const {
        const auto& cs = class_set(category);
        return std::binary_search(cs.begin(), cs.end(), cls);
    }

    const SampleRecord* find(const std::string& id) const {
        auto it = std::lower_bound(samples_.begin(), samples_.end(), id,
                                   [](const SampleRecord& s, const std::string& k) { return s.id < k; });
        return (it != samples_.end() && it->id == id) ? &*it : nullptr;
    }

    std::vector<const SampleRecord*> select(const std::string& category, Split split) const {
        std::vector<const SampleRecord*> out;
        for (const auto& s : samples_) {
            if (s.category == category && s.split == split) out.push_back(&s);
        }
        return out;
    }

    std::size_t test_count(const std::string& category, const std::string& cls) const {
        return static_cast<std::size_t>(std::count_if(samples_.begin(), samples_.end(), [&](const SampleRecord& s) {
            return s.category == category && s.split == Split::test && s.anomaly_class == cls;
        }));
    }

    // Tombstones: "category/class" -> merged name, dropped categories, dropped "category/class".
    std::map<std::string, std::string> merged_into;
    std::set<std::string> dropped_categories;
    std::set<std::string> dropped_classes;

    bool operator==(const DatasetIndex&) const = default;

private:
    void rebuild() {
        std::sort(samples_.begin(), samples_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        for (std::size_t i = 1; i < samples_.size(); ++i) {
            if (samples_[i].id == samples_[i - 1].id) {
                throw ValidationError("duplicate sample id '" + samples_[i].id + "'");
            }
        }
        std::set<std::string> cats;
        std::map<std::string, std::set<std::string>> classes;
        for (const auto& s : samples_) {
            if (s.split == Split::train && !s.is_good()) {
                throw ValidationError("training sample with anomaly class: " + s.id);
            }
            cats.insert(s.category);
            auto& cs = classes[s.category];
            if (!s.is_good()) cs.insert(s.anomaly_class);
        }
        categories_.assign(cats.begin(), cats.end());
        class_sets_.clear();
        for (auto& [cat, cs] : classes) class_sets_[cat].assign(cs.begin(), cs.end());
    }

    std::vector<SampleRecord> samples_;
    std::vector<std::string> categories_;
    std::map<std::string, std::vector<std::string>> class_sets_;
};

inline std::string class_key(const std::string& category, const std::string& cls) { return category + "/" + cls; }

// ---------------------------------------------------------------------------
// Serialization

inline OrderedJson to_json(const SampleRecord& s) {
    OrderedJson j;
    j["id"] = s.id;
    j["category"] = s.category;
    j["split"] = to_string(s.split);
    j["anomaly_class"] = s.anomaly_class;
    j["image_path"] = s.image_path;
    j["mask_path"] = s.mask_path ? OrderedJson(*s.mask_path) : OrderedJson(nullptr);
    return j;
}

inline SampleRecord sample_from_json(const Json& j) {
    SampleRecord s;
    s.id = j.at("id").get<std::string>();
    s.category = j.at("category").get<std::string>();
    s.split = parse_split(j.at("split").get<std::string>());
    s.anomaly_class = j.at("anomaly_class").get<std::string>();
    s.image_path = j.at("image_path").get<std::string>();
    if (j.contains("mask_path") && !j.at("mask_path").is_null()) s.mask_path = j.at("mask_path").get<std::string>();
    return s;
}

/// Audit export: a bare JSON array of samples in id order.
inline OrderedJson export_samples(const DatasetIndex& index) {
    OrderedJson arr = OrderedJson::array();
    for (const auto& s : index.samples()) arr.push_back(to_json(s));
    return arr;
}

inline OrderedJson to_json(const DatasetIndex& index) {
    OrderedJson j;
    j["categories"] = index.categories();
    OrderedJson cs = OrderedJson::object();
    for (const auto& [cat, classes] : index.class_sets()) cs[cat] = classes;
    j["class_sets"] = cs;
    OrderedJson tomb;
    tomb["merged_into"] = index.merged_into;
    tomb["dropped_categories"] = index.dropped_categories;
    tomb["dropped_classes"] = index.dropped_classes;
    j["refinement"] = tomb;
    j["samples"] = export_samples(index);
    return j;
}

/// Accepts either the full index object or a bare sample array.
inline DatasetIndex index_from_json(const Json& j) {
    try {
        const Json& arr = j.is_array() ? j : j.at("samples");
        std::vector<SampleRecord> samples;
        samples.reserve(arr.size());
        for (const auto& e : arr) samples.push_back(sample_from_json(e));
        DatasetIndex index(std::move(samples));
        if (j.is_object() && j.contains("refinement")) {
            const auto& t = j.at("refinement");
            index.merged_into = t.value("merged_into", std::map<std::string, std::string>{});
            index.dropped_categories = t.value("dropped_categories", std::set<std::string>{});
            index.dropped_classes = t.value("dropped_classes", std::set<std::string>{});
        }
        return index;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed index JSON: ") + e.what());
    }
}

inline DatasetIndex load_index(const std::filesystem::path& path) { return index_from_json(read_json_file(path)); }

inline void save_index(const std::filesystem::path& path, const DatasetIndex& index) {
    write_json_file(path, to_json(index));
}

// ---------------------------------------------------------------------------
// Scanning

enum class Layout { mvtec, visa_csv };

inline Layout parse_layout(const std::string& s) {
    if (s == "mvtec") return Layout::mvtec;
    if (s == "visa_csv") return Layout::visa_csv;
    throw ValidationError("unknown layout '" + s + "' (expected mvtec or visa_csv)");
}

namespace dataset_detail {

namespace fs = std::filesystem;

inline bool is_png(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png";
}

inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (directories ? e.is_directory() : (e.is_regular_file() && is_png(e.path()))) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string rel(const fs::path& p, const fs::path& root) { return p.lexically_relative(root).generic_string(); }

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && in.peek() == '\n') in.get();
            row.push_back(std::move(field));
            field.clear();
            if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field.push_back(c);
        }
    }
    if (any) {
        row.push_back(std::move(field));
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<SampleRecord> scan_mvtec(const fs::path& root) {
    std::vector<SampleRecord> out;
    for (const auto& cat_dir : sorted_entries(root, true)) {
        const auto train = cat_dir / "train";
        const auto test = cat_dir / "test";
        if (!fs::is_directory(train) && !fs::is_directory(test)) continue;
        const std::string category = cat_dir.filename().string();
        if (fs::is_directory(train)) {
            for (const auto& cls_dir : sorted_entries(train, true)) {
                if (cls_dir.filename() != kGood) {
                    throw IoError("training split may only contain 'good'", cls_dir);
                }
                for (const auto& f : sorted_entries(cls_dir, false)) {
                    out.push_back({rel(f, root), category, Split::train, kGood, f.generic_string(), std::nullopt});
                }
            }
        }
        if (fs::is_directory(test)) {
            for (const auto& cls_dir : sorted_entries(test, true)) {
                const std::string cls = cls_dir.filename().string();
                const auto files = sorted_entries(cls_dir, false);
                if (files.empty()) {
                    throw IoError("class directory contains no images", cls_dir);
                }
                const auto gt_dir = cat_dir / "ground_truth" / cls;
                const bool has_gt = cls != kGood && fs::is_directory(gt_dir);
                for (const auto& f : files) {
                    SampleRecord s{rel(f, root), category, Split::test, cls, f.generic_string(), std::nullopt};
                    if (has_gt) {
                        const auto mask = gt_dir / (f.stem().string() + "_mask.png");
                        if (!fs::is_regular_file(mask)) {
                            throw IoError("mask referenced but absent", mask);
                        }
                        s.mask_path = mask.generic_string();
                    }
                    out.push_back(std::move(s));
                }
            }
        }
    }
    return out;
}

inline std::vector<SampleRecord> scan_visa(const fs::path& root, const fs::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) {
        throw IoError("unreadable annotation CSV", csv_path);
    }
    const auto rows = parse_csv(in);
    if (rows.empty()) {
        throw IoError("annotation CSV has no header", csv_path);
    }
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
    for (const char* required : {"object", "split", "label", "image", "mask"}) {
        if (!col.count(required)) {
            throw IoError(std::string("annotation CSV missing column '") + required + "'", csv_path);
        }
    }
    const bool has_class_col = col.count("class") > 0;
    std::vector<SampleRecord> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto get = [&](const char* name) -> std::string {
            const auto i = col.at(name);
            return i < row.size() ? row[i] : std::string{};
        };
        const std::string image = get("image");
        const std::string label = get("label");
        std::string cls;
        if (label == "normal" || label == kGood) {
            cls = kGood;
        } else if (has_class_col && !get("class").empty()) {
            cls = get("class");
        } else if (label == "anomaly") {
            throw IoError("anomalous row without a class (line " + std::to_string(r + 1) + ")", csv_path);
        } else {
            cls = label;
        }
        const auto image_abs = root / image;
        if (!fs::is_regular_file(image_abs)) {
            throw IoError("image listed in CSV is absent", image_abs);
        }
        SampleRecord s{fs::path(image).generic_string(), get("object"), parse_split(get("split")), cls,
                       image_abs.generic_string(), std::nullopt};
        const std::string mask = get("mask");
        if (!mask.empty()) {
            const auto mask_abs = root / mask;
            if (!fs::is_regular_file(mask_abs)) {
                throw IoError("mask referenced but absent", mask_abs);
            }
            s.mask_path = mask_abs.generic_string();
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dataset_detail

/// Indexes an image tree. For visa_csv the annotation file defaults to `<root>/split_csv/1cls.csv`.
inline DatasetIndex scan_dataset(const std::filesystem::path& root, Layout layout,
                                 std::optional<std::filesystem::path> csv = std::nullopt) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw IoError("dataset root does not exist", root);
    }
    auto samples = layout == Layout::mvtec
                       ? dataset_detail::scan_mvtec(root)
                       : dataset_detail::scan_visa(root, csv.value_or(root / "split_csv" / "1cls.csv"));
    if (samples.empty()) {
        throw IoError("no categories found", root);
    }
    return DatasetIndex(std::move(samples));
}

// ---------------------------------------------------------------------------
// Refinement

struct RefinementSpec {
    struct Relabel {
        std::string id;
        std::string new_class;
    };
    struct Merge {
        std::string category;
        std::vector<std::string> sources;
        std::string merged_name;
    };
    std::vector<Relabel> relabel;
    std::vector<Merge> merges;
    std::vector<std::string> drop_categories;
    std::vector<std::pair<std::string, std::string>> drop_classes;
    std::size_t min_samples = 0;
};

/// Sources sorted lexicographically and joined with '+'.
inline std::string merged_class_name(std::vector<std::string> sources) {
    std::sort(sources.begin(), sources.end());
    std::string out;
    for (const auto& s : sources) {
        if (!out.empty()) out += '+';
        out += s;
    }
    return out;
}

inline RefinementSpec refinement_from_json(const Json& j) {
    try {
        RefinementSpec spec;
        for (const auto& r : j.value("relabel", Json::array())) {
            spec.relabel.push_back({r.at("id").get<std::string>(), r.at("new_class").get<std::string>()});
        }
        for (const auto& m : j.value("merges", Json::array())) {
            RefinementSpec::Merge merge{m.at("category").get<std::string>(),
                                        m.at("sources").get<std::vector<std::string>>(), {}};
            merge.merged_name = m.contains("merged_name") ? m.at("merged_name").get<std::string>()
                                                          : merged_class_name(merge.sources);
            spec.merges.push_back(std::move(merge));
        }
        spec.drop_categories = j.value("drop_categories", std::vector<std::string>{});
        for (const auto& d : j.value("drop_classes", Json::array())) {
            spec.drop_classes.emplace_back(d.at("category").get<std::string>(), d.at("class").get<std::string>());
        }
        const auto min = j.value("min_samples", 0LL);
        if (min < 0) throw ValidationError("min_samples must be non-negative");
        spec.min_samples = static_cast<std::size_t>(min);
        return spec;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed refinement spec: ") + e.what());
    }
}

inline RefinementSpec load_refinement(const std::filesystem::path& path) {
    try {
        return refinement_from_json(read_json_file(path));
    } catch (const IoError&) {
        throw;
    } catch (const ValidationError& e) {
        throw IoError(e.what(), path);
    }
}

struct RefinementStats {
    std::size_t relabels_applied = 0;
    std::size_t merges_applied = 0;
    std::size_t categories_dropped = 0;
    std::size_t classes_dropped = 0;
    std::size_t classes_below_min = 0;
};

struct RefinementResult {
    DatasetIndex index;
    RefinementStats stats;
};

/// Applies relabels, merges, category drops, class drops and the minimum-support filter, in that order.
/// References already satisfied by an earlier application (recorded tombstones) are no-ops.
inline RefinementResult apply_refinement(const DatasetIndex& input, const RefinementSpec& spec) {
    RefinementStats stats;
    std::vector<SampleRecord> samples = input.samples();
    auto merged_into = input.merged_into;
    auto dropped_categories = input.dropped_categories;
    auto dropped_classes = input.dropped_classes;

    auto current = [&] { return DatasetIndex(samples); };
    auto resolve = [&](const std::string& category, std::string cls) {
        for (auto it = merged_into.find(class_key(category, cls)); it != merged_into.end();
             it = merged_into.find(class_key(category, cls))) {
            cls = it->second;
        }
        return cls;
    };

    {
        const DatasetIndex idx = current();
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < samples.size(); ++i) pos[samples[i].id] = i;
        for (const auto& r : spec.relabel) {
            auto it = pos.find(r.id);
            if (it == pos.end()) throw ValidationError("refinement: unknown sample id '" + r.id + "'");
            auto& s = samples[it->second];
            if (s.split != Split::test) throw ValidationError("refinement: relabel of non-test sample '" + r.id + "'");
            const std::string target = r.new_class == kGood ? std::string(kGood) : resolve(s.category, r.new_class);
            if (target != kGood && !idx.has_class(s.category, target)) {
                throw ValidationError("refinement: unknown class '" + r.new_class + "' in category '" + s.category + "'");
            }
            if (s.anomaly_class != target) {
                s.anomaly_class = target;
                ++stats.relabels_applied;
            }
        }
    }

    for (const auto& m : spec.merges) {
        const DatasetIndex idx = current();
        if (!idx.has_category(m.category)) throw ValidationError("refinement: merge names unknown category '" + m.category + "'");
        if (m.sources.size() < 2) throw ValidationError("refinement: merge needs at least two sources in '" + m.category + "'");
        std::set<std::string> sources(m.sources.begin(), m.sources.end());
        if (sources.size() != m.sources.size()) {
            throw ValidationError("refinement: duplicate merge source in '" + m.category + "'");
        }
        std::set<std::string> live;
        for (const auto& src : sources) {
            if (idx.has_class(m.category, src)) {
                live.insert(src);
            } else if (resolve(m.category, src) != m.merged_name) {
                throw ValidationError("refinement: unknown class '" + src + "' in category '" + m.category + "'");
            }
        }
        if (live.empty()) continue;
        const bool previously_merged = std::any_of(merged_into.begin(), merged_into.end(), [&](const auto& kv) {
            return kv.second == m.merged_name && kv.first.rfind(m.category + "/", 0) == 0;
        });
        if (idx.has_class(m.category, m.merged_name) && !sources.count(m.merged_name) && !previously_merged) {
            throw ValidationError("refinement: merged name '" + m.merged_name + "' collides with class in '" + m.category + "'");
        }
        for (auto& s : samples) {
            if (s.category == m.category && live.count(s.anomaly_class)) s.anomaly_class = m.merged_name;
        }
        for (const auto& src : live) {
            if (src != m.merged_name) merged_into[class_key(m.category, src)] = m.merged_name;
        }
        ++stats.merges_applied;
    }

    const DatasetIndex before_drops = current();
    for (const auto& cat : spec.drop_categories) {
        if (before_drops.has_category(cat)) {
            std::erase_if(samples, [&](const SampleRecord& s) { return s.category == cat; });
            dropped_categories.insert(cat);
            ++stats.categories_dropped;
        } else if (!dropped_categories.count(cat)) {
            throw ValidationError("refinement: unknown category '" + cat + "'");
        }
    }

    for (const auto& [cat, cls] : spec.drop_classes) {
        if (cls == kGood) throw ValidationError("refinement: cannot drop the normal class of '" + cat + "'");
        const auto key = class_key(cat, cls);
        if (before_drops.has_class(cat, cls)) {
            if (dropped_categories.count(cat)) continue;
            std::erase_if(samples, [&](const SampleRecord& s) { return s.category == cat && s.anomaly_class == cls; });
            dropped_classes.insert(key);
            ++stats.classes_dropped;
        } else if (!dropped_classes.count(key) && !dropped_categories.count(cat)) {
            throw ValidationError("refinement: unknown class '" + cls + "' in category '" + cat + "'");
        }
    }

    if (spec.min_samples > 0) {
        const DatasetIndex idx = current();
        std::set<std::string> small;
        for (const auto& cat : idx.categories()) {
            for (const auto& cls : idx.class_set(cat)) {
                if (idx.test_count(cat, cls) < spec.min_samples) small.insert(class_key(cat, cls));
            }
        }
        std::erase_if(samples, [&](const SampleRecord& s) {
            return !s.is_good() && small.count(class_key(s.category, s.anomaly_class));
        });
        for (const auto& k : small) dropped_classes.insert(k);
        stats.classes_below_min = small.size();
    }

    DatasetIndex out(std::move(samples));
    for (const auto& cat : out.categories()) {
        if (!input.class_set(cat).empty() && out.class_set(cat).empty()) {
            throw ValidationError("refinement: spec removes every anomaly class of category '" + cat + "'");
        }
    }
    out.merged_into = std::move(merged_into);
    out.dropped_categories = std::move(dropped_categories);
    out.dropped_classes = std::move(dropped_classes);
    return {std::move(out), stats};
}

// ---------------------------------------------------------------------------
// Reference selection

/// Uniform seeded choice among the category's training samples (in id order).
inline const SampleRecord& select_reference(const DatasetIndex& index, const std::string& category, std::uint64_t seed) {
    if (!index.has_category(category)) {
        throw ValidationError("select_reference: unknown category '" + category + "'");
    }
    const auto train = index.select(category, Split::train);
    if (train.empty()) {
        throw ValidationError("select_reference: category '" + category + "' has no training samples");
    }
    SeededRng rng(mix_seed(seed, category));
    return *train[static_cast<std::size_t>(rng.below(train.size()))];
}

// ---------------------------------------------------------------------------
// Skeleton trees

/// Materializes a layout from a manifest of counts with zero-byte placeholder images, so refinement
/// specs can be validated without the real images.
/// Manifest: {"layout": "mvtec"|"visa_csv", "categories": {cat: {"train_good": n, "test": {class: n}}}}.
inline void materialize_skeleton(const Json& manifest, const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    auto touch = [](const fs::path& p) {
        fs::create_directories(p.parent_path());
        std::ofstream(p, std::ios::binary | std::ios::trunc);
    };
    auto numbered = [](std::size_t i) {
        std::string s = std::to_string(i);
        return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
    };
    const auto layout = parse_layout(manifest.value("layout", std::string("mvtec")));
    std::ofstream csv;
    if (layout == Layout::visa_csv) {
        fs::create_directories(out / "split_csv");
        csv.open(out / "split_csv" / "1cls.csv", std::ios::trunc);
        csv << "object,split,label,image,mask,class\n";
    }
    for (const auto& [cat, spec] : manifest.at("categories").items()) {
        const auto train_n = spec.value("train_good", 0);
        for (int i = 0; i < train_n; ++i) {
            if (layout == Layout::mvtec) {
                touch(out / cat / "train" / "good" / (numbered(static_cast<std::size_t>(i)) + ".png"));
            } else {
                const auto img = cat + "/Data/Images/Normal/train_" + numbered(static_cast<std::size_t>(i)) + ".png";
                touch(out / img);
                csv << cat << ",train,normal," << img << ",,\n";
            }
        }
        for (const auto& [cls, n] : spec.at("test").items()) {
            for (int i = 0; i < n.get<int>(); ++i) {
                const auto stem = numbered(static_cast<std::size_t>(i));
                if (layout == Layout::mvtec) {
                    touch(out / cat / "test" / cls / (stem + ".png"));
                    if (cls != kGood) touch(out / cat / "ground_truth" / cls / (stem + "_mask.png"));
                } else if (cls == kGood) {
                    const auto img = cat + "/Data/Images/Normal/test_" + stem + ".png";
                    touch(out / img);
                    csv << cat << ",test,normal," << img << ",,\n";
                } else {
                    const auto img = cat + "/Data/Images/Anomaly/" + cls + "_" + stem + ".png";
                    const auto mask = cat + "/Data/Masks/Anomaly/" + cls + "_" + stem + ".png";
                    touch(out / img);
                    touch(out / mask);
                    csv << cat << ",test,anomaly," << img << "," << mask << "," << cls << "\n";
                }
            }
        }
    }
}

}  // namespace velm
