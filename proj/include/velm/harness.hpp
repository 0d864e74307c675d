#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "velm/dataset.hpp"
#include "velm/digest.hpp"
#include "velm/error.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"
#include "velm/llm_gateway.hpp"
#include "velm/metrics.hpp"
#include "velm/prompting.hpp"
#include "velm/rng.hpp"
#include "velm/vision_expert.hpp"
#include "velm/visual_prompt.hpp"

namespace velm {

// ---------------------------------------------------------------------------
// Experts from a CLI-style spec

struct ExpertSpec {
    ExpertKind kind = ExpertKind::oracle;
    std::filesystem::path path;  // maps dir or bank file/dir
};

/// "oracle", "external:DIR" or "bank:FILE|DIR".
inline ExpertSpec parse_expert_spec(const std::string& s) {
    if (s == "oracle") return {ExpertKind::oracle, {}};
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon), rest = colon == std::string::npos ? "" : s.substr(colon + 1);
    if (head == "external" || head == "bank") {
        if (rest.empty()) throw ValidationError("expert '" + head + "' needs a path, e.g. " + head + ":DIR");
        return {head == "external" ? ExpertKind::external : ExpertKind::memory_bank, rest};
    }
    throw ValidationError("unknown expert '" + s + "' (expected oracle, external:DIR or bank:PATH)");
}

/// A bank directory contributes every *.bin inside it.
inline std::unique_ptr<MemoryBankExpert> load_bank_expert(const std::filesystem::path& p) {
    namespace fs = std::filesystem;
    auto expert = std::make_unique<MemoryBankExpert>();
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no .bin memory banks in directory", p);
        for (const auto& f : files) expert->add(load_bank(f));
    } else {
        expert->add(load_bank(p));
    }
    return expert;
}

inline std::unique_ptr<VisionExpert> make_expert(const ExpertSpec& spec) {
    switch (spec.kind) {
        case ExpertKind::oracle: return std::make_unique<OracleExpert>();
        case ExpertKind::external: return load_external_maps(spec.path);
        case ExpertKind::memory_bank: return load_bank_expert(spec.path);
    }
    throw ValidationError("unknown expert kind");
}

// ---------------------------------------------------------------------------
// Worker pool

/// Runs fn(i) for i in [0, n) on up to `parallelism` threads. Errors are captured per index so the
/// caller can pick a deterministic one regardless of scheduling.
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, parallelism));
    if (threads == 1 || n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return errors;
}

inline void rethrow_first(const std::vector<std::exception_ptr>& errors) {
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Configuration and records

struct EvalConfig {
    BackendConfig backend;
    AblationFlags flags;
    std::uint64_t seed = 0;  // reference selection
    std::optional<std::filesystem::path> cache_dir;
    bool strict = false;
    int parallelism = 1;
    OverlayStyle style;
    ContourOptions contours;
};

struct PredictionRecord {
    std::string sample_id;
    std::string category;
    std::string true_class;
    std::string predicted_class;  // class name, Good or Unparsed
    bool expert_verdict = false;
    std::string flags;      // AblationFlags label
    std::string cache_key;  // empty when the pipeline stopped at the vision stage
    std::string raw_text;
    std::string error;      // backend failure in non-strict mode
};

inline OrderedJson to_json(const PredictionRecord& r) {
    OrderedJson j{{"sample_id", r.sample_id},         {"category", r.category},
                  {"true_class", r.true_class},       {"predicted_class", r.predicted_class},
                  {"expert_verdict", r.expert_verdict}, {"flags", r.flags},
                  {"cache_key", r.cache_key},         {"raw_text", r.raw_text}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline std::string to_ndjson(const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

/// Query-image digest (as the backend will see it) -> fine-grained class, "normal" for good samples.
/// Only mock backends consume it; it never enters a request.
inline TruthTable build_truth_table(const std::vector<const SampleRecord*>& samples, int parallelism) {
    std::vector<std::string> digests(samples.size());
    rethrow_first(parallel_for(samples.size(), parallelism, [&](std::size_t i) {
        digests[i] = pixel_digest(resize_and_encode(read_png_rgb(samples[i]->image_path)).image);
    }));
    TruthTable t;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string truth = samples[i]->is_good() ? "normal" : samples[i]->anomaly_class;
        auto [it, inserted] = t.emplace(digests[i], truth);
        if (!inserted && it->second != truth) {
            throw ValidationError("truth table: identical images with different classes (" + samples[i]->id + ")");
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Pipeline

/// One sample to push through detect -> overlay -> request -> classify, in some label space.
struct PipelineTask {
    const SampleRecord* sample = nullptr;
    std::string truth;
    const TaxonomyEntry* entry = nullptr;
    const std::vector<std::string>* class_names = nullptr;
};

namespace harness_detail {

inline std::map<std::string, RgbImage> load_references(const DatasetIndex& index, const std::vector<PipelineTask>& tasks,
                                                       std::uint64_t seed) {
    std::map<std::string, RgbImage> refs;
    for (const auto& t : tasks) {
        if (!refs.count(t.sample->category)) {
            refs[t.sample->category] = read_png_rgb(select_reference(index, t.sample->category, seed).image_path);
        }
    }
    return refs;
}

inline std::filesystem::path overlay_dir(const EvalConfig& cfg) { return *cfg.cache_dir / "overlays"; }

}  // namespace harness_detail

/// Records come back in task order whatever the parallelism. A vision-stage "normal" verdict
/// records Good and makes no gateway call.
inline std::vector<PredictionRecord> run_pipeline(const DatasetIndex& index, const std::vector<PipelineTask>& tasks,
                                                  const VisionExpert& expert, const EvalConfig& cfg, Gateway& gateway) {
    const auto refs = cfg.flags.reference_image ? harness_detail::load_references(index, tasks, cfg.seed)
                                                : std::map<std::string, RgbImage>{};
    const std::string flags_label = cfg.flags.label();
    std::vector<PredictionRecord> records(tasks.size());
    auto errors = parallel_for(tasks.size(), cfg.parallelism, [&](std::size_t i) {
        const auto& task = tasks[i];
        const auto& s = *task.sample;
        PredictionRecord rec;
        rec.sample_id = s.id;
        rec.category = s.category;
        rec.true_class = task.truth;
        rec.flags = flags_label;
        const RgbImage query = read_png_rgb(s.image_path);
        const DetectionResult det = expert.detect(query, s);
        rec.expert_verdict = det.is_anomalous;
        if (!det.is_anomalous) {
            rec.predicted_class = kPredictedGood;
            records[i] = std::move(rec);
            return;
        }
        RgbImage overlay;
        if (cfg.flags.visual_prompt) {
            OverlayStyle style = cfg.style;
            style.line_width = scaled_line_width(cfg.style, query.width(), query.height());
            overlay = render_overlay(query, extract_contours(det.mask, cfg.contours), style);
            if (cfg.cache_dir) write_png_rgb(overlay_cache_path(harness_detail::overlay_dir(cfg), s.id), overlay);
        }
        const RgbImage* ref = cfg.flags.reference_image ? &refs.at(s.category) : nullptr;
        const auto request = assemble_request(ref, query, cfg.flags.visual_prompt ? &overlay : nullptr, s.category,
                                              *task.entry, *task.class_names, cfg.flags);
        try {
            auto p = gateway.classify(request, s.id);
            rec.predicted_class = p.predicted_class;
            rec.cache_key = p.cache_key;
            rec.raw_text = p.raw_text;
        } catch (const BackendError& e) {
            if (cfg.strict) throw;
            rec.predicted_class = kUnparsed;
            rec.cache_key = cache_key(prepare(request, gateway.config()));
            rec.error = e.what();
        }
        records[i] = std::move(rec);
    });
    rethrow_first(errors);
    return records;
}

/// Backend selected by the config; mocks get a truth table over `samples`.
inline std::shared_ptr<Backend> backend_for(const EvalConfig& cfg, const std::vector<const SampleRecord*>& samples) {
    return make_backend(cfg.backend, backend_needs_truth(cfg.backend) ? build_truth_table(samples, cfg.parallelism) : TruthTable{});
}

inline OrderedJson backend_identity(const BackendConfig& b) {
    OrderedJson j{{"kind", b.kind}, {"model", b.model}, {"temperature", b.temperature}, {"max_tokens", b.max_tokens}};
    if (b.kind == "mock_constant") j["answer"] = b.answer;
    if (b.kind == "mock_noisy") {
        j["error_rate"] = b.error_rate;
        j["seed"] = b.mock_seed;
    }
    if (b.kind == "mock_length") j["min_chars"] = b.min_chars;
    return j;
}

// ---------------------------------------------------------------------------
// Classification evaluation

struct EvalResult {
    std::string config_digest;
    MetricsReport report;
    std::vector<PredictionRecord> records;
    std::size_t backend_failures = 0;
};

/// Hash of what determines the outcome: expert, backend identity, flags, seed, taxonomy and the
/// evaluated (sample, class) list. Parallelism, cache location and absolute paths are excluded.
inline std::string eval_config_digest(const std::string& protocol, const VisionExpert& expert, const EvalConfig& cfg,
                                      const Taxonomy& taxonomy, const std::vector<PipelineTask>& tasks,
                                      const OrderedJson& extra = {}) {
    OrderedJson j{{"protocol", protocol},
                  {"expert", expert.describe()},
                  {"backend", backend_identity(cfg.backend)},
                  {"flags", to_json(cfg.flags)},
                  {"seed", cfg.seed},
                  {"taxonomy", sha256_hex(to_json(taxonomy).dump())}};
    if (!extra.is_null()) j["extra"] = extra;
    OrderedJson samples = OrderedJson::array();
    for (const auto& t : tasks) samples.push_back({t.sample->id, t.truth});
    j["samples"] = samples;
    return sha256_hex(j.dump());
}

inline std::vector<const SampleRecord*> anomalous_test_samples(const DatasetIndex& index) {
    std::vector<const SampleRecord*> out;
    for (const auto& s : index.samples())
        if (s.split == Split::test && !s.is_good()) out.push_back(&s);
    return out;
}

/// Evaluation set: anomalous test samples. `backend` overrides the configured one (tests count calls).
inline EvalResult run_classification_eval(const DatasetIndex& index, const Taxonomy& taxonomy, const VisionExpert& expert,
                                          const EvalConfig& cfg, std::shared_ptr<Backend> backend = nullptr) {
    validate_taxonomy(taxonomy, index, cfg.flags);
    const auto samples = anomalous_test_samples(index);
    if (samples.empty()) throw ValidationError("eval: index has no anomalous test samples");
    std::vector<PipelineTask> tasks;
    for (const auto* s : samples) {
        tasks.push_back({s, s->anomaly_class, &taxonomy.at(s->category), &index.class_set(s->category)});
    }
    if (!backend) backend = backend_for(cfg, samples);
    Gateway gateway(cfg.backend, backend, cfg.cache_dir);

    EvalResult out;
    out.config_digest = eval_config_digest("classification", expert, cfg, taxonomy, tasks);
    out.records = run_pipeline(index, tasks, expert, cfg, gateway);

    std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_category;
    for (const auto& r : out.records) {
        by_category[r.category].emplace_back(r.true_class, r.predicted_class);
        if (!r.error.empty()) ++out.backend_failures;
    }
    std::vector<CategoryMetrics> cats;
    for (const auto& [cat, recs] : by_category) cats.push_back(evaluate_category(cat, confusion_matrix(recs, index.class_set(cat))));
    out.report = aggregate_report(std::move(cats));
    return out;
}

inline OrderedJson to_json(const EvalResult& r, const AblationFlags& flags) {
    OrderedJson j;
    j["config_digest"] = r.config_digest;
    j["protocol"] = "classification";
    j["flags"] = to_json(flags);
    j["samples"] = r.records.size();
    j["backend_failures"] = r.backend_failures;
    const OrderedJson metrics = to_json(r.report);
    for (const auto& [k, v] : metrics.items()) j[k] = v;
    return j;
}

// ---------------------------------------------------------------------------
// Anomaly vs defect triage

inline constexpr const char* kTriageNormal = "normal";
inline constexpr const char* kTriageAnomaly = "anomaly";
inline constexpr const char* kTriageDefect = "defect";

inline const std::vector<std::string>& triage_classes() {
    static const std::vector<std::string> c{kTriageNormal, kTriageAnomaly, kTriageDefect};
    return c;
}

struct TriageConfig {
    double negligible_fraction = 0.30;
    int num_seeds = 5;
    std::vector<std::uint64_t> seeds;  // explicit list overrides 0..num_seeds-1

    std::vector<std::uint64_t> effective_seeds() const {
        if (!seeds.empty()) return seeds;
        std::vector<std::uint64_t> s;
        for (int i = 0; i < num_seeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
        return s;
    }
};

inline void validate(const TriageConfig& c) {
    if (!(c.negligible_fraction > 0.0 && c.negligible_fraction < 1.0)) throw ValidationError("triage: fraction must be in (0, 1)");
    if (c.seeds.empty() && c.num_seeds < 1) throw ValidationError("triage: need at least one seed");
    auto s = c.effective_seeds();
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ValidationError("triage: duplicate seed");
}

struct TriagePartition {
    std::vector<std::string> negligible;  // lexicographic
    std::vector<std::string> defect;
};

/// ceil(fraction * |C|) classes become negligible, chosen by a shuffle seeded from (seed, category).
inline TriagePartition triage_partition(const std::vector<std::string>& class_set, double fraction, std::uint64_t seed,
                                        const std::string& category) {
    const auto n = class_set.size();
    const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    if (count < 1 || count >= n) {
        throw ValidationError("triage: fraction " + std::to_string(fraction) + " of " + std::to_string(n) + " classes in '" +
                              category + "' leaves an empty side");
    }
    auto order = class_set;
    std::sort(order.begin(), order.end());
    SeededRng rng(mix_seed(seed, category));
    rng.shuffle(order);
    TriagePartition p;
    p.negligible.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    p.defect.assign(order.begin() + static_cast<std::ptrdiff_t>(count), order.end());
    std::sort(p.negligible.begin(), p.negligible.end());
    std::sort(p.defect.begin(), p.defect.end());
    return p;
}

/// Superclass prompt content. Member lists use "It is one of: a (..); b (..)." so the grouping is
/// visible to the model.
inline TaxonomyEntry triage_entry(const TaxonomyEntry& fine, const TriagePartition& p) {
    auto members = [&](const std::vector<std::string>& classes) {
        std::string s = "It is one of: ";
        for (std::size_t i = 0; i < classes.size(); ++i) {
            std::string d = fine.classes.at(classes[i]);
            while (!d.empty() && d.back() == '.') d.pop_back();
            s += classes[i] + " (" + d + ")" + (i + 1 < classes.size() ? "; " : ".");
        }
        return s;
    };
    TaxonomyEntry e;
    e.normal_description = fine.normal_description;
    e.classification_strategy = fine.classification_strategy;
    e.classes[kTriageNormal] = "The object shows no deviation from its normal appearance.";
    e.classes[kTriageAnomaly] = "A negligible anomaly that is acceptable for production. " + members(p.negligible);
    e.classes[kTriageDefect] = "A critical defect that requires intervention. " + members(p.defect);
    return e;
}

struct TriageScores {
    double normal = 0, anomaly = 0, defect = 0;
    double total = 0;  // mean of the three superclass scores
};

/// Mean of each column; `total` is the mean of the per-category totals.
inline TriageScores mean_scores(const std::vector<TriageScores>& v) {
    if (v.empty()) throw ValidationError("triage: no scores to average");
    std::vector<double> n, a, d, t;
    for (const auto& s : v) {
        n.push_back(s.normal);
        a.push_back(s.anomaly);
        d.push_back(s.defect);
        t.push_back(s.total);
    }
    return {unweighted_mean(n), unweighted_mean(a), unweighted_mean(d), unweighted_mean(t)};
}

struct TriageSeedResult {
    std::uint64_t seed = 0;
    TriagePartition partition;
    TriageScores scores;           // per-superclass TP/(TP+FP+FN)
    TriageScores one_vs_rest;      // binary accuracy (N - FP - FN) / N
    double three_way_accuracy = 0;  // diagonal / N
    ConfusionMatrix confusion{triage_classes()};
};

struct TriageCategoryResult {
    std::string category;
    std::vector<TriageSeedResult> seeds;
    TriageScores mean;
    TriageScores mean_one_vs_rest;
    double mean_three_way_accuracy = 0;
};

struct TriageReport {
    std::string config_digest;
    TriageConfig config;
    std::vector<TriageCategoryResult> per_category;
    std::vector<std::string> skipped;  // fewer than two anomaly classes
    TriageScores mean;
    TriageScores mean_one_vs_rest;
    double mean_three_way_accuracy = 0;
    std::vector<PredictionRecord> records;
    std::size_t backend_failures = 0;
};

inline TriageSeedResult score_triage(std::uint64_t seed, TriagePartition partition, const ConfusionMatrix& m) {
    TriageSeedResult r;
    r.seed = seed;
    r.partition = std::move(partition);
    r.confusion = m;
    const double n = static_cast<double>(m.total());
    double diag = 0;
    double score[3], ovr[3];
    for (std::size_t c = 0; c < 3; ++c) {
        const auto s = class_stats(m, c);
        score[c] = s.accuracy_term;
        ovr[c] = (n - static_cast<double>(s.fp) - static_cast<double>(s.fn)) / n;
        diag += static_cast<double>(s.tp);
    }
    r.scores = {score[0], score[1], score[2], (score[0] + score[1] + score[2]) / 3};
    r.one_vs_rest = {ovr[0], ovr[1], ovr[2], (ovr[0] + ovr[1] + ovr[2]) / 3};
    r.three_way_accuracy = diag / n;
    return r;
}

/// Full test split (normal samples included), once per seed.
inline TriageReport run_triage_eval(const DatasetIndex& index, const Taxonomy& taxonomy, const VisionExpert& expert,
                                    const TriageConfig& tcfg, const EvalConfig& cfg, std::shared_ptr<Backend> backend = nullptr,
                                    std::ostream* warnings = &std::cerr) {
    validate(tcfg);
    validate_taxonomy(taxonomy, index, cfg.flags);
    TriageReport out;
    out.config = tcfg;
    std::vector<std::string> categories;
    for (const auto& cat : index.categories()) {
        if (index.class_set(cat).size() < 2) {
            out.skipped.push_back(cat);
            if (warnings) *warnings << "warning: triage skips '" << cat << "' (fewer than two anomaly classes)\n";
        } else {
            categories.push_back(cat);
        }
    }
    if (categories.empty()) throw ValidationError("triage: no category has two or more anomaly classes");
    const auto seeds = tcfg.effective_seeds();

    // Partitions first: a bad fraction fails before any image is read.
    std::map<std::pair<std::uint64_t, std::string>, TriagePartition> partitions;
    std::map<std::pair<std::uint64_t, std::string>, TaxonomyEntry> entries;
    for (auto seed : seeds)
        for (const auto& cat : categories) {
            auto p = triage_partition(index.class_set(cat), tcfg.negligible_fraction, seed, cat);
            entries[{seed, cat}] = triage_entry(taxonomy.at(cat), p);
            partitions[{seed, cat}] = std::move(p);
        }

    std::vector<const SampleRecord*> samples;
    for (const auto& cat : categories)
        for (const auto* s : index.select(cat, Split::test)) samples.push_back(s);
    if (!backend) backend = backend_for(cfg, samples);
    Gateway gateway(cfg.backend, backend, cfg.cache_dir);

    std::vector<PipelineTask> tasks;
    for (auto seed : seeds)
        for (const auto* s : samples) {
            const auto& p = partitions.at({seed, s->category});
            std::string truth = kTriageNormal;
            if (!s->is_good()) {
                truth = std::binary_search(p.negligible.begin(), p.negligible.end(), s->anomaly_class) ? kTriageAnomaly
                                                                                                       : kTriageDefect;
            }
            tasks.push_back({s, truth, &entries.at({seed, s->category}), &triage_classes()});
        }
    OrderedJson extra{{"fraction", tcfg.negligible_fraction}, {"seeds", seeds}};
    out.config_digest = eval_config_digest("triage", expert, cfg, taxonomy, tasks, extra);
    out.records = run_pipeline(index, tasks, expert, cfg, gateway);

    std::map<std::string, std::vector<TriageSeedResult>> per_cat;
    std::size_t k = 0;
    for (auto seed : seeds) {
        std::map<std::string, ConfusionMatrix> m;
        for (const auto& cat : categories) m.emplace(cat, ConfusionMatrix(triage_classes()));
        for (std::size_t i = 0; i < samples.size(); ++i, ++k) {
            const auto& r = out.records[k];
            if (!r.error.empty()) ++out.backend_failures;
            const std::string pred = r.predicted_class == kPredictedGood ? kTriageNormal : r.predicted_class;
            m.at(r.category).add(r.true_class, pred);
        }
        for (const auto& cat : categories) per_cat[cat].push_back(score_triage(seed, partitions.at({seed, cat}), m.at(cat)));
    }
    std::vector<TriageScores> totals, ovr_totals;
    std::vector<double> three_way;
    for (auto& [cat, results] : per_cat) {
        TriageCategoryResult c;
        c.category = cat;
        std::vector<TriageScores> s, o;
        std::vector<double> t;
        for (const auto& r : results) {
            s.push_back(r.scores);
            o.push_back(r.one_vs_rest);
            t.push_back(r.three_way_accuracy);
        }
        c.mean = mean_scores(s);
        c.mean_one_vs_rest = mean_scores(o);
        c.mean_three_way_accuracy = unweighted_mean(t);
        c.seeds = std::move(results);
        totals.push_back(c.mean);
        ovr_totals.push_back(c.mean_one_vs_rest);
        three_way.push_back(c.mean_three_way_accuracy);
        out.per_category.push_back(std::move(c));
    }
    out.mean = mean_scores(totals);
    out.mean_one_vs_rest = mean_scores(ovr_totals);
    out.mean_three_way_accuracy = unweighted_mean(three_way);
    return out;
}

inline OrderedJson to_json(const TriageScores& s) {
    return {{"normal", s.normal}, {"anomaly", s.anomaly}, {"defect", s.defect}, {"total", s.total}};
}

inline OrderedJson to_json(const TriageReport& r) {
    OrderedJson j;
    j["config_digest"] = r.config_digest;
    j["protocol"] = "triage";
    j["fraction"] = r.config.negligible_fraction;
    j["seeds"] = r.config.effective_seeds();
    j["backend_failures"] = r.backend_failures;
    OrderedJson cats = OrderedJson::array();
    for (const auto& c : r.per_category) {
        OrderedJson seeds = OrderedJson::array();
        for (const auto& s : c.seeds) {
            seeds.push_back({{"seed", s.seed},
                             {"negligible", s.partition.negligible},
                             {"defect", s.partition.defect},
                             {"scores", to_json(s.scores)},
                             {"one_vs_rest", to_json(s.one_vs_rest)},
                             {"three_way_accuracy", s.three_way_accuracy},
                             {"confusion", to_json(s.confusion)}});
        }
        cats.push_back({{"category", c.category},
                        {"mean", to_json(c.mean)},
                        {"one_vs_rest", to_json(c.mean_one_vs_rest)},
                        {"three_way_accuracy", c.mean_three_way_accuracy},
                        {"per_seed", seeds}});
    }
    j["per_category"] = cats;
    j["skipped"] = r.skipped;
    j["mean"] = to_json(r.mean);
    j["one_vs_rest"] = to_json(r.mean_one_vs_rest);
    j["three_way_accuracy"] = r.mean_three_way_accuracy;
    return j;
}

/// One row per category plus Mean: normal, anomaly, defect, total in percent with one decimal.
inline std::string to_csv(const TriageReport& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << "category,normal,anomaly,defect,total\n";
    auto row = [&](const std::string& name, const TriageScores& s) {
        out << name << ',' << 100 * s.normal << ',' << 100 * s.anomaly << ',' << 100 * s.defect << ',' << 100 * s.total << '\n';
    };
    for (const auto& c : r.per_category) row(c.category, c.mean);
    row("Mean", r.mean);
    return out.str();
}

// ---------------------------------------------------------------------------
// Prompt ablation

struct AblationResult {
    std::vector<AblationFlags> flag_sets;
    std::vector<std::string> categories;
    std::vector<std::vector<double>> acc;  // [category][flag set]
    std::vector<double> mean;              // per flag set
    std::vector<EvalResult> runs;
};

inline void reject_duplicate_flag_sets(const std::vector<AblationFlags>& sets) {
    if (sets.empty()) throw ValidationError("ablation: no flag sets");
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j)
            if (sets[i] == sets[j]) throw ValidationError("ablation: duplicate flag set '" + sets[i].label() + "'");
}

/// One classification run per flag set over a shared backend and cache.
inline AblationResult run_ablation(const DatasetIndex& index, const Taxonomy& taxonomy, const VisionExpert& expert,
                                   const EvalConfig& cfg, const std::vector<AblationFlags>& flag_sets,
                                   std::shared_ptr<Backend> backend = nullptr) {
    reject_duplicate_flag_sets(flag_sets);
    for (const auto& f : flag_sets) validate_taxonomy(taxonomy, index, f);
    if (!backend) backend = backend_for(cfg, anomalous_test_samples(index));
    AblationResult out;
    out.flag_sets = flag_sets;
    for (const auto& f : flag_sets) {
        EvalConfig c = cfg;
        c.flags = f;
        out.runs.push_back(run_classification_eval(index, taxonomy, expert, c, backend));
        out.mean.push_back(out.runs.back().report.mean_acc);
    }
    for (const auto& cm : out.runs.front().report.per_category) out.categories.push_back(cm.category);
    for (std::size_t ci = 0; ci < out.categories.size(); ++ci) {
        std::vector<double> row;
        for (const auto& run : out.runs) row.push_back(run.report.per_category[ci].acc);
        out.acc.push_back(std::move(row));
    }
    return out;
}

inline OrderedJson to_json(const AblationResult& r) {
    OrderedJson j;
    OrderedJson labels = OrderedJson::array(), sets = OrderedJson::array(), digests = OrderedJson::array();
    for (std::size_t i = 0; i < r.flag_sets.size(); ++i) {
        labels.push_back(r.flag_sets[i].label());
        sets.push_back(to_json(r.flag_sets[i]));
        digests.push_back(r.runs[i].config_digest);
    }
    j["protocol"] = "ablation";
    j["columns"] = labels;
    j["flag_sets"] = sets;
    j["config_digests"] = digests;
    OrderedJson rows = OrderedJson::array();
    for (std::size_t ci = 0; ci < r.categories.size(); ++ci) rows.push_back({{"category", r.categories[ci]}, {"acc", r.acc[ci]}});
    j["per_category"] = rows;
    j["mean"] = r.mean;
    return j;
}

/// Categories by flag sets, accuracy in percent with one decimal.
inline std::string to_csv(const AblationResult& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << "category";
    for (const auto& f : r.flag_sets) out << ',' << f.label();
    out << '\n';
    for (std::size_t ci = 0; ci < r.categories.size(); ++ci) {
        out << r.categories[ci];
        for (double v : r.acc[ci]) out << ',' << 100 * v;
        out << '\n';
    }
    out << "Mean";
    for (double v : r.mean) out << ',' << 100 * v;
    out << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Detector quality on a benchmark with ground-truth masks

struct DetectorQuality {
    std::map<std::string, double> auroc;         // per category
    std::map<std::string, double> localization;  // fraction of anomalous samples with argmax in the dilated mask
    double mean_auroc = 0;
    double localization_rate = 0;  // pooled over categories
};

namespace harness_detail {

inline bool near_mask(const Mask& m, int x, int y, int radius) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy > radius * radius) continue;
            const int u = x + dx, v = y + dy;
            if (u >= 0 && v >= 0 && u < m.width() && v < m.height() && m(u, v)) return true;
        }
    return false;
}

}  // namespace harness_detail

inline DetectorQuality measure_detector(const DatasetIndex& index, const MemoryBankExpert& expert, int parallelism = 1) {
    DetectorQuality q;
    std::size_t hits = 0, anomalous = 0;
    for (const auto& cat : index.categories()) {
        const auto& bank = expert.bank(cat);
        const auto test = index.select(cat, Split::test);
        std::vector<double> scores(test.size());
        std::vector<char> hit(test.size(), 0);
        rethrow_first(parallel_for(test.size(), parallelism, [&](std::size_t i) {
            const auto s = score_image(bank, read_png_rgb(test[i]->image_path));
            scores[i] = s.image_score;
            if (test[i]->is_good()) return;
            if (!test[i]->mask_path) throw ValidationError("detector quality: '" + test[i]->id + "' has no mask");
            const auto& map = s.map;
            const auto it = std::max_element(map.values().begin(), map.values().end());
            const auto at = static_cast<int>(it - map.values().begin());
            hit[i] = harness_detail::near_mask(read_png_mask(*test[i]->mask_path), at % map.width(), at / map.width(),
                                               smoothing_radius(bank.config.sigma));
        }));
        std::vector<double> normal, bad;
        std::size_t cat_hits = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            (test[i]->is_good() ? normal : bad).push_back(scores[i]);
            cat_hits += static_cast<std::size_t>(hit[i]);
        }
        q.auroc[cat] = auroc(normal, bad);
        q.localization[cat] = static_cast<double>(cat_hits) / static_cast<double>(bad.size());
        hits += cat_hits;
        anomalous += bad.size();
    }
    std::vector<double> a;
    for (const auto& [c, v] : q.auroc) a.push_back(v);
    q.mean_auroc = unweighted_mean(a);
    q.localization_rate = static_cast<double>(hits) / static_cast<double>(anomalous);
    return q;
}

}  // namespace velm
