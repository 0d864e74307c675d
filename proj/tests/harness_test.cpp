#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "velm/velm.hpp"

namespace velm {
namespace {

namespace fs = std::filesystem;

SynthConfig small_config() {
    SynthConfig c;
    c.categories = {"checker", "stripes"};
    c.image_size = 64;
    c.train_samples = 6;
    c.good_test_samples = 4;
    c.test_per_kind = 4;
    c.seed = 11;
    return c;
}

/// One small benchmark shared by the whole binary.
struct Bench {
    testing::TempDir dir{"velm_harness"};
    DatasetIndex index;
    Taxonomy taxonomy;
    Bench() {
        generate_synthetic_benchmark(small_config(), dir.path());
        index = scan_dataset(dir.path(), Layout::mvtec);
        taxonomy = load_taxonomy(dir / "taxonomy.json");
    }
};

const Bench& bench() {
    static Bench b;
    return b;
}

EvalConfig mock_config(const std::string& kind) {
    EvalConfig c;
    c.backend.kind = kind;
    c.backend.backoff_s = {0, 0, 0};
    return c;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        out[e.path().lexically_relative(root).generic_string()] = s.str();
    }
    return out;
}

/// Counts calls and always fails.
class DownBackend final : public Backend {
public:
    std::string complete(const PreparedRequest&) override {
        count();
        throw BackendError("service unavailable", {}, false);
    }
};

/// Oracle that calls every other anomalous sample normal.
class HalfBlindExpert final : public VisionExpert {
public:
    ExpertKind kind() const override { return ExpertKind::oracle; }
    std::string describe() const override { return "half_blind"; }
    DetectionResult detect(const RgbImage& image, const SampleRecord& s) const override {
        auto r = oracle_.detect(image, s);
        if (s.id.ends_with("1.png") || s.id.ends_with("3.png")) r.is_anomalous = false;
        return r;
    }

private:
    OracleExpert oracle_;
};

// ---------------------------------------------------------------------------

TEST(Synthetic, ByteIdenticalAcrossRuns) {
    testing::TempDir a, b;
    auto cfg = small_config();
    cfg.categories = {"mottle"};
    generate_synthetic_benchmark(cfg, a.path());
    generate_synthetic_benchmark(cfg, b.path());
    const auto ta = read_tree(a.path()), tb = read_tree(b.path());
    EXPECT_EQ(ta.size(), 6u + 4u + 3u * 4u * 2u + 1u);
    EXPECT_EQ(ta, tb);
    cfg.seed = 12;
    testing::TempDir c;
    generate_synthetic_benchmark(cfg, c.path());
    EXPECT_NE(read_tree(c.path()), ta);
}

TEST(Synthetic, MasksAreExact) {
    const auto cfg = small_config();
    for (std::size_t ci = 0; ci < 3; ++ci)
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto good = render_synthetic_sample(cfg, ci, {}, seed);
            EXPECT_TRUE(mask_empty(good.mask));
            for (const auto& kind : synth_kinds()) {
                const auto bad = render_synthetic_sample(cfg, ci, kind, seed);
                ASSERT_FALSE(mask_empty(bad.mask)) << kind;
                std::size_t changed_inside = 0, area = 0;
                for (int y = 0; y < cfg.image_size; ++y)
                    for (int x = 0; x < cfg.image_size; ++x) {
                        if (bad.mask(x, y)) {
                            ++area;
                            changed_inside += !(bad.image.at(x, y) == good.image.at(x, y));
                        } else {
                            ASSERT_EQ(bad.image.at(x, y), good.image.at(x, y)) << kind << " " << x << "," << y;
                        }
                    }
                EXPECT_GT(changed_inside * 10, area * 9) << kind;
            }
        }
}

TEST(Synthetic, LayoutAndTaxonomy) {
    const auto& b = bench();
    EXPECT_EQ(b.index.categories(), (std::vector<std::string>{"checker", "stripes"}));
    EXPECT_EQ(b.index.class_set("checker"), synth_kinds());
    EXPECT_EQ(b.index.select("checker", Split::train).size(), 6u);
    EXPECT_EQ(b.index.test_count("stripes", "scratch"), 4u);
    EXPECT_NO_THROW(validate_taxonomy(b.taxonomy, b.index));
    EXPECT_THROW(generate_synthetic_benchmark(SynthConfig{.kinds = {"dent"}}, fs::temp_directory_path()), ValidationError);
}

TEST(ExpertSpec, Parsing) {
    EXPECT_EQ(parse_expert_spec("oracle").kind, ExpertKind::oracle);
    const auto e = parse_expert_spec("external:/maps");
    EXPECT_EQ(e.kind, ExpertKind::external);
    EXPECT_EQ(e.path, "/maps");
    EXPECT_EQ(parse_expert_spec("bank:b.bin").kind, ExpertKind::memory_bank);
    EXPECT_THROW(parse_expert_spec("external:"), ValidationError);
    EXPECT_THROW(parse_expert_spec("patchcore"), ValidationError);
    EXPECT_THROW(make_expert(parse_expert_spec("external:/does/not/exist")), IoError);
}

TEST(ClassificationEval, OracleEchoIsPerfect) {
    const auto& b = bench();
    OracleExpert oracle;
    const auto r = run_classification_eval(b.index, b.taxonomy, oracle, mock_config("mock_echo"));
    EXPECT_EQ(r.report.mean_acc, 1.0);
    EXPECT_EQ(r.report.mean_f1, 1.0);
    EXPECT_EQ(r.report.mean_kappa, 1.0);
    EXPECT_EQ(r.records.size(), 2u * 3u * 4u);
    for (const auto& rec : r.records) {
        EXPECT_TRUE(rec.expert_verdict);
        EXPECT_EQ(rec.predicted_class, rec.true_class);
        EXPECT_EQ(rec.flags, "full");
    }
}

TEST(ClassificationEval, NormalVerdictShortCircuits) {
    const auto& b = bench();
    HalfBlindExpert expert;
    const auto samples = anomalous_test_samples(b.index);
    auto backend = std::make_shared<EchoBackend>(build_truth_table(samples, 2));
    const auto r = run_classification_eval(b.index, b.taxonomy, expert, mock_config("mock_echo"), backend);
    std::size_t flagged = 0, good = 0;
    for (const auto& rec : r.records) {
        if (rec.expert_verdict) {
            ++flagged;
            EXPECT_FALSE(rec.cache_key.empty());
        } else {
            ++good;
            EXPECT_EQ(rec.predicted_class, kPredictedGood);
            EXPECT_TRUE(rec.cache_key.empty());
        }
    }
    ASSERT_GT(good, 0u);
    EXPECT_EQ(backend->calls(), flagged);
    EXPECT_LT(r.report.mean_acc, 1.0);
    // misses are FN for the true class only
    for (const auto& c : r.report.per_category)
        for (std::size_t i = 0; i < c.confusion.size(); ++i) EXPECT_EQ(c.confusion.fp(i), 0u);
}

TEST(ClassificationEval, ConstantAnswerWorkedExample) {
    // 3 blob samples and 1 scratch sample, model always says scratch: (0/3 + 1/4) / 2.
    const auto& b = bench();
    std::vector<SampleRecord> picked;
    int blobs = 0, scratches = 0;
    for (const auto& s : b.index.samples()) {
        if (s.category != "checker") continue;
        if (s.split == Split::train) picked.push_back(s);
        if (s.anomaly_class == "blob" && blobs < 3) ++blobs, picked.push_back(s);
        if (s.anomaly_class == "scratch" && scratches < 1) ++scratches, picked.push_back(s);
    }
    const DatasetIndex index(picked);
    Taxonomy tax{{"checker", b.taxonomy.at("checker")}};
    tax["checker"].classes.erase("color_patch");
    auto cfg = mock_config("mock_constant");
    cfg.backend.answer = "scratch";
    OracleExpert oracle;
    const auto r = run_classification_eval(index, tax, oracle, cfg);
    EXPECT_DOUBLE_EQ(r.report.mean_acc, 0.125);
}

TEST(ClassificationEval, ParallelismDoesNotChangeReport) {
    const auto& b = bench();
    OracleExpert oracle;
    auto cfg = mock_config("mock_noisy");
    cfg.backend.error_rate = 0.4;
    cfg.backend.mock_seed = 5;
    cfg.parallelism = 1;
    const auto one = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    cfg.parallelism = 8;
    const auto eight = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    EXPECT_EQ(to_json(one, cfg.flags).dump(), to_json(eight, cfg.flags).dump());
    EXPECT_EQ(to_ndjson(one.records), to_ndjson(eight.records));
    EXPECT_LT(one.report.mean_acc, 1.0);
}

TEST(ClassificationEval, RecordsJoinCacheEntries) {
    const auto& b = bench();
    testing::TempDir cache;
    OracleExpert oracle;
    auto cfg = mock_config("mock_echo");
    cfg.cache_dir = cache.path();
    cfg.parallelism = 4;
    const auto r = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    std::set<std::string> ids;
    ResponseCache rc(cache.path());
    for (const auto& rec : r.records) {
        EXPECT_TRUE(ids.insert(rec.sample_id).second);
        ASSERT_NE(b.index.find(rec.sample_id), nullptr);
        const auto entry = rc.load(rec.cache_key);
        ASSERT_TRUE(entry.has_value()) << rec.sample_id;
        EXPECT_EQ(entry->raw_text, rec.raw_text);
        EXPECT_TRUE(fs::is_regular_file(overlay_cache_path(cache / "overlays", rec.sample_id)));
    }
    // replaying the cache needs no truth table and no network
    cfg.backend.kind = "replay";
    const auto replay = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    EXPECT_EQ(to_json(replay, cfg.flags)["per_category"].dump(), to_json(r, cfg.flags)["per_category"].dump());
}

TEST(ClassificationEval, DigestIgnoresPlumbing) {
    const auto& b = bench();
    OracleExpert oracle;
    auto cfg = mock_config("mock_echo");
    testing::TempDir cache;
    const auto a = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    cfg.parallelism = 3;
    cfg.cache_dir = cache.path();
    const auto c = run_classification_eval(b.index, b.taxonomy, oracle, cfg);
    EXPECT_EQ(a.config_digest, c.config_digest);
    cfg.flags.classification_strategy = false;
    EXPECT_NE(run_classification_eval(b.index, b.taxonomy, oracle, cfg).config_digest, a.config_digest);
}

TEST(ClassificationEval, BackendFailures) {
    const auto& b = bench();
    OracleExpert oracle;
    auto down = std::make_shared<DownBackend>();
    auto cfg = mock_config("mock_echo");
    const auto r = run_classification_eval(b.index, b.taxonomy, oracle, cfg, down);
    EXPECT_EQ(r.backend_failures, r.records.size());
    for (const auto& rec : r.records) {
        EXPECT_EQ(rec.predicted_class, kUnparsed);
        EXPECT_FALSE(rec.error.empty());
    }
    EXPECT_EQ(r.report.mean_acc, 0.0);

    cfg.strict = true;
    cfg.parallelism = 4;
    try {
        run_classification_eval(b.index, b.taxonomy, oracle, cfg, down);
        FAIL() << "strict mode should abort";
    } catch (const BackendError& e) {
        // lowest-index failure, whatever thread hit first
        EXPECT_EQ(e.sample_id(), anomalous_test_samples(b.index).front()->id);
    }
}

TEST(ClassificationEval, TaxonomyMismatchAbortsBeforeAnyCall) {
    const auto& b = bench();
    OracleExpert oracle;
    auto tax = b.taxonomy;
    tax["stripes"].classes.erase("blob");
    auto backend = std::make_shared<ConstantBackend>("blob");
    EXPECT_THROW(run_classification_eval(b.index, tax, oracle, mock_config("mock_constant"), backend), ValidationError);
    EXPECT_EQ(backend->calls(), 0u);
}

// ---------------------------------------------------------------------------

TEST(Triage, PartitionRules) {
    const std::vector<std::string> c{"a", "b", "c", "d", "e", "f", "g"};
    const auto p = triage_partition(c, 0.3, 2, "bottle");
    EXPECT_EQ(p.negligible.size(), 3u);  // ceil(2.1)
    EXPECT_EQ(p.defect.size(), 4u);
    for (int rep = 0; rep < 3; ++rep) {
        const auto q = triage_partition(c, 0.3, 2, "bottle");
        EXPECT_EQ(q.negligible, p.negligible);
        EXPECT_EQ(q.defect, p.defect);
    }
    // order of the class set does not matter
    auto shuffled = c;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_EQ(triage_partition(shuffled, 0.3, 2, "bottle").negligible, p.negligible);
    EXPECT_EQ(triage_partition({"a", "b"}, 0.3, 0, "x").negligible.size(), 1u);
    EXPECT_EQ(triage_partition({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"}, 0.3, 0, "x").negligible.size(), 3u);
    EXPECT_THROW(triage_partition({"a", "b", "c"}, 0.9, 0, "x"), ValidationError);
    EXPECT_THROW(triage_partition({"a"}, 0.3, 0, "x"), ValidationError);

    // every class ends up negligible for some seed
    std::set<std::string> seen;
    for (std::uint64_t s = 0; s < 50; ++s)
        for (const auto& n : triage_partition(c, 0.3, s, "bottle").negligible) seen.insert(n);
    EXPECT_EQ(seen.size(), c.size());
}

TEST(Triage, PerfectPredictor) {
    const auto& b = bench();
    OracleExpert oracle;
    TriageConfig t;
    t.num_seeds = 2;
    std::ostringstream warnings;
    const auto r = run_triage_eval(b.index, b.taxonomy, oracle, t, mock_config("mock_echo"), nullptr, &warnings);
    EXPECT_EQ(r.per_category.size(), 2u);
    EXPECT_EQ(r.records.size(), 2u * 2u * (4u + 12u));
    EXPECT_EQ(r.mean.normal, 1.0);
    EXPECT_EQ(r.mean.anomaly, 1.0);
    EXPECT_EQ(r.mean.defect, 1.0);
    EXPECT_EQ(r.mean.total, 1.0);
    EXPECT_EQ(r.mean_three_way_accuracy, 1.0);
    EXPECT_EQ(r.mean_one_vs_rest.total, 1.0);
    EXPECT_TRUE(warnings.str().empty());
    for (const auto& c : r.per_category) {
        ASSERT_EQ(c.seeds.size(), 2u);
        EXPECT_EQ(c.seeds[0].partition.negligible.size(), 1u);  // ceil(0.3 * 3)
    }
}

TEST(Triage, NormalSamplesNeverReachTheBackend) {
    const auto& b = bench();
    OracleExpert oracle;
    std::vector<const SampleRecord*> test;
    for (const auto& s : b.index.samples())
        if (s.split == Split::test) test.push_back(&s);
    auto backend = std::make_shared<EchoBackend>(build_truth_table(test, 2));
    TriageConfig t;
    t.seeds = {3};
    const auto r = run_triage_eval(b.index, b.taxonomy, oracle, t, mock_config("mock_echo"), backend);
    EXPECT_EQ(backend->calls(), 12u * 2u);
    for (const auto& rec : r.records) EXPECT_EQ(rec.true_class == kTriageNormal, rec.predicted_class == kPredictedGood);
}

TEST(Triage, ScoresAgainstHandCount) {
    ConfusionMatrix m(triage_classes());
    // normal: 4 right; anomaly: 2 right, 1 called defect; defect: 3 right, 1 Unparsed
    m.add("normal", "normal", 4);
    m.add("anomaly", "anomaly", 2);
    m.add("anomaly", "defect", 1);
    m.add("defect", "defect", 3);
    m.add("defect", kUnparsed, 1);
    const auto s = score_triage(0, {}, m);
    EXPECT_DOUBLE_EQ(s.scores.normal, 1.0);
    EXPECT_DOUBLE_EQ(s.scores.anomaly, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.scores.defect, 3.0 / 5.0);
    EXPECT_DOUBLE_EQ(s.scores.total, (1.0 + 2.0 / 3.0 + 0.6) / 3.0);
    EXPECT_DOUBLE_EQ(s.one_vs_rest.anomaly, 10.0 / 11.0);
    EXPECT_DOUBLE_EQ(s.one_vs_rest.defect, 9.0 / 11.0);
    EXPECT_DOUBLE_EQ(s.three_way_accuracy, 9.0 / 11.0);
}

TEST(Triage, SkipsSingleClassCategoriesAndValidates) {
    const auto& b = bench();
    std::vector<SampleRecord> picked;
    for (const auto& s : b.index.samples())
        if (s.category == "stripes" || (s.anomaly_class != "scratch" && s.anomaly_class != "color_patch")) picked.push_back(s);
    const DatasetIndex index(picked);
    ASSERT_EQ(index.class_set("checker").size(), 1u);
    Taxonomy tax = b.taxonomy;
    tax["checker"].classes = {{"blob", tax["checker"].classes.at("blob")}};
    OracleExpert oracle;
    std::ostringstream warnings;
    TriageConfig t;
    t.num_seeds = 1;
    const auto r = run_triage_eval(index, tax, oracle, t, mock_config("mock_echo"), nullptr, &warnings);
    EXPECT_EQ(r.skipped, std::vector<std::string>{"checker"});
    EXPECT_NE(warnings.str().find("checker"), std::string::npos);
    EXPECT_EQ(r.per_category.size(), 1u);

    t.negligible_fraction = 1.0;
    EXPECT_THROW(run_triage_eval(index, tax, oracle, t, mock_config("mock_echo")), ValidationError);
    t.negligible_fraction = 0.9;
    EXPECT_THROW(run_triage_eval(index, tax, oracle, t, mock_config("mock_echo")), ValidationError);
    t.negligible_fraction = 0.3;
    t.seeds = {1, 1};
    EXPECT_THROW(run_triage_eval(index, tax, oracle, t, mock_config("mock_echo")), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(Ablation, DuplicateFlagSetsRejectedBeforeAnyCall) {
    const auto& b = bench();
    OracleExpert oracle;
    auto backend = std::make_shared<ConstantBackend>("blob");
    AblationFlags no_vp;
    no_vp.visual_prompt = false;
    EXPECT_THROW(run_ablation(b.index, b.taxonomy, oracle, mock_config("mock_constant"), {AblationFlags{}, no_vp, no_vp}, backend),
                 ValidationError);
    EXPECT_EQ(backend->calls(), 0u);
    EXPECT_THROW(run_ablation(b.index, b.taxonomy, oracle, mock_config("mock_constant"), {}, backend), ValidationError);
}

TEST(Ablation, LengthSensitiveMockSeparatesAdColumn) {
    const auto& b = bench();
    AblationFlags no_ad;
    no_ad.anomaly_descriptions = false;
    // threshold between the longest AD-free prompt and the shortest full prompt
    std::size_t shortest_full = SIZE_MAX, longest_no_ad = 0;
    for (const auto& cat : b.index.categories()) {
        const auto& e = b.taxonomy.at(cat);
        shortest_full = std::min(shortest_full, build_text_prompt(cat, e, b.index.class_set(cat), {}).size());
        longest_no_ad = std::max(longest_no_ad, build_text_prompt(cat, e, b.index.class_set(cat), no_ad).size());
    }
    ASSERT_LT(longest_no_ad, shortest_full);
    auto cfg = mock_config("mock_length");
    cfg.backend.min_chars = shortest_full;
    OracleExpert oracle;
    const auto r = run_ablation(b.index, b.taxonomy, oracle, cfg, {AblationFlags{}, no_ad});
    ASSERT_EQ(r.categories.size(), 2u);
    for (std::size_t i = 0; i < r.categories.size(); ++i) {
        EXPECT_EQ(r.acc[i][0], 1.0);
        EXPECT_NE(r.acc[i][1], r.acc[i][0]) << r.categories[i];
    }
    const auto csv = to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "category,full,w/o AD");
    EXPECT_NE(csv.find("Mean,100.0,"), std::string::npos);
    EXPECT_EQ(to_json(r)["columns"].size(), 2u);
}

TEST(Ablation, SharedCacheServesIdenticalRequests) {
    const auto& b = bench();
    testing::TempDir cache;
    OracleExpert oracle;
    auto cfg = mock_config("mock_echo");
    cfg.cache_dir = cache.path();
    const auto samples = anomalous_test_samples(b.index);
    auto backend = std::make_shared<EchoBackend>(build_truth_table(samples, 2));
    AblationFlags no_nd;
    no_nd.normal_description = false;
    run_ablation(b.index, b.taxonomy, oracle, cfg, {AblationFlags{}, no_nd}, backend);
    EXPECT_EQ(backend->calls(), 2 * samples.size());
    // a second ablation containing the full set again is served from the cache for that column
    AblationFlags no_cs;
    no_cs.classification_strategy = false;
    run_ablation(b.index, b.taxonomy, oracle, cfg, {AblationFlags{}, no_cs}, backend);
    EXPECT_EQ(backend->calls(), 3 * samples.size());
}

// ---------------------------------------------------------------------------

TEST(DetectorQuality, MemoryBankOnSmallBenchmark) {
    const auto& b = bench();
    MemoryBankExpert expert;
    BankConfig cfg;
    cfg.features.patch_size = 8;
    cfg.features.stride = 4;
    cfg.sigma = 2.0;
    for (const auto& cat : b.index.categories()) expert.add(fit_category(b.index, cat, cfg));
    const auto q = measure_detector(b.index, expert, 4);
    EXPECT_EQ(q.auroc.size(), 2u);
    EXPECT_GE(q.mean_auroc, 0.9);
    EXPECT_GE(q.localization_rate, 0.8);
}

}  // namespace
}  // namespace velm
