// Acceptance suite: one PASS/FAIL line per criterion, details indented below it.
// Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <stack>
#include <thread>

#include "test_support.hpp"
#include "velm/velm.hpp"

namespace fs = std::filesystem;
using namespace velm;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> details;
    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            details.push_back("failed: " + what);
        }
    }
    void note(const std::string& what) { details.push_back(what); }
};

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.details.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (budget_s > 0 && secs >= budget_s) {
        o.pass = false;
        o.details.push_back("over the " + fixed(budget_s, 0) + " s budget");
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fixed(secs, 2) << " s)\n";
    for (const auto& d : o.details) std::cout << "    " << d << "\n";
    std::cout.flush();
    failures += o.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// 1. Published mean rows from per-category values

constexpr double kMeanTolerance = 0.05 + 1e-9;  // printed values carry one decimal

// The headline columns are gated; the remaining columns are reported alongside.
const std::set<std::string> kGatedMeans{
    "classification_mvtec ddad_gpt4o acc", "classification_mvtec ddad_gpt4o f1", "classification_mvtec ddad_gpt4o kappa",
    "classification_mvtec oracle_gpt4o acc", "classification_mvtec oracle_gpt4o f1", "classification_mvtec oracle_gpt4o kappa",
    "classification_visa ddad_gpt4o acc", "classification_visa ddad_gpt4o f1", "classification_visa ddad_gpt4o kappa",
    "triage_mvtec total", "ablation_mvtec full acc"};

void check_mean(Outcome& o, const std::string& label, double computed, double printed) {
    const double diff = std::abs(computed - printed);
    const bool ok = diff <= kMeanTolerance;
    const bool gated = kGatedMeans.count(label) > 0;
    o.note(std::string(gated ? "[gated] " : "[info]  ") + label + ": computed " + fixed(computed, 3) + ", printed " +
           fixed(printed, 1) + (ok ? "" : "  <-- off by " + fixed(diff, 3)));
    if (!ok && gated) o.pass = false;
}

void published_means(Outcome& o) {
    const Json doc = read_json_file(testing::fixture_dir() / "published_results.json");
    for (const char* table : {"classification_mvtec", "classification_visa"}) {
        for (const auto& [column, body] : doc.at(table).items()) {
            std::vector<CategoryMetrics> cats;
            for (const auto& [cat, v] : body.at("per_category").items()) {
                CategoryMetrics m;
                m.category = cat;
                m.acc = v.at("acc").get<double>();
                m.f1 = v.at("f1").get<double>();
                m.kappa = v.at("kappa").get<double>();
                cats.push_back(std::move(m));
            }
            const auto r = aggregate_report(std::move(cats));
            const auto& mean = body.at("mean");
            const std::string label = std::string(table) + " " + column;
            check_mean(o, label + " acc", r.mean_acc, mean.at("acc").get<double>());
            check_mean(o, label + " f1", r.mean_f1, mean.at("f1").get<double>());
            check_mean(o, label + " kappa", r.mean_kappa, mean.at("kappa").get<double>());
        }
    }
    std::vector<TriageScores> triage;
    for (const auto& [cat, v] : doc.at("triage_mvtec").at("per_category").items()) {
        triage.push_back({v.at("normal").get<double>(), v.at("anomaly").get<double>(), v.at("defect").get<double>(),
                          v.at("total").get<double>()});
    }
    const auto t = mean_scores(triage);
    const auto& t4 = doc.at("triage_mvtec").at("mean");
    check_mean(o, "triage_mvtec normal", t.normal, t4.at("normal").get<double>());
    check_mean(o, "triage_mvtec anomaly", t.anomaly, t4.at("anomaly").get<double>());
    check_mean(o, "triage_mvtec defect", t.defect, t4.at("defect").get<double>());
    check_mean(o, "triage_mvtec total", t.total, t4.at("total").get<double>());

    const auto& t5 = doc.at("ablation_mvtec");
    for (const auto& [column, printed] : t5.at("mean").items()) {
        std::vector<CategoryMetrics> cats;
        for (const auto& [cat, v] : t5.at("per_category").items()) {
            CategoryMetrics m;
            m.category = cat;
            m.acc = v.at(column).get<double>();
            cats.push_back(std::move(m));
        }
        check_mean(o, "ablation_mvtec " + column + " acc", aggregate_report(std::move(cats)).mean_acc, printed.get<double>());
    }
    o.note("headline results are means only; nothing to aggregate");
}

// ---------------------------------------------------------------------------
// 2. Metrics against record-level brute force

using Records = std::vector<std::pair<std::string, std::string>>;

struct Oracle {
    double acc = 0, f1 = 0, kappa = 0;
};

Oracle brute_force(const Records& r, const std::vector<std::string>& classes) {
    Oracle o;
    int supported = 0;
    for (const auto& c : classes) {
        double inter = 0, truth = 0, pred = 0;
        for (const auto& [t, p] : r) {
            truth += t == c;
            pred += p == c;
            inter += t == c && p == c;
        }
        const double uni = truth + pred - inter;
        if (uni == 0) continue;
        ++supported;
        o.acc += inter / uni;
        const double precision = pred > 0 ? inter / pred : 0, recall = truth > 0 ? inter / truth : 0;
        o.f1 += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0;
    }
    o.acc /= supported;
    o.f1 /= supported;
    const double n = static_cast<double>(r.size());
    double po = 0, pe = 0;
    for (const auto& [t, p] : r) po += t == p;
    po /= n;
    for (const auto& c : classes) {
        double rt = 0, rp = 0;
        for (const auto& [t, p] : r) rt += t == c, rp += p == c;
        pe += (rt / n) * (rp / n);
    }
    o.kappa = pe == 1.0 ? (po == 1.0 ? 1.0 : 0.0) : (po - pe) / (1 - pe);
    return o;
}

void metric_oracle(Outcome& o) {
    constexpr double kTol = 1e-12;
    SeededRng rng(20240611);
    double worst = 0;
    std::vector<ConfusionMatrix> matrices;
    std::vector<Oracle> oracles;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng.below(6);
        const std::size_t n = 1 + rng.below(100);
        std::vector<std::string> classes;
        for (std::size_t c = 0; c < k; ++c) classes.push_back("c" + std::to_string(c));
        std::vector<std::string> outputs = classes;
        outputs.push_back(kPredictedGood);
        outputs.push_back(kUnparsed);
        const double hit = rng.uniform();
        Records r;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& t = classes[rng.below(k)];
            r.emplace_back(t, rng.uniform() < hit ? t : outputs[rng.below(outputs.size())]);
        }
        const auto m = confusion_matrix(r, classes);
        const Oracle want = brute_force(r, classes);
        const double acc = category_accuracy(m), f1 = category_f1(m), kappa = cohens_kappa(m);
        worst = std::max({worst, std::abs(acc - want.acc), std::abs(f1 - want.f1), std::abs(kappa - want.kappa)});
        if (std::abs(acc - want.acc) > kTol || std::abs(f1 - want.f1) > kTol || std::abs(kappa - want.kappa) > kTol) {
            o.check(false, "trial " + std::to_string(trial) + " disagrees with brute force");
        }
        o.check(acc >= 0 && acc <= 1 && f1 >= 0 && f1 <= 1 && kappa >= -1 && kappa <= 1,
                "trial " + std::to_string(trial) + " out of range");

        // relabel classes through a random permutation and shuffle record order
        std::vector<std::size_t> perm(k);
        for (std::size_t i = 0; i < k; ++i) perm[i] = i;
        for (std::size_t i = k; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<std::string> renamed(k);
        for (std::size_t i = 0; i < k; ++i) renamed[i] = "z" + std::to_string(perm[i]);
        auto rename = [&](const std::string& s) {
            const auto it = std::find(classes.begin(), classes.end(), s);
            return it == classes.end() ? s : renamed[static_cast<std::size_t>(it - classes.begin())];
        };
        Records shuffled;
        for (const auto& [t, p] : r) shuffled.emplace_back(rename(t), rename(p));
        for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        std::vector<std::string> order = renamed;
        std::sort(order.begin(), order.end());
        const auto pm = confusion_matrix(shuffled, order);
        if (std::abs(category_accuracy(pm) - acc) > kTol || std::abs(category_f1(pm) - f1) > kTol ||
            std::abs(cohens_kappa(pm) - kappa) > kTol) {
            o.check(false, "trial " + std::to_string(trial) + " not permutation invariant");
        }
        matrices.push_back(m);
        oracles.push_back(want);
    }
    // macro means over "categories" of consecutive matrices
    for (std::size_t start = 0; start < matrices.size(); start += 7) {
        const std::size_t end = std::min(matrices.size(), start + 7);
        const std::vector<ConfusionMatrix> group(matrices.begin() + static_cast<std::ptrdiff_t>(start),
                                                 matrices.begin() + static_cast<std::ptrdiff_t>(end));
        double a = 0, f = 0, kk = 0;
        for (std::size_t i = start; i < end; ++i) a += oracles[i].acc, f += oracles[i].f1, kk += oracles[i].kappa;
        const double cnt = static_cast<double>(end - start);
        if (std::abs(macro_accuracy(group).mean - a / cnt) > kTol || std::abs(macro_f1(group).mean - f / cnt) > kTol ||
            std::abs(macro_kappa(group).mean - kk / cnt) > kTol) {
            o.check(false, "macro mean over matrices " + std::to_string(start) + ".." + std::to_string(end - 1));
        }
    }
    std::ostringstream s;
    s << "1000 matrices, max abs deviation " << std::scientific << std::setprecision(2) << worst;
    o.note(s.str());
}

// ---------------------------------------------------------------------------
// Default synthetic benchmark, shared by criteria 3 and 4

struct SynthBench {
    testing::TempDir dir{"velm_acceptance"};
    DatasetIndex index;
    Taxonomy taxonomy;
};

std::unique_ptr<SynthBench> synth_bench;

int workers() { return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 8u)); }

void end_to_end_identity(Outcome& o) {
    synth_bench = std::make_unique<SynthBench>();
    const SynthConfig cfg;
    generate_synthetic_benchmark(cfg, synth_bench->dir.path());
    synth_bench->index = scan_dataset(synth_bench->dir.path(), Layout::mvtec);
    synth_bench->taxonomy = load_taxonomy(synth_bench->dir / "taxonomy.json");
    const auto& index = synth_bench->index;

    const auto anomalous = anomalous_test_samples(index);
    o.check(index.categories().size() == 3, "3 categories");
    o.check(anomalous.size() == 3u * 3u * 20u, "180 anomalous test samples");

    EvalConfig ec;
    ec.backend.kind = "mock_echo";
    ec.parallelism = workers();
    OracleExpert oracle;
    auto backend = std::make_shared<EchoBackend>(build_truth_table(anomalous, ec.parallelism));
    const auto r = run_classification_eval(index, synth_bench->taxonomy, oracle, ec, backend);
    o.note("mean acc " + fixed(r.report.mean_acc, 6) + ", f1 " + fixed(r.report.mean_f1, 6) + ", kappa " +
           fixed(r.report.mean_kappa, 6));
    o.check(r.report.mean_acc == 1.0 && r.report.mean_f1 == 1.0 && r.report.mean_kappa == 1.0, "metrics are exactly 1.0");
    o.check(backend->calls() == anomalous.size(), "one gateway call per anomalous sample");

    // Good samples through the same pipeline: every one stops at the vision stage.
    const std::size_t before = backend->calls();
    std::vector<PipelineTask> good;
    for (const auto& s : index.samples()) {
        if (s.split == Split::test && s.is_good()) {
            good.push_back({&s, kGood, &synth_bench->taxonomy.at(s.category), &index.class_set(s.category)});
        }
    }
    Gateway gateway(ec.backend, backend);
    const auto records = run_pipeline(index, good, oracle, ec, gateway);
    std::size_t short_circuited = 0;
    for (const auto& rec : records) short_circuited += !rec.expert_verdict && rec.predicted_class == kPredictedGood && rec.cache_key.empty();
    o.note(std::to_string(good.size()) + " good samples, " + std::to_string(backend->calls() - before) + " gateway calls");
    o.check(good.size() == 60 && short_circuited == good.size(), "every good sample short-circuits");
    o.check(backend->calls() == before, "zero gateway calls for good samples");
}

void detector_gate(Outcome& o) {
    if (!synth_bench) throw std::runtime_error("synthetic benchmark unavailable");
    const auto& index = synth_bench->index;
    MemoryBankExpert expert;
    for (const auto& cat : index.categories()) expert.add(fit_category(index, cat, BankConfig{}));
    const auto q = measure_detector(index, expert, workers());
    for (const auto& [cat, a] : q.auroc) {
        o.note(cat + ": AUROC " + fixed(a) + ", localization " + fixed(q.localization.at(cat)));
        o.check(a >= 0.95, cat + " AUROC >= 0.95");
    }
    o.note("pooled localization " + fixed(q.localization_rate));
    o.check(q.localization_rate >= 0.90, "localization >= 0.90");
}

// ---------------------------------------------------------------------------
// 5. Contours against a flood fill

std::vector<std::vector<Point>> components_oracle(const Mask& m) {
    std::vector<std::vector<Point>> comps;
    Grid<int> seen(m.width(), m.height(), 0);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y) || seen(x, y)) continue;
            std::vector<Point> comp;
            std::stack<Point> st;
            st.push({x, y});
            seen(x, y) = 1;
            while (!st.empty()) {
                const auto c = st.top();
                st.pop();
                comp.push_back(c);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = c.x + dx, ny = c.y + dy;
                        if (m.contains(nx, ny) && m(nx, ny) && !seen(nx, ny)) {
                            seen(nx, ny) = 1;
                            st.push({nx, ny});
                        }
                    }
            }
            comps.push_back(std::move(comp));
        }
    return comps;
}

std::set<Point> boundary_oracle(const Mask& m, int min_area) {
    std::set<Point> out;
    for (const auto& comp : components_oracle(m)) {
        if (static_cast<int>(comp.size()) < min_area) continue;
        for (const auto& p : comp) {
            const bool edge = !m.contains(p.x + 1, p.y) || !m(p.x + 1, p.y) || !m.contains(p.x - 1, p.y) ||
                              !m(p.x - 1, p.y) || !m.contains(p.x, p.y + 1) || !m(p.x, p.y + 1) ||
                              !m.contains(p.x, p.y - 1) || !m(p.x, p.y - 1);
            if (edge) out.insert(p);
        }
    }
    return out;
}

void contour_oracle(Outcome& o) {
    SeededRng rng(97);
    std::size_t contours = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(64)), h = 1 + static_cast<int>(rng.below(64));
        Mask m(w, h);
        if (trial % 2 == 0) {
            const double density = rng.uniform(0.02, 0.98);
            for (auto& v : m.values()) v = rng.uniform() < density ? 1 : 0;
        } else {
            // rectangles and discs, some overlapping, some with holes punched
            const int shapes = 1 + static_cast<int>(rng.below(6));
            for (int s = 0; s < shapes; ++s) {
                const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
                const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
                const int r = 1 + static_cast<int>(rng.below(12));
                const std::uint8_t value = s > 0 && rng.uniform() < 0.3 ? 0 : 1;
                const bool disc = rng.uniform() < 0.5;
                for (int y = cy - r; y <= cy + r; ++y)
                    for (int x = cx - r; x <= cx + r; ++x) {
                        if (!m.contains(x, y) || (disc && (x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r)) continue;
                        m(x, y) = value;
                    }
            }
        }
        const std::string at = "mask " + std::to_string(trial) + " (" + std::to_string(w) + "x" + std::to_string(h) + ")";
        for (int min_area : {1, ContourOptions{}.min_area}) {
            ContourOptions opt;
            opt.min_area = min_area;
            const auto cs = extract_contours(m, opt);
            std::set<Point> traced;
            std::size_t outer = 0;
            for (const auto& c : cs) {
                traced.insert(c.points.begin(), c.points.end());
                outer += !c.hole;
            }
            std::size_t expected = 0;
            for (const auto& comp : components_oracle(m)) expected += static_cast<int>(comp.size()) >= min_area;
            if (traced != boundary_oracle(m, min_area)) o.check(false, at + ": point set, min_area " + std::to_string(min_area));
            if (outer != expected) o.check(false, at + ": component count, min_area " + std::to_string(min_area));
            if (min_area == 1) contours += cs.size();
        }
    }
    o.note("500 masks, " + std::to_string(contours) + " contours traced");
}

// ---------------------------------------------------------------------------
// 6. Replay determinism through the CLI

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read", p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("'") + VELM_CLI_PATH + "' " + args + " >'" + log.string() + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw std::runtime_error("velm " + args.substr(0, args.find(' ')) + " failed:\n" + slurp(log));
}

void replay_determinism(Outcome& o) {
    const fs::path corpus = testing::fixture_dir() / "replay";
    const Json c = read_json_file(corpus / "corpus.json");
    const auto& sc = c.at("synth");
    testing::TempDir dir("velm_replay");
    const fs::path log = dir / "cli.log";
    auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
    run_cli("synth --out " + q(dir / "bench") + " --seed " + sc.at("seed").dump() + " --size " + sc.at("size").dump() +
                " --train " + sc.at("train").dump() + " --good " + sc.at("good").dump() + " --per-kind " +
                sc.at("per_kind").dump(),
            log);
    run_cli("scan --root " + q(dir / "bench") + " --out " + q(dir / "index.json"), log);

    std::vector<std::string> reports, logs;
    const std::vector<int> parallelism{1, 1, 8};
    for (std::size_t run = 0; run < parallelism.size(); ++run) {
        const fs::path cache = dir / ("cache" + std::to_string(run));
        fs::create_directories(cache);
        for (const auto& e : fs::directory_iterator(corpus / "cache")) fs::copy_file(e.path(), cache / e.path().filename());
        const fs::path out = dir / ("report" + std::to_string(run) + ".json");
        run_cli("eval --index " + q(dir / "index.json") + " --backend " + q(corpus / "backend.json") + " --taxonomy " +
                    q(dir / "bench" / "taxonomy.json") + " --cache " + q(cache) + " --out " + q(out) + " --seed " +
                    c.at("eval_seed").dump() + " --parallelism " + std::to_string(parallelism[run]) + " --strict",
                log);
        reports.push_back(slurp(out));
        logs.push_back(slurp(dir / ("report" + std::to_string(run) + ".predictions.ndjson")));
    }
    o.check(reports[0] == reports[1], "two parallelism-1 runs give identical reports");
    o.check(reports[0] == reports[2], "parallelism 1 and 8 give identical reports");
    o.check(logs[0] == logs[1] && logs[0] == logs[2], "prediction logs identical");
    o.check(reports[0] == slurp(corpus / "golden_report.json"), "report matches the shipped golden report");
    const Json r = Json::parse(reports[0]);
    o.note(r.at("samples").dump() + " samples replayed, mean acc " + fixed(r.at("mean").at("acc").get<double>()) + ", " +
           std::to_string(reports[0].size()) + " report bytes");
}

// ---------------------------------------------------------------------------
// 7. Refinement on the mirrored skeletons

void refinement_fidelity(Outcome& o) {
    {
        testing::TempDir dir("velm_mvtec");
        materialize_skeleton(read_json_file(testing::data_dir() / "skeletons/mvtec_ad.json"), dir.path());
        const auto r = apply_refinement(scan_dataset(dir.path(), Layout::mvtec),
                                        load_refinement(testing::data_dir() / "refinement/mvtec_ac.json"));
        const auto& cats = r.index.categories();
        std::size_t combined = 0, merged = 0;
        for (const auto& cat : cats)
            for (const auto& cls : r.index.class_set(cat)) {
                combined += cls == "combined";
                merged += cls.find('+') != std::string::npos;
            }
        const bool toothbrush = std::find(cats.begin(), cats.end(), "toothbrush") != cats.end();
        o.note("mvtec_ac: " + std::to_string(cats.size()) + " categories, " + std::to_string(merged) + " merged classes, " +
               std::to_string(r.stats.relabels_applied) + " relabels");
        o.check(cats.size() == 14, "14 categories");
        o.check(combined == 0, "no combined class");
        o.check(!toothbrush, "no toothbrush");
        o.check(merged == 4 && r.stats.merges_applied == 4, "exactly 4 merged classes");
        o.check(r.stats.relabels_applied == 36, "36 relabels");
    }
    {
        testing::TempDir dir("velm_visa");
        materialize_skeleton(read_json_file(testing::data_dir() / "skeletons/visa.json"), dir.path());
        const auto r = apply_refinement(scan_dataset(dir.path(), Layout::visa_csv),
                                        load_refinement(testing::data_dir() / "refinement/visa_ac.json"));
        std::size_t smallest = std::numeric_limits<std::size_t>::max();
        for (const auto& cat : r.index.categories())
            for (const auto& cls : r.index.class_set(cat)) smallest = std::min(smallest, r.index.test_count(cat, cls));
        o.note("visa_ac: " + std::to_string(r.stats.relabels_applied) + " relabels, " + std::to_string(r.stats.merges_applied) +
               " merges, smallest class " + std::to_string(smallest) + " test samples");
        o.check(r.stats.relabels_applied == 3, "3 relabels");
        o.check(r.stats.merges_applied == 4, "4 merges");
        o.check(smallest >= 10, "every class has >= 10 test samples");
    }
}

// ---------------------------------------------------------------------------
// 8. Coreset covering radius

void coreset_property(Outcome& o) {
    const std::vector<float> line{0, 1, 9, 10};
    const auto picked = coreset_subsample(line, 1, 3, 0, 0);
    o.check(picked == std::vector<std::size_t>{0, 3, 1}, "worked example selects [0, 3, 1]");

    SeededRng rng(4242);
    std::size_t checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(79), dim = 1 + rng.below(8);
        std::vector<float> v(n * dim);
        const bool lattice = trial % 4 == 0;  // integer grids produce many distance ties
        for (auto& x : v) x = lattice ? static_cast<float>(rng.below(5)) : static_cast<float>(rng.uniform(-10, 10));
        const std::uint64_t seed = rng.next();
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t m = 1; m <= n; ++m) {
            const auto sel = coreset_subsample(v, dim, m, seed);
            const double radius = covering_radius(v, dim, sel);
            if (radius > prev) {
                o.check(false, "set " + std::to_string(trial) + ": radius grows at m=" + std::to_string(m));
                break;
            }
            prev = radius;
            ++checked;
        }
        o.check(prev == 0.0, "set " + std::to_string(trial) + ": full selection covers every point");
    }
    o.note("100 point sets, " + std::to_string(checked) + " (set, m) pairs");
}

}  // namespace

int main() {
    criterion("published mean rows reproduce within 0.05", 1, published_means);
    criterion("metrics match brute force on 1000 fuzzed matrices", 10, metric_oracle);
    criterion("oracle expert + echo backend is perfect end to end", 30, end_to_end_identity);
    criterion("memory-bank detector quality gate", 120, detector_gate);
    criterion("contours match the boundary and flood-fill oracles", 0, contour_oracle);
    criterion("replayed eval is byte-identical across runs and parallelism", 0, replay_determinism);
    criterion("refinement specs on mirrored skeletons", 0, refinement_fidelity);
    criterion("coreset covering radius is non-increasing", 0, coreset_property);
    synth_bench.reset();
    std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criterion(s) failed") << "\n";
    return failures == 0 ? 0 : 1;
}
