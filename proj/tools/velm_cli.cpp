// velm: dataset indexing, refinement, expert fitting and the three evaluation protocols.
//
// Exit codes: 0 success, 2 invalid input, 3 backend failure (strict mode), 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "velm/velm.hpp"

namespace fs = std::filesystem;
using namespace velm;

namespace {

struct Plumbing {
    std::string index, expert = "oracle", backend, taxonomy, cache, out, log, csv;
    bool no_ri = false, no_vp = false, no_nd = false, no_cs = false, no_ad = false, strict = false;
    int parallelism = 0;  // 0: take it from the backend config
    std::uint64_t seed = 0;
};

void add_plumbing(CLI::App* cmd, Plumbing& p) {
    cmd->add_option("--index", p.index, "Dataset index JSON (from scan/refine)")->required();
    cmd->add_option("--expert", p.expert, "oracle | external:DIR | bank:FILE-or-DIR")->capture_default_str();
    cmd->add_option("--backend", p.backend, "Backend config JSON")->required();
    cmd->add_option("--taxonomy", p.taxonomy, "Taxonomy JSON")->required();
    cmd->add_option("--cache", p.cache, "Response cache directory");
    cmd->add_option("--out", p.out, "Report JSON")->required();
    cmd->add_option("--log", p.log, "Prediction log (NDJSON); default <out>.predictions.ndjson");
    cmd->add_option("--csv", p.csv, "Also write a table-shaped CSV");
    cmd->add_option("--parallelism", p.parallelism, "Worker count (default: backend config)");
    cmd->add_option("--seed", p.seed, "Reference-image seed")->capture_default_str();
    cmd->add_flag("--strict", p.strict, "Abort on the first backend failure (exit 3)");
    cmd->add_flag("--no-ri", p.no_ri, "Drop the reference image");
    cmd->add_flag("--no-vp", p.no_vp, "Drop the visual prompt");
    cmd->add_flag("--no-nd", p.no_nd, "Drop the normal description");
    cmd->add_flag("--no-cs", p.no_cs, "Drop the classification strategy");
    cmd->add_flag("--no-ad", p.no_ad, "Drop the anomaly descriptions");
}

EvalConfig eval_config(const Plumbing& p) {
    EvalConfig c;
    c.backend = backend_config_from_json(read_json_file(p.backend));
    c.flags = {!p.no_ri, !p.no_vp, !p.no_nd, !p.no_cs, !p.no_ad};
    c.seed = p.seed;
    if (!p.cache.empty()) c.cache_dir = p.cache;
    c.strict = p.strict;
    c.parallelism = p.parallelism > 0 ? p.parallelism : c.backend.parallelism;
    if (p.parallelism < 0) throw ValidationError("--parallelism must be >= 1");
    return c;
}

fs::path log_path(const Plumbing& p) {
    if (!p.log.empty()) return p.log;
    fs::path out(p.out);
    return out.parent_path() / (out.stem().string() + ".predictions.ndjson");
}

void write_text(const fs::path& path, const std::string& text) { write_text_atomic(path, text); }

struct Loaded {
    DatasetIndex index;
    Taxonomy taxonomy;
    std::unique_ptr<VisionExpert> expert;
};

Loaded load(const Plumbing& p) {
    return {load_index(p.index), load_taxonomy(p.taxonomy), make_expert(parse_expert_spec(p.expert))};
}

void print_metrics(const MetricsReport& r) {
    std::cout << to_csv(r);
}

int run(int argc, char** argv) {
    CLI::App app{"Vision-expert + multimodal LLM anomaly classification toolkit"};
    app.require_subcommand(1);

    std::string root, layout = "mvtec", csv, out;
    auto* scan = app.add_subcommand("scan", "Index an image tree");
    scan->add_option("--root", root)->required();
    scan->add_option("--layout", layout, "mvtec | visa_csv")->capture_default_str();
    scan->add_option("--csv", csv, "Annotation CSV (visa_csv; default <root>/split_csv/1cls.csv)");
    scan->add_option("--out", out)->required();

    std::string index_path, spec_path;
    auto* refine = app.add_subcommand("refine", "Apply a refinement spec to an index");
    refine->add_option("--index", index_path)->required();
    refine->add_option("--spec", spec_path)->required();
    refine->add_option("--out", out)->required();

    std::string category, det_config;
    auto* fit = app.add_subcommand("fit-expert", "Fit memory banks on the training split");
    fit->add_option("--index", index_path)->required();
    fit->add_option("--category", category, "One category (default: all, --out is then a directory)");
    fit->add_option("--config", det_config, "Bank config JSON");
    fit->add_option("--out", out)->required();

    Plumbing eval_p;
    auto* eval = app.add_subcommand("eval", "Classification evaluation over anomalous test samples");
    add_plumbing(eval, eval_p);

    Plumbing triage_p;
    double fraction = 0.30;
    int num_seeds = 5;
    std::vector<std::uint64_t> seed_list;
    auto* triage = app.add_subcommand("triage", "Normal / negligible anomaly / defect evaluation");
    add_plumbing(triage, triage_p);
    triage->add_option("--fraction", fraction, "Share of classes designated negligible")->capture_default_str();
    triage->add_option("--seeds", num_seeds, "Number of partition seeds (0..N-1)")->capture_default_str();
    triage->add_option("--seed-list", seed_list, "Explicit partition seeds")->delimiter(',');

    Plumbing ablate_p;
    std::string flagsets;
    auto* ablate = app.add_subcommand("ablate", "One evaluation per prompt flag set");
    add_plumbing(ablate, ablate_p);
    ablate->add_option("--flagsets", flagsets, "JSON array of {RI,VP,ND,CS,AD} objects")->required();

    SynthConfig synth_cfg;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark");
    synth->add_option("--out", out)->required();
    synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
    synth->add_option("--size", synth_cfg.image_size, "Image side in pixels")->capture_default_str();
    synth->add_option("--train", synth_cfg.train_samples, "Training images per category")->capture_default_str();
    synth->add_option("--good", synth_cfg.good_test_samples, "Normal test images per category")->capture_default_str();
    synth->add_option("--per-kind", synth_cfg.test_per_kind, "Test images per anomaly kind")->capture_default_str();
    synth->add_option("--categories", synth_cfg.categories, "Category names")->delimiter(',');
    synth->add_option("--kinds", synth_cfg.kinds, "blob,color_patch,scratch")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*scan) {
        const auto idx = scan_dataset(fs::absolute(root), parse_layout(layout),
                                      csv.empty() ? std::nullopt : std::optional<fs::path>(fs::absolute(csv)));
        save_index(out, idx);
        std::cout << idx.samples().size() << " samples, " << idx.categories().size() << " categories\n";
    } else if (*refine) {
        const auto r = apply_refinement(load_index(index_path), load_refinement(spec_path));
        save_index(out, r.index);
        std::cout << "categories: " << r.index.categories().size() << "\nrelabels applied: " << r.stats.relabels_applied
                  << "\nmerges applied: " << r.stats.merges_applied << "\ncategories dropped: " << r.stats.categories_dropped
                  << "\nclasses dropped: " << r.stats.classes_dropped
                  << "\nclasses below min_samples: " << r.stats.classes_below_min << "\n";
    } else if (*fit) {
        const auto idx = load_index(index_path);
        const BankConfig cfg = det_config.empty() ? BankConfig{} : bank_config_from_json(read_json_file(det_config));
        if (!category.empty()) {
            const auto bank = fit_category(idx, category, cfg);
            save_bank(out, bank);
            std::cout << category << ": " << bank.count() << " descriptors, threshold " << bank.threshold << "\n";
        } else {
            for (const auto& cat : idx.categories()) {
                const auto bank = fit_category(idx, cat, cfg);
                save_bank(fs::path(out) / (cat + ".bin"), bank);
                std::cout << cat << ": " << bank.count() << " descriptors, threshold " << bank.threshold << "\n";
            }
        }
    } else if (*eval) {
        auto l = load(eval_p);
        const auto cfg = eval_config(eval_p);
        const auto r = run_classification_eval(l.index, l.taxonomy, *l.expert, cfg);
        write_json_file(eval_p.out, to_json(r, cfg.flags));
        write_text(log_path(eval_p), to_ndjson(r.records));
        if (!eval_p.csv.empty()) write_text(eval_p.csv, to_csv(r.report));
        print_metrics(r.report);
        if (r.backend_failures) std::cerr << "warning: " << r.backend_failures << " backend failure(s) recorded as Unparsed\n";
    } else if (*triage) {
        auto l = load(triage_p);
        const auto cfg = eval_config(triage_p);
        TriageConfig t;
        t.negligible_fraction = fraction;
        t.num_seeds = num_seeds;
        t.seeds = seed_list;
        const auto r = run_triage_eval(l.index, l.taxonomy, *l.expert, t, cfg);
        write_json_file(triage_p.out, to_json(r));
        write_text(log_path(triage_p), to_ndjson(r.records));
        if (!triage_p.csv.empty()) write_text(triage_p.csv, to_csv(r));
        std::cout << to_csv(r);
    } else if (*ablate) {
        auto l = load(ablate_p);
        const auto cfg = eval_config(ablate_p);
        const Json sets = read_json_file(flagsets);
        if (!sets.is_array()) throw ValidationError("--flagsets must hold a JSON array");
        std::vector<AblationFlags> flag_sets;
        for (const auto& s : sets) flag_sets.push_back(flags_from_json(s));
        const auto r = run_ablation(l.index, l.taxonomy, *l.expert, cfg, flag_sets);
        write_json_file(ablate_p.out, to_json(r));
        std::string log;
        for (const auto& run : r.runs) log += to_ndjson(run.records);
        write_text(log_path(ablate_p), log);
        if (!ablate_p.csv.empty()) write_text(ablate_p.csv, to_csv(r));
        std::cout << to_csv(r);
    } else if (*synth) {
        generate_synthetic_benchmark(synth_cfg, out);
        std::cout << "wrote " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 1;
    }
}
