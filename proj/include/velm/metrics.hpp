#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "velm/error.hpp"
#include "velm/json.hpp"

namespace velm {

// Reserved prediction values outside every class list.
inline constexpr const char* kUnparsed = "Unparsed";
inline constexpr const char* kPredictedGood = "Good";

/// counts[i][j]: true class i predicted as column j. Columns are the classes followed by
/// Good (vision-stage miss) and Unparsed; both extra columns are misses for the true class only.
class ConfusionMatrix {
public:
    static constexpr std::size_t kExtraColumns = 2;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::vector<std::string> classes) : classes_(std::move(classes)) {
        if (classes_.empty()) throw ValidationError("confusion matrix needs at least one class");
        std::vector<std::string> sorted = classes_;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ValidationError("confusion matrix: duplicate class name");
        }
        for (const auto& c : classes_) {
            if (c == kUnparsed || c == kPredictedGood) throw ValidationError("class name '" + c + "' is reserved");
        }
        counts_.assign(classes_.size(), std::vector<std::uint64_t>(classes_.size() + kExtraColumns, 0));
    }

    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t size() const { return classes_.size(); }
    const std::vector<std::vector<std::uint64_t>>& counts() const { return counts_; }

    std::size_t class_index(const std::string& name) const {
        auto it = std::find(classes_.begin(), classes_.end(), name);
        if (it == classes_.end()) throw ValidationError("unknown class '" + name + "'");
        return static_cast<std::size_t>(it - classes_.begin());
    }

    std::size_t column_index(const std::string& predicted) const {
        if (predicted == kPredictedGood) return classes_.size();
        if (predicted == kUnparsed) return classes_.size() + 1;
        auto it = std::find(classes_.begin(), classes_.end(), predicted);
        if (it == classes_.end()) throw ValidationError("prediction '" + predicted + "' is not a class, Good or Unparsed");
        return static_cast<std::size_t>(it - classes_.begin());
    }

    void add(const std::string& true_class, const std::string& predicted, std::uint64_t n = 1) {
        counts_[class_index(true_class)][column_index(predicted)] += n;
    }
    void add_at(std::size_t row, std::size_t col, std::uint64_t n) { counts_.at(row).at(col) += n; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts_) t = std::accumulate(row.begin(), row.end(), t);
        return t;
    }
    std::uint64_t row_sum(std::size_t c) const { return std::accumulate(counts_[c].begin(), counts_[c].end(), std::uint64_t{0}); }
    std::uint64_t col_sum(std::size_t c) const {
        std::uint64_t s = 0;
        for (const auto& row : counts_) s += row[c];
        return s;
    }
    std::uint64_t tp(std::size_t c) const { return counts_[c][c]; }
    std::uint64_t fp(std::size_t c) const { return col_sum(c) - tp(c); }
    std::uint64_t fn(std::size_t c) const { return row_sum(c) - tp(c); }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::vector<std::string> classes_;
    std::vector<std::vector<std::uint64_t>> counts_;
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::pair<std::string, std::string>>& records,
                                        const std::vector<std::string>& classes) {
    ConfusionMatrix m(classes);
    for (const auto& [truth, predicted] : records) m.add(truth, predicted);
    return m;
}

struct ClassStats {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    double accuracy_term = 0.0;  // TP / (TP + FP + FN)
    double f1 = 0.0;
};

namespace metrics_detail {

inline bool has_support(const ConfusionMatrix& m, std::size_t c) { return m.tp(c) + m.fp(c) + m.fn(c) > 0; }

inline void require_support(const ConfusionMatrix& m) {
    if (m.total() == 0) throw ValidationError("metrics: empty confusion matrix");
    for (std::size_t c = 0; c < m.size(); ++c)
        if (has_support(m, c)) return;
    throw ValidationError("metrics: every class has zero support");
}

}  // namespace metrics_detail

inline ClassStats class_stats(const ConfusionMatrix& m, std::size_t c) {
    ClassStats s{m.tp(c), m.fp(c), m.fn(c), 0.0, 0.0};
    const auto denom = s.tp + s.fp + s.fn;
    if (denom > 0) {
        s.accuracy_term = static_cast<double>(s.tp) / static_cast<double>(denom);
        s.f1 = 2.0 * static_cast<double>(s.tp) / static_cast<double>(2 * s.tp + s.fp + s.fn);
    }
    return s;
}

/// Mean over supported classes of TP/(TP+FP+FN).
inline double category_accuracy(const ConfusionMatrix& m) {
    metrics_detail::require_support(m);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < m.size(); ++c) {
        if (!metrics_detail::has_support(m, c)) continue;
        sum += class_stats(m, c).accuracy_term;
        ++n;
    }
    return sum / static_cast<double>(n);
}

/// Mean over supported classes of 2TP/(2TP+FP+FN).
inline double category_f1(const ConfusionMatrix& m) {
    metrics_detail::require_support(m);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < m.size(); ++c) {
        if (!metrics_detail::has_support(m, c)) continue;
        sum += class_stats(m, c).f1;
        ++n;
    }
    return sum / static_cast<double>(n);
}

/// Extra columns count toward the total and the row marginals but toward no column marginal.
inline double cohens_kappa(const ConfusionMatrix& m) {
    const auto total = static_cast<double>(m.total());
    if (total == 0.0) throw ValidationError("cohens_kappa: empty confusion matrix");
    double diag = 0.0, pe = 0.0;
    for (std::size_t c = 0; c < m.size(); ++c) {
        diag += static_cast<double>(m.tp(c));
        pe += (static_cast<double>(m.row_sum(c)) / total) * (static_cast<double>(m.col_sum(c)) / total);
    }
    const double po = diag / total;
    if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

struct CategoryMetrics {
    std::string category;
    double acc = 0.0;
    double f1 = 0.0;
    double kappa = 0.0;
    std::map<std::string, ClassStats> per_class;
    ConfusionMatrix confusion;
};

inline CategoryMetrics evaluate_category(std::string category, ConfusionMatrix m) {
    CategoryMetrics out;
    out.category = std::move(category);
    out.acc = category_accuracy(m);
    out.f1 = category_f1(m);
    out.kappa = cohens_kappa(m);
    for (std::size_t c = 0; c < m.size(); ++c) out.per_class[m.classes()[c]] = class_stats(m, c);
    out.confusion = std::move(m);
    return out;
}

struct MacroResult {
    std::vector<double> per_category;
    double mean = 0.0;
};

inline double unweighted_mean(const std::vector<double>& v) {
    if (v.empty()) throw ValidationError("mean of an empty list");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline MacroResult macro_accuracy(const std::vector<ConfusionMatrix>& matrices) {
    MacroResult r;
    for (const auto& m : matrices) r.per_category.push_back(category_accuracy(m));
    r.mean = unweighted_mean(r.per_category);
    return r;
}

inline MacroResult macro_f1(const std::vector<ConfusionMatrix>& matrices) {
    MacroResult r;
    for (const auto& m : matrices) r.per_category.push_back(category_f1(m));
    r.mean = unweighted_mean(r.per_category);
    return r;
}

inline MacroResult macro_kappa(const std::vector<ConfusionMatrix>& matrices) {
    MacroResult r;
    for (const auto& m : matrices) r.per_category.push_back(cohens_kappa(m));
    r.mean = unweighted_mean(r.per_category);
    return r;
}

struct MetricsReport {
    std::vector<CategoryMetrics> per_category;  // lexicographic by category
    double mean_acc = 0.0;
    double mean_f1 = 0.0;
    double mean_kappa = 0.0;
};

inline MetricsReport aggregate_report(std::vector<CategoryMetrics> per_category) {
    if (per_category.empty()) throw ValidationError("aggregate_report: no categories");
    std::sort(per_category.begin(), per_category.end(), [](const auto& a, const auto& b) { return a.category < b.category; });
    for (std::size_t i = 1; i < per_category.size(); ++i) {
        if (per_category[i].category == per_category[i - 1].category) {
            throw ValidationError("aggregate_report: duplicate category '" + per_category[i].category + "'");
        }
    }
    MetricsReport r;
    std::vector<double> acc, f1, kappa;
    for (const auto& c : per_category) {
        acc.push_back(c.acc);
        f1.push_back(c.f1);
        kappa.push_back(c.kappa);
    }
    r.mean_acc = unweighted_mean(acc);
    r.mean_f1 = unweighted_mean(f1);
    r.mean_kappa = unweighted_mean(kappa);
    r.per_category = std::move(per_category);
    return r;
}

inline OrderedJson to_json(const ConfusionMatrix& m) {
    OrderedJson j;
    j["classes"] = m.classes();
    auto columns = m.classes();
    columns.push_back(kPredictedGood);
    columns.push_back(kUnparsed);
    j["columns"] = columns;
    j["counts"] = m.counts();
    return j;
}

inline OrderedJson to_json(const CategoryMetrics& c) {
    OrderedJson j;
    j["category"] = c.category;
    j["acc"] = c.acc;
    j["f1"] = c.f1;
    j["kappa"] = c.kappa;
    OrderedJson pc = OrderedJson::object();
    for (const auto& [name, s] : c.per_class) {
        pc[name] = {{"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}, {"acc", s.accuracy_term}, {"f1", s.f1}};
    }
    j["per_class"] = pc;
    j["confusion"] = to_json(c.confusion);
    return j;
}

inline OrderedJson to_json(const MetricsReport& r) {
    OrderedJson j;
    OrderedJson cats = OrderedJson::array();
    for (const auto& c : r.per_category) cats.push_back(to_json(c));
    j["per_category"] = cats;
    j["mean"] = {{"acc", r.mean_acc}, {"f1", r.mean_f1}, {"kappa", r.mean_kappa}};
    return j;
}

/// One row per category plus Mean, values in percent with one decimal.
inline std::string to_csv(const MetricsReport& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << "category,acc,f1,kappa\n";
    for (const auto& c : r.per_category) out << c.category << ',' << 100 * c.acc << ',' << 100 * c.f1 << ',' << 100 * c.kappa << '\n';
    out << "Mean," << 100 * r.mean_acc << ',' << 100 * r.mean_f1 << ',' << 100 * r.mean_kappa << '\n';
    return out.str();
}

}  // namespace velm
