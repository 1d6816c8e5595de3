#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "claimcast/errors.hpp"

namespace claimcast {

struct ScoredPatient {
    std::int64_t patient_id = 0;
    double score = 0.0;
    std::int32_t label = 0;  // 1 iff treated inside the look-forward window
};

struct EvalReport {
    std::string mode_label;
    std::vector<std::int64_t> k_values;
    std::vector<std::int64_t> hits;      // label-1 patients among the top K
    std::vector<double> accuracy;        // hits / K
    std::int64_t cohort_size = 0;
    std::int64_t future_positive_count = 0;
    double base_rate = 0.0;
};

// Top-K hit counts over a scored cohort. Patients are ranked by
// descending score; ties break by ascending patient_id so reports are
// reproducible.
inline EvalReport k_accuracy(std::vector<ScoredPatient> cohort, std::span<const std::int64_t> k_values,
                             std::string mode_label = {}) {
    if (k_values.empty()) throw EvalError("k_values must not be empty");
    for (const auto& s : cohort) {
        if (!std::isfinite(s.score)) throw EvalError("non-finite score for patient " + std::to_string(s.patient_id));
        if (s.label != 0 && s.label != 1) throw EvalError("labels must be 0 or 1");
    }
    for (auto k : k_values)
        if (k < 1 || k > static_cast<std::int64_t>(cohort.size()))
            throw EvalError("K = " + std::to_string(k) + " outside [1, cohort size = " +
                            std::to_string(cohort.size()) + "]");

    std::sort(cohort.begin(), cohort.end(), [](const ScoredPatient& a, const ScoredPatient& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.patient_id < b.patient_id;
    });
    for (std::size_t i = 1; i < cohort.size(); ++i)
        if (cohort[i].patient_id == cohort[i - 1].patient_id)
            throw EvalError("duplicate patient_id " + std::to_string(cohort[i].patient_id) + " in cohort");

    std::vector<std::int64_t> prefix(cohort.size() + 1, 0);
    for (std::size_t i = 0; i < cohort.size(); ++i) prefix[i + 1] = prefix[i] + cohort[i].label;

    EvalReport r;
    r.mode_label = std::move(mode_label);
    r.k_values.assign(k_values.begin(), k_values.end());
    r.cohort_size = static_cast<std::int64_t>(cohort.size());
    r.future_positive_count = prefix.back();
    r.base_rate = cohort.empty() ? 0.0 : static_cast<double>(prefix.back()) / static_cast<double>(cohort.size());
    for (auto k : r.k_values) {
        r.hits.push_back(prefix[static_cast<std::size_t>(k)]);
        r.accuracy.push_back(static_cast<double>(r.hits.back()) / static_cast<double>(k));
    }
    return r;
}

// Convenience overload for parallel arrays.
inline EvalReport k_accuracy(std::span<const std::int64_t> patient_ids, std::span<const double> scores,
                             std::span<const std::int32_t> truth, std::span<const std::int64_t> k_values,
                             std::string mode_label = {}) {
    if (patient_ids.size() != scores.size() || scores.size() != truth.size())
        throw EvalError("mismatched cohort: ids/scores/truth have different lengths");
    std::vector<ScoredPatient> cohort(patient_ids.size());
    for (std::size_t i = 0; i < cohort.size(); ++i)
        cohort[i] = {patient_ids[i], scores[i], truth[i]};
    return k_accuracy(std::move(cohort), k_values, std::move(mode_label));
}

struct ImprovementEntry {
    std::int64_t k = 0;
    std::int64_t hits_a = 0;
    std::int64_t hits_b = 0;
    std::optional<double> lift_pct;  // empty when hits_b == 0
};

// Per-K relative lift of report a over report b, as a percentage.
inline std::vector<ImprovementEntry> improvement(const EvalReport& a, const EvalReport& b) {
    if (a.k_values != b.k_values) throw EvalError("improvement requires identical k_values");
    if (a.cohort_size != b.cohort_size) throw EvalError("improvement requires identical cohorts");
    std::vector<ImprovementEntry> out;
    for (std::size_t i = 0; i < a.k_values.size(); ++i) {
        ImprovementEntry e;
        e.k = a.k_values[i];
        e.hits_a = a.hits[i];
        e.hits_b = b.hits[i];
        if (e.hits_b != 0)
            e.lift_pct = 100.0 * static_cast<double>(e.hits_a - e.hits_b) / static_cast<double>(e.hits_b);
        out.push_back(e);
    }
    return out;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

// Report CSV: mode,K,hits,accuracy,cohort_size,future_positives,base_rate
inline void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "mode,K,hits,accuracy,cohort_size,future_positives,base_rate\n";
    for (const auto& r : reports)
        for (std::size_t i = 0; i < r.k_values.size(); ++i)
            out << r.mode_label << "," << r.k_values[i] << "," << r.hits[i] << ","
                << detail::fmt_double(r.accuracy[i]) << "," << r.cohort_size << ","
                << r.future_positive_count << "," << detail::fmt_double(r.base_rate) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

struct ImprovementSeries {
    std::string mode_a, mode_b;
    std::vector<ImprovementEntry> entries;
};

// Improvement CSV: mode_a,mode_b,K,lift_pct (empty field when undefined).
inline void write_improvement_csv(std::span<const ImprovementSeries> series, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "mode_a,mode_b,K,lift_pct\n";
    for (const auto& s : series)
        for (const auto& e : s.entries) {
            out << s.mode_a << "," << s.mode_b << "," << e.k << ",";
            if (e.lift_pct) out << detail::fmt_double(*e.lift_pct);
            out << "\n";
        }
    if (!out) throw IoError("write failed for " + path.string());
}

namespace detail {

inline void write_curve_svg(std::span<const EvalReport> reports, const std::filesystem::path& path) {
    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    const int width = 640, height = 420, ml = 64, mr = 24, mt = 24, mb = 48;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    std::int64_t k_max = 1;
    double acc_max = 0.0;
    for (const auto& r : reports) {
        for (auto k : r.k_values) k_max = std::max(k_max, k);
        for (auto a : r.accuracy) acc_max = std::max(acc_max, a);
        acc_max = std::max(acc_max, r.base_rate);
    }
    if (acc_max <= 0.0) acc_max = 1.0;
    acc_max *= 1.1;

    const auto x_of = [&](std::int64_t k) { return ml + plot_w * static_cast<double>(k) / static_cast<double>(k_max); };
    const auto y_of = [&](double acc) { return mt + plot_h * (1.0 - acc / acc_max); };

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\""
        << mt + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double acc = acc_max * i / 4.0;
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt_double(y_of(acc) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_double(acc) << "</text>\n";
        const std::int64_t k = k_max * i / 4;
        out << "<text x=\"" << fmt_double(x_of(k)) << "\" y=\"" << mt + plot_h + 16
            << "\" font-size=\"11\" text-anchor=\"middle\">" << k << "</text>\n";
    }
    out << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 10
        << "\" font-size=\"12\" text-anchor=\"middle\">K</text>\n";

    if (!reports.empty()) {
        const double y = y_of(reports[0].base_rate);
        out << "<line x1=\"" << ml << "\" y1=\"" << fmt_double(y) << "\" x2=\"" << ml + plot_w << "\" y2=\""
            << fmt_double(y) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
        out << "<text x=\"" << ml + 4 << "\" y=\"" << fmt_double(y - 4)
            << "\" font-size=\"11\" fill=\"gray\">base rate</text>\n";
    }

    for (std::size_t s = 0; s < reports.size(); ++s) {
        const auto& r = reports[s];
        const char* color = colors[s % 5];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < r.k_values.size(); ++i) {
            if (i) out << " ";
            out << fmt_double(x_of(r.k_values[i])) << "," << fmt_double(y_of(r.accuracy[i]));
        }
        out << "\"/>\n";
        out << "<text x=\"" << ml + plot_w - 4 << "\" y=\"" << mt + 14 + 14 * static_cast<int>(s)
            << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << color << "\">" << r.mode_label << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

// K-accuracy curve artifact: one CSV row (mode,K,hits,accuracy) per
// report point, plus an optional SVG line chart. Both are byte-stable
// across runs on identical inputs.
inline void accuracy_curve(std::span<const EvalReport> reports, const std::filesystem::path& csv_path,
                           const std::optional<std::filesystem::path>& svg_path = std::nullopt) {
    if (reports.empty()) throw EvalError("accuracy_curve needs at least one report");
    for (const auto& r : reports)
        if (r.k_values.empty()) throw EvalError("accuracy_curve needs non-empty reports");
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv_path.string());
    out << "mode,K,hits,accuracy\n";
    for (const auto& r : reports)
        for (std::size_t i = 0; i < r.k_values.size(); ++i)
            out << r.mode_label << "," << r.k_values[i] << "," << r.hits[i] << ","
                << detail::fmt_double(r.accuracy[i]) << "\n";
    if (!out) throw IoError("write failed for " + csv_path.string());
    out.close();
    if (svg_path) detail::write_curve_svg(reports, *svg_path);
}

inline void accuracy_curve(const EvalReport& report, const std::filesystem::path& csv_path,
                           const std::optional<std::filesystem::path>& svg_path = std::nullopt) {
    accuracy_curve(std::span<const EvalReport>(&report, 1), csv_path, svg_path);
}

}  // namespace claimcast
