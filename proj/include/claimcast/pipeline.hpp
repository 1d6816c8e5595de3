#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "claimcast/claims.hpp"
#include "claimcast/config.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/eval.hpp"
#include "claimcast/features.hpp"
#include "claimcast/model.hpp"
#include "claimcast/synth.hpp"

namespace claimcast {

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& fn) {
    try {
        return fn();
    } catch (ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
    } catch (DataError& e) {
        throw DataError(name + ": " + e.what());
    } catch (CalibrationError& e) {
        throw CalibrationError(name + ": " + e.what());
    } catch (TrainError& e) {
        throw TrainError(name + ": " + e.what());
    } catch (EvalError& e) {
        throw EvalError(name + ": " + e.what());
    } catch (IoError& e) {
        throw IoError(name + ": " + e.what());
    }
}

inline void log_line(std::ostream* log, const std::string& s) {
    if (log) *log << s << "\n";
}

inline void print_warnings(std::ostream* log, const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) log_line(log, "warning: " + w);
}

}  // namespace detail

inline std::filesystem::path events_path(const RunConfig& cfg) { return cfg.data_dir / "events.jsonl"; }
inline std::filesystem::path patients_path(const RunConfig& cfg) { return cfg.data_dir / "patients.jsonl"; }
inline std::filesystem::path manifest_path(const RunConfig& cfg) { return cfg.data_dir / "manifest.json"; }

// Generates the synthetic panel and writes events.jsonl, patients.jsonl
// and manifest.json under data_dir. Byte-stable for a fixed config.
inline GenerationResult run_generate(const RunConfig& cfg, std::ostream* log = nullptr) {
    return detail::stage("generate", [&] {
        std::filesystem::create_directories(cfg.data_dir);
        GenerationResult gen = generate(cfg.synth);
        save_dataset(gen.dataset, events_path(cfg), patients_path(cfg));

        nlohmann::json manifest;
        manifest["calibrated_hazard_base"] = gen.hazard_base_used;
        manifest["calibrated"] = gen.calibrated;
        manifest["realized_event_rate"] = gen.realized_event_rate;
        manifest["target_event_rate"] = cfg.synth.target_event_rate;
        manifest["cohort_size"] = gen.cohort_size;
        manifest["future_positives"] = gen.future_positive_count;
        manifest["pre_split_treated"] = gen.pre_split_treated;
        manifest["patients"] = gen.dataset.patient_count();
        manifest["event_records"] = gen.dataset.event_record_count();
        manifest["total_events"] = gen.dataset.total_event_count();
        manifest["split_day"] = cfg.synth.split_day;
        manifest["horizon"] = cfg.synth.horizon;
        manifest["seeds"] = {{"generation", cfg.synth.seed},
                             {"sampling", cfg.features.sampling_seed},
                             {"training", cfg.model.seed}};
        std::ofstream out(manifest_path(cfg), std::ios::trunc);
        if (!out) throw IoError("cannot write " + manifest_path(cfg).string());
        out << manifest.dump(2) << "\n";

        char line[160];
        std::snprintf(line, sizeof(line),
                      "generated %lld patients, %lld events; realized look-forward rate %.4f (hazard_base %.3g)",
                      static_cast<long long>(gen.dataset.patient_count()),
                      static_cast<long long>(gen.dataset.total_event_count()), gen.realized_event_rate,
                      gen.hazard_base_used);
        detail::log_line(log, line);
        return gen;
    });
}

// Loads the panel from data_dir when both JSONL files exist, otherwise
// generates and writes it first.
inline ClaimsDataset load_or_generate(const RunConfig& cfg, std::ostream* log = nullptr) {
    if (std::filesystem::exists(events_path(cfg)) && std::filesystem::exists(patients_path(cfg))) {
        detail::log_line(log, "loading panel from " + cfg.data_dir.string());
        return detail::stage("load", [&] { return load_dataset(events_path(cfg), patients_path(cfg)); });
    }
    return run_generate(cfg, log).dataset;
}

inline FeatureConfig feature_config_for(const RunConfig& cfg, FeatureMode mode) {
    FeatureConfig fc = cfg.features;
    fc.mode = mode;
    return fc;
}

struct ModeRun {
    TrainedModel model;
    EvalReport report;
    std::vector<ScoredPatient> cohort;
};

// featurize + train + score + evaluate for a single feature mode.
inline ModeRun run_mode(const ClaimsDataset& ds, const RunConfig& cfg, FeatureMode mode,
                        std::span<const std::int64_t> k_values, std::ostream* log = nullptr) {
    const std::string label = to_string(mode);
    const FeatureConfig fc = feature_config_for(cfg, mode);

    std::vector<std::string> warnings;
    LabeledMatrix train_matrix =
        detail::stage("featurize " + label, [&] { return build_training_matrix(ds, fc, &warnings); });
    detail::print_warnings(log, warnings);

    ModeRun run;
    run.model = detail::stage("train " + label, [&] { return train(train_matrix, cfg.model); });

    const NormalizationStats* stats = train_matrix.norm ? &*train_matrix.norm : nullptr;
    LabeledMatrix scoring =
        detail::stage("score " + label, [&] { return build_scoring_matrix(ds, fc, stats); });
    const std::vector<double> scores = run.model.predict_many(scoring);

    run.cohort.reserve(scoring.rows.size());
    for (std::size_t i = 0; i < scoring.rows.size(); ++i)
        run.cohort.push_back({scoring.rows[i].patient_id, scores[i], scoring.rows[i].label});

    run.report = detail::stage("evaluate " + label, [&] { return k_accuracy(run.cohort, k_values, label); });

    char line[200];
    std::snprintf(line, sizeof(line), "%s: trained on %lld rows (%lld positives), final loss %.4f",
                  label.c_str(), static_cast<long long>(train_matrix.rows.size()),
                  static_cast<long long>(train_matrix.positive_count()), run.model.final_loss);
    detail::log_line(log, line);
    return run;
}

struct BenchmarkResult {
    std::vector<EvalReport> reports;               // bucketed, count, count_td
    std::vector<ImprovementSeries> improvements;   // bucketed vs each baseline
    std::vector<std::int64_t> k_values;
    std::string summary;
};

inline std::string format_summary_table(const BenchmarkResult& bench) {
    std::ostringstream out;
    const auto& reports = bench.reports;
    char buf[64];
    out << "cohort " << reports[0].cohort_size << " patients, " << reports[0].future_positive_count
        << " future positives (base rate ";
    std::snprintf(buf, sizeof(buf), "%.2f%%)", 100.0 * reports[0].base_rate);
    out << buf << "\n\n";

    std::size_t name_w = std::string("K").size();
    for (const auto& r : reports) name_w = std::max(name_w, r.mode_label.size());
    for (const auto& imp : bench.improvements)
        name_w = std::max(name_w, imp.mode_a.size() + 4 + imp.mode_b.size());

    const auto pad = [&](const std::string& s) {
        out << s << std::string(name_w - s.size(), ' ');
    };
    pad("K");
    for (auto k : bench.k_values) {
        std::snprintf(buf, sizeof(buf), "%9lld", static_cast<long long>(k));
        out << buf;
    }
    out << "\n";
    for (const auto& r : reports) {
        pad(r.mode_label);
        for (auto h : r.hits) {
            std::snprintf(buf, sizeof(buf), "%9lld", static_cast<long long>(h));
            out << buf;
        }
        out << "\n";
    }
    for (const auto& imp : bench.improvements) {
        pad(imp.mode_a + " vs " + imp.mode_b);
        for (const auto& e : imp.entries) {
            if (e.lift_pct)
                std::snprintf(buf, sizeof(buf), "%8.2f%%", *e.lift_pct);
            else
                std::snprintf(buf, sizeof(buf), "%9s", "n/a");
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

// Full three-mode comparison on one panel. Writes reports.csv,
// improvements.csv, curve.csv, curve.svg and summary.txt under out_dir.
inline BenchmarkResult run_benchmark(const RunConfig& cfg, std::ostream* log = nullptr) {
    const ClaimsDataset ds = load_or_generate(cfg, log);
    std::filesystem::create_directories(cfg.out_dir);

    std::int64_t cohort_size = 0;
    for (const auto& p : ds.patients())
        if (!p.treatment_day || *p.treatment_day > cfg.features.split_day) ++cohort_size;
    BenchmarkResult bench;
    bench.k_values = detail::stage("evaluate", [&] { return resolve_k_values(cfg.eval, cohort_size); });

    for (const FeatureMode mode : {FeatureMode::bucketed, FeatureMode::count, FeatureMode::count_td})
        bench.reports.push_back(run_mode(ds, cfg, mode, bench.k_values, log).report);

    bench.improvements.push_back(
        {"bucketed", "count", improvement(bench.reports[0], bench.reports[1])});
    bench.improvements.push_back(
        {"bucketed", "count_td", improvement(bench.reports[0], bench.reports[2])});

    write_report_csv(bench.reports, cfg.out_dir / "reports.csv");
    write_improvement_csv(bench.improvements, cfg.out_dir / "improvements.csv");
    accuracy_curve(bench.reports, cfg.out_dir / "curve.csv", cfg.out_dir / "curve.svg");

    bench.summary = format_summary_table(bench);
    {
        std::ofstream out(cfg.out_dir / "summary.txt", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (cfg.out_dir / "summary.txt").string());
        out << bench.summary;
    }
    detail::log_line(log, "");
    if (log) *log << bench.summary;
    return bench;
}

// --- single-stage entry points used by the CLI ---

inline std::filesystem::path matrix_csv_path(const RunConfig& cfg, const char* kind) {
    return cfg.out_dir / (std::string(kind) + "_matrix_" + to_string(cfg.features.mode) + ".csv");
}
inline std::filesystem::path model_path(const RunConfig& cfg) {
    return cfg.out_dir / (std::string("model_") + to_string(cfg.features.mode) + ".json");
}
inline std::filesystem::path scores_path(const RunConfig& cfg) {
    return cfg.out_dir / (std::string("scores_") + to_string(cfg.features.mode) + ".csv");
}

// Writes train/score matrices for the configured mode as CSV.
inline void run_featurize(const RunConfig& cfg, std::ostream* log = nullptr) {
    const ClaimsDataset ds = load_or_generate(cfg, log);
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::string> warnings;
    const LabeledMatrix train_matrix = detail::stage(
        "featurize", [&] { return build_training_matrix(ds, cfg.features, &warnings); });
    const LabeledMatrix scoring = detail::stage("featurize", [&] {
        return build_scoring_matrix(ds, cfg.features, train_matrix.norm ? &*train_matrix.norm : nullptr);
    });
    detail::print_warnings(log, warnings);
    write_matrix_csv(train_matrix, matrix_csv_path(cfg, "train"));
    write_matrix_csv(scoring, matrix_csv_path(cfg, "score"));
    detail::log_line(log, "wrote " + matrix_csv_path(cfg, "train").string() + " (" +
                              std::to_string(train_matrix.rows.size()) + " rows) and " +
                              matrix_csv_path(cfg, "score").string() + " (" +
                              std::to_string(scoring.rows.size()) + " rows)");
}

// Trains a model for the configured mode and writes model_<mode>.json.
inline void run_train(const RunConfig& cfg, std::ostream* log = nullptr) {
    const ClaimsDataset ds = load_or_generate(cfg, log);
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::string> warnings;
    const LabeledMatrix train_matrix =
        detail::stage("featurize", [&] { return build_training_matrix(ds, cfg.features, &warnings); });
    detail::print_warnings(log, warnings);
    const TrainedModel model = detail::stage("train", [&] { return train(train_matrix, cfg.model); });
    model.save(model_path(cfg));
    char line[160];
    std::snprintf(line, sizeof(line), "trained %s on %lld rows, final loss %.4f -> %s",
                  to_string(cfg.model.architecture), static_cast<long long>(train_matrix.rows.size()),
                  model.final_loss, model_path(cfg).string().c_str());
    detail::log_line(log, line);
}

// Scores the untreated-at-split cohort with a previously trained model
// and writes scores_<mode>.csv (patient_id,score,label).
inline void run_score(const RunConfig& cfg, std::ostream* log = nullptr) {
    const ClaimsDataset ds = load_or_generate(cfg, log);
    const TrainedModel model = detail::stage("score", [&] { return TrainedModel::load(model_path(cfg)); });
    const LabeledMatrix scoring = detail::stage("score", [&] {
        return build_scoring_matrix(ds, cfg.features, cfg.features.normalize ? &model.norm : nullptr);
    });
    if (scoring.feature_names != model.feature_names)
        throw DataError("score: scoring features do not match the model (check features.mode)");
    const std::vector<double> scores = model.predict_many(scoring);

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream out(scores_path(cfg), std::ios::trunc);
    if (!out) throw IoError("cannot write " + scores_path(cfg).string());
    out << "patient_id,score,label\n";
    char buf[64];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", scores[i]);
        out << scoring.rows[i].patient_id << "," << buf << "," << scoring.rows[i].label << "\n";
    }
    detail::log_line(log, "scored " + std::to_string(scores.size()) + " patients -> " +
                              scores_path(cfg).string());
}

// Reads scores_<mode>.csv back and writes report/curve artifacts.
inline EvalReport run_evaluate(const RunConfig& cfg, std::ostream* log = nullptr) {
    return detail::stage("evaluate", [&] {
        std::ifstream in(scores_path(cfg));
        if (!in) throw IoError("cannot open " + scores_path(cfg).string() + " (run score first)");
        std::string line;
        if (!std::getline(in, line) || line != "patient_id,score,label")
            throw DataError(scores_path(cfg).string() + ": unexpected header");
        std::vector<ScoredPatient> cohort;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            ScoredPatient s;
            char* end = nullptr;
            s.patient_id = std::strtoll(line.c_str(), &end, 10);
            if (!end || *end != ',')
                throw DataError(scores_path(cfg).string() + ":" + std::to_string(line_no) + ": malformed row");
            s.score = std::strtod(end + 1, &end);
            if (!end || *end != ',')
                throw DataError(scores_path(cfg).string() + ":" + std::to_string(line_no) + ": malformed row");
            s.label = static_cast<std::int32_t>(std::strtol(end + 1, &end, 10));
            cohort.push_back(s);
        }
        const auto ks = resolve_k_values(cfg.eval, static_cast<std::int64_t>(cohort.size()));
        EvalReport report = k_accuracy(std::move(cohort), ks, to_string(cfg.features.mode));

        std::filesystem::create_directories(cfg.out_dir);
        const std::string mode = to_string(cfg.features.mode);
        write_report_csv(std::span<const EvalReport>(&report, 1), cfg.out_dir / ("report_" + mode + ".csv"));
        accuracy_curve(report, cfg.out_dir / ("curve_" + mode + ".csv"), cfg.out_dir / ("curve_" + mode + ".svg"));
        if (log) {
            for (std::size_t i = 0; i < report.k_values.size(); ++i) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "K=%-8lld hits=%-8lld accuracy=%.4f",
                              static_cast<long long>(report.k_values[i]),
                              static_cast<long long>(report.hits[i]), report.accuracy[i]);
                detail::log_line(log, buf);
            }
        }
        return report;
    });
}

}  // namespace claimcast
