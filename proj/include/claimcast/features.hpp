#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "claimcast/claims.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

enum class FeatureMode { bucketed, count, count_td };

inline const char* to_string(FeatureMode m) {
    switch (m) {
        case FeatureMode::bucketed: return "bucketed";
        case FeatureMode::count: return "count";
        case FeatureMode::count_td: return "count_td";
    }
    return "?";
}

inline FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "bucketed") return FeatureMode::bucketed;
    if (s == "count") return FeatureMode::count;
    if (s == "count_td") return FeatureMode::count_td;
    throw ConfigError("unknown feature mode \"" + s + "\" (expected bucketed, count or count_td)");
}

struct FeatureConfig {
    std::int32_t delta = 91;            // bucket length in days
    std::int32_t num_intervals = 2;     // number of buckets before the index date
    double neg_inclusion_prob = 0.3;    // q: Bernoulli rate for keeping untreated patients
    std::int32_t split_day = 0;         // most recent day visible to training
    std::int32_t horizon = 365;         // look-forward window length H
    FeatureMode mode = FeatureMode::bucketed;
    std::int32_t diagnosis_service = 0; // reference service for time-difference features
    std::uint64_t sampling_seed = 0;
    bool normalize = true;
};

// Per-column standardization parameters. Columns left untouched
// (zero variance in training) carry mean 0, stdev 1.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stdev;

    void apply(std::span<double> row) const {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean[j]) / stdev[j];
    }

    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

struct LabeledRow {
    std::int64_t patient_id = 0;
    std::int32_t index_day = 0;
    std::vector<double> features;
    std::int32_t label = 0;
};

struct LabeledMatrix {
    FeatureMode mode = FeatureMode::bucketed;
    std::vector<std::string> feature_names;
    std::vector<LabeledRow> rows;
    std::optional<NormalizationStats> norm;  // set iff rows were standardized

    std::size_t feature_count() const { return feature_names.size(); }

    std::int64_t positive_count() const {
        std::int64_t n = 0;
        for (const auto& r : rows) n += r.label;
        return n;
    }
};

// Bucketed service totals before an index date. Bucket tau (1-based,
// tau <= num_intervals) sums w_{i,day} over days
// [index_day - tau*delta, index_day - (tau-1)*delta - 1]; bucket 1 is the
// most recent block and the index day itself is never included. Days
// before the panel start contribute zero. Layout is service-major:
// [svc0 bucket1..bucketD, svc1 bucket1..bucketD, ...].
inline std::vector<std::int64_t> bucket_features(const ClaimsDataset& ds, std::int64_t patient_id,
                                                 std::int32_t index_day, std::int32_t delta,
                                                 std::int32_t num_intervals) {
    if (delta < 1) throw ConfigError("delta must be >= 1");
    if (num_intervals < 1) throw ConfigError("num_intervals must be >= 1");
    if (index_day < 0 || index_day > ds.days())
        throw DataError("index_day " + std::to_string(index_day) + " outside [0, " + std::to_string(ds.days()) + "]");

    std::vector<std::int64_t> out(static_cast<std::size_t>(ds.services()) * num_intervals, 0);
    const std::int64_t window = static_cast<std::int64_t>(delta) * num_intervals;
    for (const auto& e : ds.events_of(patient_id)) {
        if (e.day >= index_day) break;
        const std::int64_t offset = static_cast<std::int64_t>(index_day) - 1 - e.day;
        if (offset >= window) continue;
        const std::size_t tau = static_cast<std::size_t>(offset / delta);
        out[static_cast<std::size_t>(e.service_id) * num_intervals + tau] += e.count;
    }
    return out;
}

// Days from the patient's diagnosis date (first event of the designated
// diagnosis service before index_day) to each service's own first
// occurrence before index_day. Services never seen before the index
// date are -1; if the diagnosis service itself was never seen, the
// whole vector is -1.
inline std::vector<std::int64_t> time_difference_features(const ClaimsDataset& ds, std::int64_t patient_id,
                                                          std::int32_t index_day,
                                                          std::int32_t diagnosis_service) {
    if (index_day < 0 || index_day > ds.days())
        throw DataError("index_day " + std::to_string(index_day) + " outside [0, " + std::to_string(ds.days()) + "]");
    if (diagnosis_service < 0 || diagnosis_service >= ds.services())
        throw ConfigError("diagnosis_service " + std::to_string(diagnosis_service) + " outside [0, " +
                          std::to_string(ds.services()) + ")");

    std::vector<std::int64_t> first_day(static_cast<std::size_t>(ds.services()), -1);
    for (const auto& e : ds.events_of(patient_id)) {
        if (e.day >= index_day) break;
        auto& slot = first_day[static_cast<std::size_t>(e.service_id)];
        if (slot < 0) slot = e.day;  // events are day-sorted
    }

    std::vector<std::int64_t> out(static_cast<std::size_t>(ds.services()), -1);
    const std::int64_t diag = first_day[static_cast<std::size_t>(diagnosis_service)];
    if (diag < 0) return out;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (first_day[i] >= 0) out[i] = first_day[i] - diag;
    return out;
}

namespace detail {

inline void append_counts(std::vector<double>& dst, std::span<const std::int64_t> src) {
    for (auto v : src) dst.push_back(static_cast<double>(v));
}

inline std::vector<double> assemble_features(const ClaimsDataset& ds, const PatientRecord& p,
                                             std::int32_t index_day, const FeatureConfig& cfg) {
    std::vector<double> x;
    switch (cfg.mode) {
        case FeatureMode::bucketed:
            x.reserve(static_cast<std::size_t>(ds.services()) * cfg.num_intervals + ds.demographic_count());
            append_counts(x, bucket_features(ds, p.patient_id, index_day, cfg.delta, cfg.num_intervals));
            break;
        case FeatureMode::count:
            x.reserve(static_cast<std::size_t>(ds.services()) + ds.demographic_count());
            append_counts(x, service_counts(ds, p.patient_id, index_day));
            break;
        case FeatureMode::count_td:
            x.reserve(2 * static_cast<std::size_t>(ds.services()) + ds.demographic_count());
            append_counts(x, service_counts(ds, p.patient_id, index_day));
            break;
    }
    x.insert(x.end(), p.demographics.begin(), p.demographics.end());
    if (cfg.mode == FeatureMode::count_td)
        append_counts(x, time_difference_features(ds, p.patient_id, index_day, cfg.diagnosis_service));
    return x;
}

inline std::vector<std::string> feature_names_for(const ClaimsDataset& ds, const FeatureConfig& cfg) {
    std::vector<std::string> names;
    const auto svc = [](std::int32_t i) { return "svc" + std::to_string(i); };
    switch (cfg.mode) {
        case FeatureMode::bucketed:
            for (std::int32_t i = 0; i < ds.services(); ++i)
                for (std::int32_t tau = 1; tau <= cfg.num_intervals; ++tau)
                    names.push_back(svc(i) + "_bucket" + std::to_string(tau));
            break;
        case FeatureMode::count:
        case FeatureMode::count_td:
            for (std::int32_t i = 0; i < ds.services(); ++i) names.push_back(svc(i) + "_count");
            break;
    }
    for (std::int32_t j = 0; j < ds.demographic_count(); ++j) names.push_back("demo" + std::to_string(j));
    if (cfg.mode == FeatureMode::count_td)
        for (std::int32_t i = 0; i < ds.services(); ++i) names.push_back(svc(i) + "_td");
    return names;
}

inline NormalizationStats compute_stats(const std::vector<LabeledRow>& rows, std::size_t width) {
    NormalizationStats st;
    st.mean.assign(width, 0.0);
    st.stdev.assign(width, 1.0);
    if (rows.empty()) return st;
    const double n = static_cast<double>(rows.size());
    std::vector<double> mean(width, 0.0), sq(width, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < width; ++j) mean[j] += r.features[j];
    for (auto& m : mean) m /= n;
    for (const auto& r : rows)
        for (std::size_t j = 0; j < width; ++j) {
            const double d = r.features[j] - mean[j];
            sq[j] += d * d;
        }
    for (std::size_t j = 0; j < width; ++j) {
        const double sd = std::sqrt(sq[j] / n);
        if (sd > 0.0) {
            st.mean[j] = mean[j];
            st.stdev[j] = sd;
        }  // constant columns pass through unchanged
    }
    return st;
}

inline void validate_feature_config(const FeatureConfig& cfg, const ClaimsDataset& ds,
                                    std::vector<std::string>* warnings) {
    if (cfg.delta < 1) throw ConfigError("delta must be >= 1");
    if (cfg.num_intervals < 1) throw ConfigError("num_intervals must be >= 1");
    if (cfg.neg_inclusion_prob < 0.0 || cfg.neg_inclusion_prob > 1.0)
        throw ConfigError("neg_inclusion_prob must lie in [0, 1]");
    if (cfg.split_day < 0 || cfg.split_day >= ds.days())
        throw DataError("split_day " + std::to_string(cfg.split_day) + " outside [0, " + std::to_string(ds.days()) +
                        ")");
    if (cfg.diagnosis_service < 0 || cfg.diagnosis_service >= ds.services())
        throw ConfigError("diagnosis_service outside [0, " + std::to_string(ds.services()) + ")");
    if (warnings && static_cast<std::int64_t>(cfg.delta) * cfg.num_intervals > cfg.split_day)
        warnings->push_back("look-back delta*num_intervals (" +
                            std::to_string(static_cast<std::int64_t>(cfg.delta) * cfg.num_intervals) +
                            " days) exceeds split_day " + std::to_string(cfg.split_day) +
                            "; early buckets will be truncated");
}

}  // namespace detail

// Training rows, one per included patient. Treated patients with
// treatment_day <= split_day become positives indexed at their
// treatment day; everyone else is a negative indexed at the split day,
// kept with probability neg_inclusion_prob. Patients treated after the
// split are negatives, never positives. Negative inclusion is a
// per-patient hash of (sampling_seed, patient_id), so the sample is
// stable across feature modes and dataset extensions.
inline LabeledMatrix build_training_matrix(const ClaimsDataset& ds, const FeatureConfig& cfg,
                                           std::vector<std::string>* warnings = nullptr) {
    detail::validate_feature_config(cfg, ds, warnings);

    LabeledMatrix m;
    m.mode = cfg.mode;
    m.feature_names = detail::feature_names_for(ds, cfg);

    std::int64_t positives = 0, negatives = 0;
    for (const auto& p : ds.patients()) {
        const bool treated_before_split = p.treatment_day && *p.treatment_day <= cfg.split_day;
        LabeledRow row;
        row.patient_id = p.patient_id;
        if (treated_before_split) {
            row.index_day = *p.treatment_day;
            row.label = 1;
            ++positives;
        } else {
            const double u = hash_to_unit(derive_seed(cfg.sampling_seed, static_cast<std::uint64_t>(p.patient_id),
                                                      stream::sampling));
            if (u >= cfg.neg_inclusion_prob) continue;
            row.index_day = cfg.split_day;
            row.label = 0;
            ++negatives;
        }
        row.features = detail::assemble_features(ds, p, row.index_day, cfg);
        m.rows.push_back(std::move(row));
    }

    if (positives == 0) throw DataError("training matrix has zero positive rows (untrainable)");
    if (negatives == 0) throw DataError("training matrix has zero sampled negative rows (untrainable)");

    if (cfg.normalize) {
        auto stats = detail::compute_stats(m.rows, m.feature_names.size());
        for (auto& r : m.rows) stats.apply(r.features);
        m.norm = std::move(stats);
    }
    return m;
}

// Scoring rows: every patient not treated on or before the split day,
// all indexed at the split day. The label marks treatment inside
// (split_day, split_day + horizon] and exists for the evaluator only.
// When cfg.normalize is set, train_stats (from the training matrix or a
// trained model) are required and reused as-is.
inline LabeledMatrix build_scoring_matrix(const ClaimsDataset& ds, const FeatureConfig& cfg,
                                          const NormalizationStats* train_stats = nullptr,
                                          std::vector<std::string>* warnings = nullptr) {
    detail::validate_feature_config(cfg, ds, warnings);
    if (cfg.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (static_cast<std::int64_t>(cfg.split_day) + cfg.horizon > ds.days())
        throw DataError("horizon extends beyond the panel: split_day + horizon = " +
                        std::to_string(static_cast<std::int64_t>(cfg.split_day) + cfg.horizon) + " > T = " +
                        std::to_string(ds.days()));
    if (cfg.normalize && !train_stats)
        throw DataError("scoring with normalize=true requires training normalization statistics");

    LabeledMatrix m;
    m.mode = cfg.mode;
    m.feature_names = detail::feature_names_for(ds, cfg);

    for (const auto& p : ds.patients()) {
        if (p.treatment_day && *p.treatment_day <= cfg.split_day) continue;
        LabeledRow row;
        row.patient_id = p.patient_id;
        row.index_day = cfg.split_day;
        row.label = (p.treatment_day && *p.treatment_day <= cfg.split_day + cfg.horizon) ? 1 : 0;
        row.features = detail::assemble_features(ds, p, row.index_day, cfg);
        if (cfg.normalize) train_stats->apply(row.features);
        m.rows.push_back(std::move(row));
    }
    if (cfg.normalize) m.norm = *train_stats;
    return m;
}

// CSV layout: feature columns, then label, patient_id, index_day.
// Floats carry 9 significant digits.
inline void write_matrix_csv(const LabeledMatrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& name : m.feature_names) out << name << ",";
    out << "label,patient_id,index_day\n";
    char buf[64];
    for (const auto& r : m.rows) {
        for (double v : r.features) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            out << buf << ",";
        }
        out << r.label << "," << r.patient_id << "," << r.index_day << "\n";
    }
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace claimcast
