#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "claimcast/errors.hpp"

namespace claimcast {

// One day's worth of one service for one patient. `count` is a
// multiplicity: several records with the same (patient, service, day)
// are legal and add up.
struct ServiceEvent {
    std::int64_t patient_id = 0;
    std::int32_t service_id = 0;
    std::int32_t day = 0;
    std::int32_t count = 1;

    friend bool operator==(const ServiceEvent&, const ServiceEvent&) = default;
};

struct PatientRecord {
    std::int64_t patient_id = 0;
    std::vector<double> demographics;              // length D
    std::optional<std::int32_t> treatment_day;     // day of first treatment event

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

// Immutable longitudinal claims panel. Days are integer indexes in
// [0, days()), counted from a dataset-level epoch; calendar conversion
// happens upstream of this format. Events are stored per patient,
// sorted by (day, service), with same-cell records merged.
class ClaimsDataset {
public:
    ClaimsDataset() = default;

    // Pass -1 for any dimension to infer it: T from the largest event or
    // treatment day, I from the largest service id, D from the first
    // patient's demographics vector.
    static ClaimsDataset build(std::int32_t days, std::int32_t services, std::int32_t demographics,
                               std::vector<PatientRecord> patients, std::vector<ServiceEvent> events) {
        ClaimsDataset ds;
        ds.days_ = days;
        ds.services_ = services;
        ds.demographics_ = demographics;
        ds.patients_ = std::move(patients);
        ds.validate_and_index(std::move(events));
        return ds;
    }

    std::int32_t days() const { return days_; }             // T
    std::int32_t services() const { return services_; }     // I
    std::int32_t demographic_count() const { return demographics_; }  // D

    std::size_t patient_count() const { return patients_.size(); }
    const std::vector<PatientRecord>& patients() const { return patients_; }

    bool has_patient(std::int64_t patient_id) const { return index_.count(patient_id) != 0; }

    const PatientRecord& patient(std::int64_t patient_id) const {
        return patients_[patient_index(patient_id)];
    }

    std::span<const ServiceEvent> events_of(std::int64_t patient_id) const {
        const std::size_t i = patient_index(patient_id);
        return {events_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    std::span<const ServiceEvent> events_at(std::size_t patient_pos) const {
        return {events_.data() + offsets_[patient_pos], offsets_[patient_pos + 1] - offsets_[patient_pos]};
    }

    // Number of stored (merged) event records.
    std::size_t event_record_count() const { return events_.size(); }

    // Total event count, i.e. the sum of all multiplicities.
    std::int64_t total_event_count() const {
        std::int64_t n = 0;
        for (const auto& e : events_) n += e.count;
        return n;
    }

    bool operator==(const ClaimsDataset& o) const {
        return days_ == o.days_ && services_ == o.services_ && demographics_ == o.demographics_ &&
               patients_ == o.patients_ && events_ == o.events_;
    }

private:
    std::size_t patient_index(std::int64_t patient_id) const {
        auto it = index_.find(patient_id);
        if (it == index_.end())
            throw DataError("unknown patient_id " + std::to_string(patient_id));
        return it->second;
    }

    void validate_and_index(std::vector<ServiceEvent> events) {
        std::sort(patients_.begin(), patients_.end(),
                  [](const PatientRecord& a, const PatientRecord& b) { return a.patient_id < b.patient_id; });
        for (std::size_t i = 1; i < patients_.size(); ++i) {
            if (patients_[i].patient_id == patients_[i - 1].patient_id)
                throw DataError("duplicate patient_id " + std::to_string(patients_[i].patient_id));
        }

        if (days_ < 0) {
            std::int32_t max_day = -1;
            for (const auto& e : events) max_day = std::max(max_day, e.day);
            for (const auto& p : patients_)
                if (p.treatment_day) max_day = std::max(max_day, *p.treatment_day);
            days_ = max_day + 1;
        }
        if (services_ < 0) {
            std::int32_t max_svc = -1;
            for (const auto& e : events) max_svc = std::max(max_svc, e.service_id);
            services_ = max_svc + 1;
        }
        if (demographics_ < 0)
            demographics_ = patients_.empty() ? 0 : static_cast<std::int32_t>(patients_[0].demographics.size());

        index_.reserve(patients_.size());
        for (std::size_t i = 0; i < patients_.size(); ++i) {
            const auto& p = patients_[i];
            index_.emplace(p.patient_id, i);
            if (static_cast<std::int32_t>(p.demographics.size()) != demographics_)
                throw DataError("patient " + std::to_string(p.patient_id) + ": expected " +
                                std::to_string(demographics_) + " demographics, got " +
                                std::to_string(p.demographics.size()));
            for (double v : p.demographics)
                if (!std::isfinite(v))
                    throw DataError("patient " + std::to_string(p.patient_id) + ": non-finite demographic value");
            if (p.treatment_day && (*p.treatment_day < 0 || *p.treatment_day >= days_))
                throw DataError("patient " + std::to_string(p.patient_id) + ": treatment_day " +
                                std::to_string(*p.treatment_day) + " outside [0, " + std::to_string(days_) + ")");
        }

        for (const auto& e : events) {
            if (!index_.count(e.patient_id))
                throw DataError("event references unknown patient_id " + std::to_string(e.patient_id));
            if (e.day < 0 || e.day >= days_)
                throw DataError("event for patient " + std::to_string(e.patient_id) + ": day " +
                                std::to_string(e.day) + " outside [0, " + std::to_string(days_) + ")");
            if (e.service_id < 0 || e.service_id >= services_)
                throw DataError("event for patient " + std::to_string(e.patient_id) + ": service_id " +
                                std::to_string(e.service_id) + " outside [0, " + std::to_string(services_) + ")");
            if (e.count < 1)
                throw DataError("event for patient " + std::to_string(e.patient_id) + ": count must be >= 1");
        }

        std::sort(events.begin(), events.end(), [this](const ServiceEvent& a, const ServiceEvent& b) {
            const std::size_t ia = index_.at(a.patient_id), ib = index_.at(b.patient_id);
            if (ia != ib) return ia < ib;
            if (a.day != b.day) return a.day < b.day;
            return a.service_id < b.service_id;
        });

        events_.reserve(events.size());
        for (const auto& e : events) {
            if (!events_.empty()) {
                auto& last = events_.back();
                if (last.patient_id == e.patient_id && last.day == e.day && last.service_id == e.service_id) {
                    last.count += e.count;
                    continue;
                }
            }
            events_.push_back(e);
        }

        offsets_.assign(patients_.size() + 1, 0);
        for (const auto& e : events_) offsets_[index_.at(e.patient_id) + 1]++;
        for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
    }

    std::int32_t days_ = 0;
    std::int32_t services_ = 0;
    std::int32_t demographics_ = 0;
    std::vector<PatientRecord> patients_;                   // sorted by patient_id
    std::vector<ServiceEvent> events_;                      // grouped by patient, sorted by (day, service)
    std::vector<std::size_t> offsets_;                      // CSR offsets into events_
    std::unordered_map<std::int64_t, std::size_t> index_;
};

// Per-service event totals for days strictly before `up_to_day`.
// Entry i equals sum over t < up_to_day of w_{i,t}; the boundary day
// itself never counts.
inline std::vector<std::int64_t> service_counts(const ClaimsDataset& ds, std::int64_t patient_id,
                                                std::int32_t up_to_day) {
    if (up_to_day < 0 || up_to_day > ds.days())
        throw DataError("up_to_day " + std::to_string(up_to_day) + " outside [0, " + std::to_string(ds.days()) + "]");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.services()), 0);
    for (const auto& e : ds.events_of(patient_id)) {
        if (e.day >= up_to_day) break;  // events are day-sorted
        counts[static_cast<std::size_t>(e.service_id)] += e.count;
    }
    return counts;
}

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::string& file, std::size_t line_no) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw DataError(file + ":" + std::to_string(line_no) + ": malformed record");
    return j;
}

inline std::int64_t require_int(const nlohmann::json& j, const char* key, const std::string& file,
                                std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer())
        throw DataError(file + ":" + std::to_string(line_no) + ": missing or non-integer \"" + key + "\"");
    return it->get<std::int64_t>();
}

struct MetaHeader {
    std::optional<std::int32_t> days, services, demographics;
};

inline bool try_parse_meta(const nlohmann::json& j, MetaHeader& meta, const std::string& file) {
    auto type = j.find("type");
    if (type == j.end() || !type->is_string() || type->get<std::string>() != "meta") return false;
    for (auto& [key, value] : j.items()) {
        if (key == "type") continue;
        if (key != "T" && key != "I" && key != "D")
            throw DataError(file + ":1: unexpected meta key \"" + key + "\"");
        if (!value.is_number_integer()) throw DataError(file + ":1: meta \"" + key + "\" must be an integer");
        const auto v = value.get<std::int32_t>();
        auto& slot = key == "T" ? meta.days : key == "I" ? meta.services : meta.demographics;
        if (slot && *slot != v) throw DataError(file + ":1: meta \"" + key + "\" conflicts with other file");
        slot = v;
    }
    return true;
}

}  // namespace detail

// Loads a panel from the JSONL pair. Either file may start with an
// optional meta line {"type":"meta","T":..,"I":..,"D":..}; absent
// dimensions are inferred from the data.
inline ClaimsDataset load_dataset(const std::filesystem::path& events_path,
                                  const std::filesystem::path& patients_path) {
    detail::MetaHeader meta;
    std::vector<PatientRecord> patients;
    std::vector<ServiceEvent> events;

    {
        std::ifstream in(patients_path);
        if (!in) throw IoError("cannot open " + patients_path.string());
        const std::string fname = patients_path.filename().string();
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j = detail::parse_jsonl_line(line, fname, line_no);
            if (line_no == 1 && detail::try_parse_meta(j, meta, fname)) continue;
            PatientRecord p;
            p.patient_id = detail::require_int(j, "patient_id", fname, line_no);
            auto demo = j.find("demographics");
            if (demo == j.end() || !demo->is_array())
                throw DataError(fname + ":" + std::to_string(line_no) + ": missing or non-array \"demographics\"");
            for (const auto& v : *demo) {
                if (!v.is_number())
                    throw DataError(fname + ":" + std::to_string(line_no) + ": non-numeric demographic value");
                p.demographics.push_back(v.get<double>());
            }
            auto td = j.find("treatment_day");
            if (td == j.end())
                throw DataError(fname + ":" + std::to_string(line_no) + ": missing \"treatment_day\" (int or null)");
            if (!td->is_null()) {
                if (!td->is_number_integer())
                    throw DataError(fname + ":" + std::to_string(line_no) + ": \"treatment_day\" must be int or null");
                p.treatment_day = td->get<std::int32_t>();
            }
            for (auto& [key, value] : j.items()) {
                (void)value;
                if (key != "patient_id" && key != "demographics" && key != "treatment_day")
                    throw DataError(fname + ":" + std::to_string(line_no) + ": unexpected key \"" + key + "\"");
            }
            patients.push_back(std::move(p));
        }
    }

    {
        std::ifstream in(events_path);
        if (!in) throw IoError("cannot open " + events_path.string());
        const std::string fname = events_path.filename().string();
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j = detail::parse_jsonl_line(line, fname, line_no);
            if (line_no == 1 && detail::try_parse_meta(j, meta, fname)) continue;
            ServiceEvent e;
            e.patient_id = detail::require_int(j, "patient_id", fname, line_no);
            e.service_id = static_cast<std::int32_t>(detail::require_int(j, "service_id", fname, line_no));
            e.day = static_cast<std::int32_t>(detail::require_int(j, "day", fname, line_no));
            if (j.contains("count"))
                e.count = static_cast<std::int32_t>(detail::require_int(j, "count", fname, line_no));
            for (auto& [key, value] : j.items()) {
                (void)value;
                if (key != "patient_id" && key != "service_id" && key != "day" && key != "count")
                    throw DataError(fname + ":" + std::to_string(line_no) + ": unexpected key \"" + key + "\"");
            }
            events.push_back(e);
        }
    }

    return ClaimsDataset::build(meta.days.value_or(-1), meta.services.value_or(-1),
                                meta.demographics.value_or(-1), std::move(patients), std::move(events));
}

// Writes the JSONL pair with meta headers. load(save(ds)) == ds on all
// fields; demographics use shortest round-trip double formatting.
inline void save_dataset(const ClaimsDataset& ds, const std::filesystem::path& events_path,
                         const std::filesystem::path& patients_path) {
    {
        std::ofstream out(events_path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + events_path.string());
        out << "{\"type\":\"meta\",\"T\":" << ds.days() << ",\"I\":" << ds.services()
            << ",\"D\":" << ds.demographic_count() << "}\n";
        for (const auto& p : ds.patients()) {
            for (const auto& e : ds.events_of(p.patient_id)) {
                out << "{\"patient_id\":" << e.patient_id << ",\"service_id\":" << e.service_id
                    << ",\"day\":" << e.day << ",\"count\":" << e.count << "}\n";
            }
        }
        if (!out) throw IoError("write failed for " + events_path.string());
    }
    {
        std::ofstream out(patients_path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + patients_path.string());
        out << "{\"type\":\"meta\",\"T\":" << ds.days() << ",\"I\":" << ds.services()
            << ",\"D\":" << ds.demographic_count() << "}\n";
        for (const auto& p : ds.patients()) {
            nlohmann::json j;
            j["patient_id"] = p.patient_id;
            j["demographics"] = p.demographics;
            if (p.treatment_day)
                j["treatment_day"] = *p.treatment_day;
            else
                j["treatment_day"] = nullptr;
            out << j.dump() << "\n";
        }
        if (!out) throw IoError("write failed for " + patients_path.string());
    }
}

}  // namespace claimcast
