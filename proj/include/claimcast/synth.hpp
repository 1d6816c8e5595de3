#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "claimcast/claims.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

// Synthetic panel with a planted recency signal: a patient's daily
// treatment hazard is hazard_base scaled by hazard_boost once per
// trigger-service event in the previous recency_window days. Lifetime
// service totals carry almost none of that signal; recent-window
// totals carry all of it.
struct SynthConfig {
    std::int64_t patients = 20000;          // P
    std::int32_t days = 1411;               // T
    std::int32_t services = 26;             // I
    std::int32_t demographics = 28;         // D
    std::int32_t dummy_demographics = 18;   // trailing D entries drawn as {0,1} dummies
    double base_event_rate = 0.15;          // expected daily service events per patient, split evenly across services
    std::vector<std::int32_t> trigger_services = {0, 1, 2, 3};
    std::int32_t recency_window = 182;      // R days over which trigger events raise the hazard
    double hazard_base = 1e-4;              // daily baseline treatment probability (calibration start)
    double hazard_boost = 2.0;              // multiplicative hazard factor per recent trigger event
    double target_event_rate = 0.0561;      // desired look-forward rate among patients untreated at the split
    bool calibrate = true;                  // bisect hazard_base to hit target_event_rate
    std::int32_t split_day = 1045;
    std::int32_t horizon = 365;             // look-forward window length H
    std::uint64_t seed = 1;
};

struct GenerationResult {
    ClaimsDataset dataset;
    double hazard_base_used = 0.0;
    double realized_event_rate = 0.0;       // window positives / cohort untreated at split
    std::int64_t cohort_size = 0;           // patients untreated on or before the split day
    std::int64_t future_positive_count = 0; // cohort members treated within (split, split+H]
    std::int64_t pre_split_treated = 0;
    bool calibrated = false;
};

namespace detail {

inline void validate_synth_config(const SynthConfig& c) {
    if (c.patients < 1) throw ConfigError("patients must be >= 1");
    if (c.days < 1) throw ConfigError("days must be >= 1");
    if (c.services < 1) throw ConfigError("services must be >= 1");
    if (c.demographics < 0) throw ConfigError("demographics must be >= 0");
    if (c.dummy_demographics < 0 || c.dummy_demographics > c.demographics)
        throw ConfigError("dummy_demographics must lie in [0, demographics]");
    if (c.base_event_rate < 0.0 || c.base_event_rate > 1.0)
        throw ConfigError("base_event_rate must lie in [0, 1]");
    if (c.hazard_base < 0.0 || c.hazard_base > 1.0) throw ConfigError("hazard_base must lie in [0, 1]");
    if (c.target_event_rate < 0.0 || c.target_event_rate > 1.0)
        throw ConfigError("target_event_rate must lie in [0, 1]");
    if (c.hazard_boost <= 0.0) throw ConfigError("hazard_boost must be positive");
    if (c.recency_window < 1) throw ConfigError("recency_window must be >= 1");
    std::vector<std::int32_t> trig = c.trigger_services;
    std::sort(trig.begin(), trig.end());
    for (std::size_t i = 0; i < trig.size(); ++i) {
        if (trig[i] < 0 || trig[i] >= c.services)
            throw ConfigError("trigger service " + std::to_string(trig[i]) + " outside [0, " +
                              std::to_string(c.services) + ")");
        if (i > 0 && trig[i] == trig[i - 1])
            throw ConfigError("duplicate trigger service " + std::to_string(trig[i]));
    }
    if (c.split_day < 0 || c.split_day >= c.days)
        throw ConfigError("split_day must lie in [0, days)");
    if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (static_cast<std::int64_t>(c.split_day) + c.horizon > c.days)
        throw ConfigError("split_day + horizon must be <= days");
}

// Everything about a patient that does not depend on hazard_base, so
// calibration can re-run only the treatment draw.
struct PatientDraft {
    std::vector<ServiceEvent> events;        // merged, sorted by (day, service)
    std::vector<double> demographics;
    std::vector<std::int32_t> trigger_day;   // aggregated trigger counts per day, day-sorted
    std::vector<std::int32_t> trigger_count;
    double treat_u = 1.0;                    // single uniform driving the inverse survival draw
};

inline PatientDraft draw_patient(std::int64_t pid, const SynthConfig& c, const std::vector<bool>& is_trigger) {
    PatientDraft d;

    auto rng_e = make_rng(c.seed, static_cast<std::uint64_t>(pid), stream::events);
    const double per_service_rate = c.base_event_rate / static_cast<double>(c.services);
    std::poisson_distribution<std::int32_t> total_events(per_service_rate * c.days);
    std::uniform_int_distribution<std::int32_t> day_of(0, c.days - 1);
    for (std::int32_t svc = 0; svc < c.services; ++svc) {
        const std::int32_t n = total_events(rng_e);
        for (std::int32_t k = 0; k < n; ++k)
            d.events.push_back({pid, svc, day_of(rng_e), 1});
    }
    std::sort(d.events.begin(), d.events.end(), [](const ServiceEvent& a, const ServiceEvent& b) {
        if (a.day != b.day) return a.day < b.day;
        return a.service_id < b.service_id;
    });
    std::vector<ServiceEvent> merged;
    for (const auto& e : d.events) {
        if (!merged.empty() && merged.back().day == e.day && merged.back().service_id == e.service_id)
            merged.back().count += e.count;
        else
            merged.push_back(e);
    }
    d.events = std::move(merged);

    for (const auto& e : d.events) {
        if (!is_trigger[static_cast<std::size_t>(e.service_id)]) continue;
        if (!d.trigger_day.empty() && d.trigger_day.back() == e.day)
            d.trigger_count.back() += e.count;
        else {
            d.trigger_day.push_back(e.day);
            d.trigger_count.push_back(e.count);
        }
    }

    auto rng_d = make_rng(c.seed, static_cast<std::uint64_t>(pid), stream::demographics);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::int32_t continuous = c.demographics - c.dummy_demographics;
    d.demographics.reserve(static_cast<std::size_t>(c.demographics));
    for (std::int32_t j = 0; j < continuous; ++j) d.demographics.push_back(normal(rng_d));
    for (std::int32_t j = 0; j < c.dummy_demographics; ++j)
        d.demographics.push_back(unit(rng_d) < 0.5 ? 1.0 : 0.0);

    auto rng_t = make_rng(c.seed, static_cast<std::uint64_t>(pid), stream::treatment);
    d.treat_u = unit(rng_t);
    return d;
}

// Powers of the boost factor; beyond the table the hazard is clamped
// via std::pow.
struct BoostTable {
    explicit BoostTable(double boost) {
        values.reserve(64);
        double v = 1.0;
        for (int n = 0; n < 64; ++n) {
            values.push_back(v);
            v *= boost;
            if (!std::isfinite(v) || v > 1e18) break;
        }
        base = boost;
    }
    double pow(std::int64_t n) const {
        if (n < static_cast<std::int64_t>(values.size())) return values[static_cast<std::size_t>(n)];
        return std::pow(base, static_cast<double>(n));
    }
    std::vector<double> values;
    double base = 1.0;
};

// Discrete-time survival draw over the per-day hazard sequence, coupled
// through the patient's fixed uniform: treated at the first day t where
// prod_{v<=t}(1 - h_v) drops below u. Returns -1 when never treated.
// Trigger counts use days [t - R, t - 1], never day t itself.
inline std::int32_t treatment_day_for(const PatientDraft& d, const SynthConfig& c, double hazard_base,
                                      const BoostTable& boost) {
    double survival = 1.0;
    std::int64_t recent = 0;
    std::size_t add = 0, drop = 0;
    const std::size_t n_trig = d.trigger_day.size();
    for (std::int32_t t = 0; t < c.days; ++t) {
        while (add < n_trig && d.trigger_day[add] <= t - 1) recent += d.trigger_count[add++];
        while (drop < n_trig && d.trigger_day[drop] < t - c.recency_window) recent -= d.trigger_count[drop++];
        double h = hazard_base * boost.pow(recent);
        if (h > 1.0) h = 1.0;
        survival *= 1.0 - h;
        if (survival < d.treat_u) return t;
    }
    return -1;
}

struct RateOutcome {
    double rate = 0.0;
    std::int64_t cohort = 0;
    std::int64_t window_positives = 0;
    std::int64_t pre_split = 0;
};

inline RateOutcome realized_rate(const std::vector<PatientDraft>& drafts, const SynthConfig& c,
                                 double hazard_base) {
    const BoostTable boost(c.hazard_boost);
    RateOutcome out;
    for (const auto& d : drafts) {
        const std::int32_t t = treatment_day_for(d, c, hazard_base, boost);
        if (t >= 0 && t <= c.split_day) {
            ++out.pre_split;
            continue;
        }
        ++out.cohort;
        if (t >= 0 && t <= c.split_day + c.horizon) ++out.window_positives;
    }
    // an empty cohort means the hazard wiped out every patient before
    // the split; treat as rate 1 so calibration backs off
    out.rate = out.cohort == 0 ? 1.0 : static_cast<double>(out.window_positives) / static_cast<double>(out.cohort);
    return out;
}

}  // namespace detail

// Deterministic for a fixed seed: every patient draws from private
// sub-streams of (seed, patient_id), so results do not depend on
// generation order or worker count. With calibrate set, hazard_base is
// bisected until the realized look-forward rate among patients
// untreated at the split is within 1 percentage point of
// target_event_rate (0.1pp sought); only the treatment draw is re-run
// per iteration.
inline GenerationResult generate(const SynthConfig& cfg) {
    detail::validate_synth_config(cfg);

    std::vector<bool> is_trigger(static_cast<std::size_t>(cfg.services), false);
    for (auto s : cfg.trigger_services) is_trigger[static_cast<std::size_t>(s)] = true;

    std::vector<detail::PatientDraft> drafts;
    drafts.reserve(static_cast<std::size_t>(cfg.patients));
    for (std::int64_t pid = 0; pid < cfg.patients; ++pid)
        drafts.push_back(detail::draw_patient(pid, cfg, is_trigger));

    double hazard_base = cfg.hazard_base;
    if (cfg.calibrate) {
        const double seek_tol = 0.001, accept_tol = 0.01;
        double lo = 0.0;
        double hi = std::max(cfg.hazard_base, 1e-7);
        double best_h = 0.0, best_rate = 0.0;
        double best_err = std::numeric_limits<double>::infinity();
        // candidates with an empty untreated cohort steer the bracket
        // but can never be accepted
        const auto consider = [&](double h, const detail::RateOutcome& out) {
            if (out.cohort == 0) return;
            const double err = std::abs(out.rate - cfg.target_event_rate);
            if (err < best_err) {
                best_err = err;
                best_h = h;
                best_rate = out.rate;
            }
        };
        auto hi_out = detail::realized_rate(drafts, cfg, hi);
        consider(hi, hi_out);
        while (hi_out.rate < cfg.target_event_rate && hi < 1.0) {
            hi = std::min(1.0, hi * 8.0);
            hi_out = detail::realized_rate(drafts, cfg, hi);
            consider(hi, hi_out);
        }
        for (int iter = 0; iter < 60 && best_err > seek_tol; ++iter) {
            const double mid = 0.5 * (lo + hi);
            const auto out = detail::realized_rate(drafts, cfg, mid);
            consider(mid, out);
            if (out.rate < cfg.target_event_rate)
                lo = mid;
            else
                hi = mid;
        }
        if (best_err > accept_tol) {
            char msg[160];
            std::snprintf(msg, sizeof(msg),
                          "calibration infeasible: target look-forward rate %.4f, closest achievable %.4f",
                          cfg.target_event_rate, best_rate);
            throw CalibrationError(msg);
        }
        hazard_base = best_h;
    }

    const detail::BoostTable boost(cfg.hazard_boost);
    std::vector<PatientRecord> patients;
    std::vector<ServiceEvent> events;
    patients.reserve(drafts.size());
    for (std::int64_t pid = 0; pid < cfg.patients; ++pid) {
        auto& d = drafts[static_cast<std::size_t>(pid)];
        PatientRecord p;
        p.patient_id = pid;
        p.demographics = std::move(d.demographics);
        const std::int32_t t = detail::treatment_day_for(d, cfg, hazard_base, boost);
        if (t >= 0) p.treatment_day = t;
        patients.push_back(std::move(p));
        events.insert(events.end(), d.events.begin(), d.events.end());
        d.events.clear();
        d.events.shrink_to_fit();
    }

    GenerationResult result;
    result.dataset = ClaimsDataset::build(cfg.days, cfg.services, cfg.demographics, std::move(patients),
                                          std::move(events));
    result.hazard_base_used = hazard_base;
    result.calibrated = cfg.calibrate;
    for (const auto& p : result.dataset.patients()) {
        if (p.treatment_day && *p.treatment_day <= cfg.split_day) {
            ++result.pre_split_treated;
            continue;
        }
        ++result.cohort_size;
        if (p.treatment_day && *p.treatment_day <= cfg.split_day + cfg.horizon) ++result.future_positive_count;
    }
    result.realized_event_rate = result.cohort_size == 0
                                     ? 0.0
                                     : static_cast<double>(result.future_positive_count) /
                                           static_cast<double>(result.cohort_size);
    if (cfg.calibrate && std::abs(result.realized_event_rate - cfg.target_event_rate) > 0.01)
        throw CalibrationError("calibration drifted outside tolerance after final draw");
    return result;
}

}  // namespace claimcast
