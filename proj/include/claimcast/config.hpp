#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "claimcast/errors.hpp"
#include "claimcast/features.hpp"
#include "claimcast/model.hpp"
#include "claimcast/rng.hpp"
#include "claimcast/synth.hpp"

namespace claimcast {

struct EvalSettings {
    std::vector<std::int64_t> k_values = {100, 250, 500, 1000, 2000};
    std::vector<double> k_percents;  // extra Ks as a percentage of the cohort, resolved at eval time
};

// One flat key-value file drives the whole pipeline; see
// configs/default.cfg for the documented schema. All randomness flows
// from three seeds: synth.seed (generation), features.sampling_seed
// (negative subsampling) and model.seed (training). The latter two
// default to values derived from synth.seed.
struct RunConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "out";
    SynthConfig synth;
    FeatureConfig features;
    ModelConfig model;
    EvalSettings eval;
    bool sampling_seed_explicit = false;
    bool model_seed_explicit = false;

    // Re-derives the dependent seeds from a new master seed; seeds
    // pinned explicitly in the config file stay put.
    void apply_master_seed(std::uint64_t seed) {
        synth.seed = seed;
        if (!sampling_seed_explicit) features.sampling_seed = derive_seed(seed, 0, stream::sampling);
        if (!model_seed_explicit) model.seed = derive_seed(seed, 0, stream::training);
    }
};

namespace detail {

class KeyValueFile {
public:
    KeyValueFile(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file " + path_);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path_ + ":" + std::to_string(line_no) + ": expected key = value");
            auto key = trim(line.substr(0, eq));
            auto value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(path_ + ":" + std::to_string(line_no) + ": empty key");
            if (!entries_.emplace(key, value).second)
                throw ConfigError(path_ + ":" + std::to_string(line_no) + ": duplicate key \"" + key + "\"");
        }
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::optional<std::string> raw(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        used_.insert(key);
        return it->second;
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        return parse_as<T>(*v, key);
    }

    std::optional<std::int64_t> get_int(const std::string& key) {
        auto v = raw(key);
        if (!v) return std::nullopt;
        return parse_as<std::int64_t>(*v, key);
    }

    template <typename T>
    std::vector<T> get_list(const std::string& key, std::vector<T> fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        std::vector<T> out;
        std::stringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_as<T>(trim(item), key));
        if (out.empty()) throw ConfigError(path_ + ": key \"" + key + "\": empty list");
        return out;
    }

    void reject_unknown_keys() const {
        for (const auto& [key, value] : entries_) {
            (void)value;
            if (!used_.count(key))
                throw ConfigError(path_ + ": unknown key \"" + key + "\"");
        }
    }

    const std::string& path() const { return path_; }

private:
    static std::string trim(std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return {};
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    template <typename T>
    T parse_as(const std::string& s, const std::string& key) {
        std::stringstream ss(s);
        if constexpr (std::is_same_v<T, bool>) {
            if (s == "true") return true;
            if (s == "false") return false;
            throw ConfigError(path_ + ": key \"" + key + "\": expected true or false, got \"" + s + "\"");
        } else if constexpr (std::is_same_v<T, std::string>) {
            return s;
        } else {
            T value{};
            ss >> value;
            if (ss.fail() || !ss.eof())
                throw ConfigError(path_ + ": key \"" + key + "\": cannot parse \"" + s + "\"");
            return value;
        }
    }

    std::string path_;
    std::map<std::string, std::string> entries_;
    std::set<std::string> used_;
};

}  // namespace detail

// Strict loader: unknown keys, bad values and an unsupported
// config_version are errors. Relative data/out dirs resolve against the
// config file's directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    detail::KeyValueFile kv(path);
    RunConfig cfg;

    const auto version = kv.get_int("config_version");
    if (!version) throw ConfigError(kv.path() + ": missing config_version (expected 1)");
    if (*version != 1) throw ConfigError(kv.path() + ": unsupported config_version " + std::to_string(*version));

    const auto base = std::filesystem::absolute(path).parent_path();
    const auto resolve = [&](std::string p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    cfg.data_dir = resolve(kv.get<std::string>("data_dir", "data"));
    cfg.out_dir = resolve(kv.get<std::string>("out_dir", "out"));

    auto& s = cfg.synth;
    s.patients = kv.get<std::int64_t>("synth.patients", s.patients);
    s.days = kv.get<std::int32_t>("synth.days", s.days);
    s.services = kv.get<std::int32_t>("synth.services", s.services);
    s.demographics = kv.get<std::int32_t>("synth.demographics", s.demographics);
    s.dummy_demographics = kv.get<std::int32_t>("synth.dummy_demographics", s.dummy_demographics);
    s.base_event_rate = kv.get<double>("synth.base_event_rate", s.base_event_rate);
    s.trigger_services = kv.get_list<std::int32_t>("synth.trigger_services", s.trigger_services);
    s.recency_window = kv.get<std::int32_t>("synth.recency_window", s.recency_window);
    s.hazard_base = kv.get<double>("synth.hazard_base", s.hazard_base);
    s.hazard_boost = kv.get<double>("synth.hazard_boost", s.hazard_boost);
    s.target_event_rate = kv.get<double>("synth.target_event_rate", s.target_event_rate);
    s.calibrate = kv.get<bool>("synth.calibrate", s.calibrate);
    s.seed = kv.get<std::uint64_t>("synth.seed", s.seed);

    auto& f = cfg.features;
    f.delta = kv.get<std::int32_t>("features.delta", f.delta);
    f.num_intervals = kv.get<std::int32_t>("features.num_intervals", f.num_intervals);
    f.neg_inclusion_prob = kv.get<double>("features.neg_inclusion_prob", f.neg_inclusion_prob);
    f.horizon = kv.get<std::int32_t>("features.horizon", f.horizon);
    f.split_day = kv.get<std::int32_t>("features.split_day", s.days - f.horizon - 1);
    f.mode = feature_mode_from_string(kv.get<std::string>("features.mode", to_string(f.mode)));
    f.diagnosis_service = kv.get<std::int32_t>("features.diagnosis_service", f.diagnosis_service);
    f.normalize = kv.get<bool>("features.normalize", f.normalize);
    cfg.sampling_seed_explicit = kv.has("features.sampling_seed");
    f.sampling_seed = kv.get<std::uint64_t>("features.sampling_seed", derive_seed(s.seed, 0, stream::sampling));

    // generation calibrates against the same timeline the featurizer uses
    s.split_day = f.split_day;
    s.horizon = f.horizon;

    auto& m = cfg.model;
    m.architecture = architecture_from_string(kv.get<std::string>("model.architecture", to_string(m.architecture)));
    m.hidden_layers = kv.get_list<std::int32_t>("model.hidden_layers", m.hidden_layers);
    m.dropout = kv.get<double>("model.dropout", m.dropout);
    m.learning_rate = kv.get<double>("model.learning_rate", m.learning_rate);
    m.epochs = kv.get<std::int32_t>("model.epochs", m.epochs);
    m.batch_size = kv.get<std::int32_t>("model.batch_size", m.batch_size);
    m.l2 = kv.get<double>("model.l2", m.l2);
    m.momentum = kv.get<double>("model.momentum", m.momentum);
    cfg.model_seed_explicit = kv.has("model.seed");
    m.seed = kv.get<std::uint64_t>("model.seed", derive_seed(s.seed, 0, stream::training));

    cfg.eval.k_values = kv.get_list<std::int64_t>("eval.k_values", cfg.eval.k_values);
    cfg.eval.k_percents = kv.get_list<double>("eval.k_percents", cfg.eval.k_percents);

    kv.reject_unknown_keys();

    if (!std::is_sorted(cfg.eval.k_values.begin(), cfg.eval.k_values.end()))
        throw ConfigError(kv.path() + ": eval.k_values must be sorted ascending");
    for (auto k : cfg.eval.k_values)
        if (k < 1) throw ConfigError(kv.path() + ": eval.k_values entries must be >= 1");
    for (auto p : cfg.eval.k_percents)
        if (p <= 0.0 || p > 100.0) throw ConfigError(kv.path() + ": eval.k_percents entries must lie in (0, 100]");

    return cfg;
}

// Paper-scale defaults without touching the filesystem.
inline RunConfig default_run_config() {
    RunConfig cfg;
    cfg.features.split_day = cfg.synth.days - cfg.features.horizon - 1;
    cfg.synth.split_day = cfg.features.split_day;
    cfg.synth.horizon = cfg.features.horizon;
    cfg.apply_master_seed(cfg.synth.seed);
    return cfg;
}

// Resolved K ladder for a concrete cohort: configured absolute values
// plus any percentage-based ones, deduplicated and sorted.
inline std::vector<std::int64_t> resolve_k_values(const EvalSettings& eval, std::int64_t cohort_size) {
    std::vector<std::int64_t> ks = eval.k_values;
    for (double pct : eval.k_percents)
        ks.push_back(std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(
                                                   static_cast<double>(cohort_size) * pct / 100.0))));
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    for (auto k : ks)
        if (k > cohort_size)
            throw EvalError("K = " + std::to_string(k) + " exceeds the scoring cohort (" +
                            std::to_string(cohort_size) + " patients)");
    return ks;
}

}  // namespace claimcast
