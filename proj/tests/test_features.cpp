#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <random>

#include "claimcast/features.hpp"
#include "test_support.hpp"

using namespace claimcast;
using namespace testsupport;

namespace {

// Diagram fixture: T=8 days, I=3 services, one patient with a dense w
// grid written 1-indexed by day, index date on (1-indexed) day 5.
struct DiagramFixture {
    static constexpr std::int32_t T = 8, I = 3;
    std::array<std::array<std::int32_t, 8>, 3> w_grid = {{
        {{1, 0, 2, 1, 0, 0, 3, 0}},
        {{0, 1, 0, 3, 2, 0, 0, 1}},
        {{2, 2, 0, 1, 0, 1, 0, 0}},
    }};

    std::int32_t w(std::int32_t service_1based, std::int32_t day_1based) const {
        return w_grid[service_1based - 1][day_1based - 1];
    }

    ClaimsDataset dataset() const {
        std::vector<ServiceEvent> events;
        for (std::int32_t i = 0; i < I; ++i)
            for (std::int32_t d = 0; d < T; ++d)
                if (w_grid[i][d] > 0) events.push_back({0, i, d, w_grid[i][d]});
        return ClaimsDataset::build(T, I, 0, {{0, {}, {}}}, events);
    }
};

FeatureConfig basic_config(FeatureMode mode, std::int32_t split_day, std::int32_t horizon = 1) {
    FeatureConfig cfg;
    cfg.delta = 2;
    cfg.num_intervals = 2;
    cfg.neg_inclusion_prob = 1.0;
    cfg.split_day = split_day;
    cfg.horizon = horizon;
    cfg.mode = mode;
    cfg.normalize = false;
    return cfg;
}

}  // namespace

TEST_CASE("diagram bucket values: 4 days before t aggregate into 2 buckets") {
    DiagramFixture fx;
    const auto ds = fx.dataset();
    // the diagram is 1-indexed by day, so day 5 is index 4 here
    const auto buckets = bucket_features(ds, 0, 4, 2, 2);
    REQUIRE(buckets.size() == 6);
    for (std::int32_t i = 1; i <= 3; ++i) {
        CHECK(buckets[(i - 1) * 2 + 0] == fx.w(i, 3) + fx.w(i, 4));
        CHECK(buckets[(i - 1) * 2 + 1] == fx.w(i, 1) + fx.w(i, 2));
    }
}

TEST_CASE("bucket features edge cases") {
    DiagramFixture fx;
    const auto ds = fx.dataset();
    SECTION("empty history gives zeros") {
        const auto empty = ClaimsDataset::build(8, 3, 0, {{5, {}, {}}}, {});
        CHECK(bucket_features(empty, 5, 6, 2, 2) == std::vector<std::int64_t>(6, 0));
    }
    SECTION("index day zero gives zeros") {
        CHECK(bucket_features(ds, 0, 0, 2, 2) == std::vector<std::int64_t>(6, 0));
    }
    SECTION("index day T is allowed") {
        const auto b = bucket_features(ds, 0, 8, 2, 2);
        CHECK(b[0] == fx.w(1, 7) + fx.w(1, 8));
    }
    SECTION("days before the panel start contribute zero") {
        const auto b = bucket_features(ds, 0, 1, 3, 4);  // look-back reaches day -11
        CHECK(b[0] == fx.w(1, 1));
        CHECK(b[1] == 0);
    }
    SECTION("unknown patient throws") { CHECK_THROWS_AS(bucket_features(ds, 9, 4, 2, 2), DataError); }
    SECTION("index day out of range throws") { CHECK_THROWS_AS(bucket_features(ds, 0, 9, 2, 2), DataError); }
    SECTION("bad delta throws") { CHECK_THROWS_AS(bucket_features(ds, 0, 4, 0, 2), ConfigError); }
}

TEST_CASE("bucket features match the per-day oracle on random panels") {
    std::mt19937_64 rng(123);
    for (int rep = 0; rep < 6; ++rep) {
        const auto panel = random_panel(rng, 50, 200, 5, 0);
        const auto ds = panel.build();
        std::uniform_int_distribution<std::int32_t> idx_of(0, 200);
        std::uniform_int_distribution<std::int32_t> delta_of(1, 9);
        std::uniform_int_distribution<std::int32_t> tau_of(1, 4);
        for (const auto& p : panel.patients) {
            const auto index_day = idx_of(rng);
            const auto delta = delta_of(rng), intervals = tau_of(rng);
            CHECK(bucket_features(ds, p.patient_id, index_day, delta, intervals) ==
                  oracle_bucket_features(panel.events, p.patient_id, 5, index_day, delta, intervals));
        }
    }
}

TEST_CASE("bucket partition property over the full look-back window") {
    std::mt19937_64 rng(321);
    const auto panel = random_panel(rng, 40, 120, 4, 0);
    const auto ds = panel.build();
    std::uniform_int_distribution<std::int32_t> idx_of(0, 120);
    for (const auto& p : panel.patients) {
        const std::int32_t index_day = idx_of(rng), delta = 7, intervals = 4;
        const auto buckets = bucket_features(ds, p.patient_id, index_day, delta, intervals);
        const auto upto = oracle_service_counts(panel.events, p.patient_id, 4, index_day);
        const auto before =
            oracle_service_counts(panel.events, p.patient_id, 4, std::max(0, index_day - delta * intervals));
        for (std::int32_t i = 0; i < 4; ++i) {
            std::int64_t sum = 0;
            for (std::int32_t tau = 0; tau < intervals; ++tau) sum += buckets[i * intervals + tau];
            CHECK(sum == upto[i] - before[i]);
        }
    }
}

TEST_CASE("time-difference features") {
    SECTION("difference between first occurrences") {
        const auto ds = ClaimsDataset::build(20, 3, 0, {{1, {}, {}}},
                                             {{1, 0, 3, 1}, {1, 0, 7, 1}, {1, 2, 10, 1}, {1, 2, 12, 1}});
        const auto td = time_difference_features(ds, 1, 15, 0);
        CHECK(td == std::vector<std::int64_t>{0, -1, 7});
    }
    SECTION("events on or after the index day are invisible") {
        const auto ds = ClaimsDataset::build(20, 2, 0, {{1, {}, {}}}, {{1, 0, 3, 1}, {1, 1, 10, 1}});
        CHECK(time_difference_features(ds, 1, 10, 0) == std::vector<std::int64_t>{0, -1});
        CHECK(time_difference_features(ds, 1, 11, 0) == std::vector<std::int64_t>{0, 7});
    }
    SECTION("patient with no events is all sentinel") {
        const auto ds = ClaimsDataset::build(20, 3, 0, {{1, {}, {}}}, {});
        CHECK(time_difference_features(ds, 1, 10, 0) == std::vector<std::int64_t>{-1, -1, -1});
    }
    SECTION("missing diagnosis service makes the vector all sentinel") {
        const auto ds = ClaimsDataset::build(20, 2, 0, {{1, {}, {}}}, {{1, 1, 4, 1}});
        CHECK(time_difference_features(ds, 1, 10, 0) == std::vector<std::int64_t>{-1, -1});
    }
    SECTION("matches the first-occurrence oracle on random panels") {
        std::mt19937_64 rng(555);
        const auto panel = random_panel(rng, 30, 60, 4, 0);
        const auto ds = panel.build();
        std::uniform_int_distribution<std::int32_t> idx_of(0, 60);
        for (const auto& p : panel.patients) {
            const auto index_day = idx_of(rng);
            CHECK(time_difference_features(ds, p.patient_id, index_day, 1) ==
                  oracle_time_differences(panel.events, p.patient_id, 4, index_day, 1));
        }
    }
}

namespace {

ClaimsDataset labeled_panel() {
    // 6 patients around split day 10: 2 treated before, 1 at split,
    // 1 after split, 2 never
    std::vector<PatientRecord> patients = {
        {1, {1.0, 0.0}, 4},  {2, {2.0, 1.0}, 9},  {3, {3.0, 0.0}, 10},
        {4, {4.0, 1.0}, 15}, {5, {5.0, 0.0}, {}}, {6, {6.0, 1.0}, {}},
    };
    std::vector<ServiceEvent> events = {{1, 0, 2, 1}, {2, 1, 8, 2}, {4, 0, 3, 1}, {5, 1, 1, 1}, {6, 0, 12, 4}};
    return ClaimsDataset::build(20, 2, 2, patients, events);
}

}  // namespace

TEST_CASE("training matrix labeling and sampling") {
    const auto ds = labeled_panel();
    auto cfg = basic_config(FeatureMode::count, 10, 5);

    SECTION("q = 1 keeps every eligible negative exactly once") {
        const auto m = build_training_matrix(ds, cfg);
        REQUIRE(m.rows.size() == 6);
        std::int64_t positives = 0;
        for (const auto& r : m.rows) {
            if (r.label == 1) {
                ++positives;
                CHECK(r.index_day == *ds.patient(r.patient_id).treatment_day);
            } else {
                CHECK(r.index_day == 10);
            }
        }
        CHECK(positives == 3);  // treated on the split day still counts as prior
        // patient 4 is treated after the split: negative, not positive
        const auto& p4 = *std::find_if(m.rows.begin(), m.rows.end(),
                                       [](const LabeledRow& r) { return r.patient_id == 4; });
        CHECK(p4.label == 0);
    }
    SECTION("q = 0 fails with zero negatives") {
        cfg.neg_inclusion_prob = 0.0;
        CHECK_THROWS_MATCHES(build_training_matrix(ds, cfg), DataError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("negative")));
    }
    SECTION("no positives fails") {
        cfg.split_day = 3;
        cfg.neg_inclusion_prob = 1.0;
        CHECK_THROWS_MATCHES(build_training_matrix(ds, cfg), DataError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("positive")));
    }
    SECTION("sampling is deterministic per seed") {
        cfg.neg_inclusion_prob = 0.5;
        cfg.sampling_seed = 42;
        const auto a = build_training_matrix(ds, cfg);
        const auto b = build_training_matrix(ds, cfg);
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].patient_id == b.rows[i].patient_id);
            CHECK(a.rows[i].features == b.rows[i].features);
            CHECK(a.rows[i].label == b.rows[i].label);
        }
    }
    SECTION("rows are ordered by ascending patient id") {
        const auto m = build_training_matrix(ds, cfg);
        for (std::size_t i = 1; i < m.rows.size(); ++i) CHECK(m.rows[i - 1].patient_id < m.rows[i].patient_id);
    }
}

TEST_CASE("feature vector length follows the mode formula") {
    const auto ds = labeled_panel();  // I=2, D=2
    auto cfg = basic_config(FeatureMode::bucketed, 10);
    CHECK(build_training_matrix(ds, cfg).feature_count() == 2 * 2 + 2);
    cfg.mode = FeatureMode::count;
    CHECK(build_training_matrix(ds, cfg).feature_count() == 2 + 2);
    cfg.mode = FeatureMode::count_td;
    const auto m = build_training_matrix(ds, cfg);
    CHECK(m.feature_count() == 2 + 2 + 2);
    // layout: counts, demographics, time differences
    CHECK(m.feature_names.front() == "svc0_count");
    CHECK(m.feature_names[2] == "demo0");
    CHECK(m.feature_names.back() == "svc1_td");
}

TEST_CASE("paper-scale arithmetic: 26 services, 2 intervals, 28 demographics give 80 features") {
    std::vector<PatientRecord> patients;
    for (int i = 0; i < 8; ++i) {
        PatientRecord p;
        p.patient_id = i;
        p.demographics.assign(28, 0.5);
        if (i < 4) p.treatment_day = 50 + i;
        patients.push_back(p);
    }
    const auto ds = ClaimsDataset::build(1411, 26, 28, patients, {{0, 25, 10, 1}});
    FeatureConfig cfg;
    cfg.delta = 91;
    cfg.num_intervals = 2;
    cfg.neg_inclusion_prob = 1.0;
    cfg.split_day = 1045;
    cfg.mode = FeatureMode::bucketed;
    cfg.normalize = false;
    const auto m = build_training_matrix(ds, cfg);
    CHECK(m.feature_count() == 80);
    for (const auto& r : m.rows) CHECK(r.features.size() == 80);
}

TEST_CASE("normalization standardizes training columns and is reused for scoring") {
    const auto ds = labeled_panel();
    auto cfg = basic_config(FeatureMode::count, 10, 5);
    cfg.normalize = true;
    const auto m = build_training_matrix(ds, cfg);
    REQUIRE(m.norm.has_value());
    const std::size_t width = m.feature_count();
    for (std::size_t j = 0; j < width; ++j) {
        double mean = 0.0, var = 0.0;
        for (const auto& r : m.rows) mean += r.features[j];
        mean /= static_cast<double>(m.rows.size());
        for (const auto& r : m.rows) var += (r.features[j] - mean) * (r.features[j] - mean);
        var /= static_cast<double>(m.rows.size());
        if (m.norm->stdev[j] != 1.0 || m.norm->mean[j] != 0.0) {
            CHECK(std::abs(mean) < 1e-12);
            CHECK(std::abs(var - 1.0) < 1e-9);
        }
    }

    const auto scoring = build_scoring_matrix(ds, cfg, &*m.norm);
    auto raw_cfg = cfg;
    raw_cfg.normalize = false;
    const auto raw = build_scoring_matrix(ds, raw_cfg);
    REQUIRE(scoring.rows.size() == raw.rows.size());
    for (std::size_t i = 0; i < raw.rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j)
            CHECK(scoring.rows[i].features[j] ==
                  (raw.rows[i].features[j] - m.norm->mean[j]) / m.norm->stdev[j]);

    SECTION("missing stats is an error") {
        CHECK_THROWS_AS(build_scoring_matrix(ds, cfg, nullptr), DataError);
    }
}

TEST_CASE("scoring matrix cohort and labels") {
    const auto ds = labeled_panel();
    auto cfg = basic_config(FeatureMode::count, 10, 5);

    const auto m = build_scoring_matrix(ds, cfg);
    // patients 4 (treated day 15), 5 and 6 (never) are untreated at split
    REQUIRE(m.rows.size() == 3);
    CHECK(static_cast<std::int64_t>(m.rows.size()) ==
          static_cast<std::int64_t>(ds.patient_count()) - 3);
    for (const auto& r : m.rows) CHECK(r.index_day == 10);
    CHECK(m.rows[0].patient_id == 4);
    CHECK(m.rows[0].label == 1);  // day 15 lies in (10, 15]
    CHECK(m.rows[1].label == 0);
    CHECK(m.rows[2].label == 0);

    SECTION("window boundary is inclusive on the right only") {
        cfg.horizon = 4;
        const auto tight = build_scoring_matrix(ds, cfg);
        CHECK(tight.rows[0].label == 0);  // day 15 outside (10, 14]
    }
    SECTION("all patients treated before split yields an empty matrix") {
        std::vector<PatientRecord> patients = {{1, {}, 2}, {2, {}, 3}};
        const auto tiny = ClaimsDataset::build(20, 1, 0, patients, {});
        auto c = basic_config(FeatureMode::count, 10, 5);
        const auto empty = build_scoring_matrix(tiny, c);
        CHECK(empty.rows.empty());
        CHECK(empty.feature_names.size() == 1);
    }
    SECTION("horizon past the panel end is an error") {
        cfg.horizon = 11;
        CHECK_THROWS_MATCHES(build_scoring_matrix(ds, cfg), DataError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("horizon")));
    }
}

TEST_CASE("post-index events never reach features; labels never reach scores") {
    std::mt19937_64 rng(777);
    const auto panel = random_panel(rng, 40, 100, 4, 0.5);
    const auto ds = panel.build();
    auto cfg = basic_config(FeatureMode::bucketed, 60, 20);
    cfg.delta = 10;
    cfg.num_intervals = 3;
    cfg.normalize = true;

    const auto index_day_of = [&](const PatientRecord& p) {
        return (p.treatment_day && *p.treatment_day <= cfg.split_day) ? *p.treatment_day : cfg.split_day;
    };

    // mutate only at-or-after-index days: triple existing counts and
    // inject a fresh event at the index day itself
    auto mutated = panel;
    for (auto& e : mutated.events) {
        const auto& p = *std::find_if(panel.patients.begin(), panel.patients.end(),
                                      [&](const PatientRecord& q) { return q.patient_id == e.patient_id; });
        if (e.day >= index_day_of(p)) e.count *= 3;
    }
    for (const auto& p : panel.patients)
        if (index_day_of(p) < panel.days) mutated.events.push_back({p.patient_id, 0, index_day_of(p), 7});
    const auto ds_mut = mutated.build();

    const auto a = build_training_matrix(ds, cfg);
    const auto b = build_training_matrix(ds_mut, cfg);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].patient_id == b.rows[i].patient_id);
        CHECK(a.rows[i].label == b.rows[i].label);
        CHECK(a.rows[i].features == b.rows[i].features);  // bit-identical
    }
    CHECK(a.norm->mean == b.norm->mean);
    CHECK(a.norm->stdev == b.norm->stdev);

    const auto sa = build_scoring_matrix(ds, cfg, &*a.norm);
    const auto sb = build_scoring_matrix(ds_mut, cfg, &*b.norm);
    REQUIRE(sa.rows.size() == sb.rows.size());
    for (std::size_t i = 0; i < sa.rows.size(); ++i) CHECK(sa.rows[i].features == sb.rows[i].features);
}

TEST_CASE("look-back longer than the split day warns") {
    const auto ds = labeled_panel();
    auto cfg = basic_config(FeatureMode::bucketed, 10, 5);
    cfg.delta = 8;
    cfg.num_intervals = 2;
    std::vector<std::string> warnings;
    build_training_matrix(ds, cfg, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("truncated") != std::string::npos);
}

TEST_CASE("matrix CSV format") {
    const auto ds = labeled_panel();
    auto cfg = basic_config(FeatureMode::count, 10, 5);
    cfg.normalize = true;
    const auto m = build_training_matrix(ds, cfg);
    TempDir dir("matrix_csv");
    write_matrix_csv(m, dir.file("m.csv"));
    const auto text = read_file(dir.file("m.csv"));

    std::string header = text.substr(0, text.find('\n'));
    std::string expect;
    for (const auto& n : m.feature_names) expect += n + ",";
    expect += "label,patient_id,index_day";
    CHECK(header == expect);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(m.rows.size() + 1));

    write_matrix_csv(m, dir.file("m2.csv"));
    CHECK(read_file(dir.file("m2.csv")) == text);
}
