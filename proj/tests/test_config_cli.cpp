#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "claimcast/config.hpp"
#include "claimcast/pipeline.hpp"
#include "test_support.hpp"

using namespace claimcast;
using namespace testsupport;

namespace {

const std::string small_config_text =
    "config_version = 1\n"
    "data_dir = data\n"
    "out_dir = out\n"
    "synth.patients = 400\n"
    "synth.days = 250\n"
    "synth.services = 6\n"
    "synth.demographics = 5\n"
    "synth.dummy_demographics = 2\n"
    "synth.base_event_rate = 0.12\n"
    "synth.trigger_services = 0,1\n"
    "synth.recency_window = 20\n"
    "synth.hazard_boost = 1.6\n"
    "synth.target_event_rate = 0.08\n"
    "synth.seed = 5\n"
    "features.delta = 20\n"
    "features.num_intervals = 2\n"
    "features.neg_inclusion_prob = 0.5\n"
    "features.split_day = 180\n"
    "features.horizon = 60\n"
    "features.mode = bucketed\n"
    "model.architecture = mlp\n"
    "model.hidden_layers = 8,4\n"
    "model.dropout = 0.2\n"
    "model.learning_rate = 0.05\n"
    "model.epochs = 8\n"
    "model.batch_size = 32\n"
    "model.momentum = 0.9\n"
    "eval.k_values = 10,25,50\n";

int run_cli(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(CLAIMCAST_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

}  // namespace

TEST_CASE("run config parsing") {
    TempDir dir("cfg");
    SECTION("fully specified file round-trips into the structs") {
        write_file(dir.file("run.cfg"), small_config_text);
        const auto cfg = load_run_config(dir.file("run.cfg"));
        CHECK(cfg.synth.patients == 400);
        CHECK(cfg.synth.trigger_services == std::vector<std::int32_t>{0, 1});
        CHECK(cfg.features.split_day == 180);
        CHECK(cfg.features.mode == FeatureMode::bucketed);
        CHECK(cfg.model.hidden_layers == std::vector<std::int32_t>{8, 4});
        CHECK(cfg.eval.k_values == std::vector<std::int64_t>{10, 25, 50});
        CHECK(cfg.data_dir == dir.path() / "data");   // resolved against the config location
        CHECK(cfg.synth.split_day == 180);            // generation shares the featurizer timeline
        CHECK(cfg.synth.horizon == 60);
    }
    SECTION("defaults fill every omitted key") {
        write_file(dir.file("min.cfg"), "config_version = 1\n");
        const auto cfg = load_run_config(dir.file("min.cfg"));
        CHECK(cfg.synth.patients == 20000);
        CHECK(cfg.features.delta == 91);
        CHECK(cfg.features.split_day == 1411 - 365 - 1);
        CHECK(cfg.model.dropout == 0.2);
    }
    SECTION("missing version is rejected") {
        write_file(dir.file("nover.cfg"), "data_dir = x\n");
        CHECK_THROWS_AS(load_run_config(dir.file("nover.cfg")), ConfigError);
    }
    SECTION("unknown keys are rejected") {
        write_file(dir.file("typo.cfg"), "config_version = 1\nsynth.patient = 5\n");
        CHECK_THROWS_MATCHES(load_run_config(dir.file("typo.cfg")), ConfigError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("synth.patient")));
    }
    SECTION("bad values are rejected with the key name") {
        write_file(dir.file("bad.cfg"), "config_version = 1\nsynth.patients = lots\n");
        CHECK_THROWS_MATCHES(load_run_config(dir.file("bad.cfg")), ConfigError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("synth.patients")));
    }
    SECTION("duplicate keys are rejected") {
        write_file(dir.file("dup.cfg"), "config_version = 1\nsynth.seed = 1\nsynth.seed = 2\n");
        CHECK_THROWS_AS(load_run_config(dir.file("dup.cfg")), ConfigError);
    }
    SECTION("unsorted k values are rejected") {
        write_file(dir.file("ks.cfg"), "config_version = 1\neval.k_values = 50,10\n");
        CHECK_THROWS_AS(load_run_config(dir.file("ks.cfg")), ConfigError);
    }
}

TEST_CASE("seed derivation") {
    TempDir dir("seeds");
    SECTION("dependent seeds derive from the generation seed") {
        write_file(dir.file("a.cfg"), "config_version = 1\nsynth.seed = 10\n");
        write_file(dir.file("b.cfg"), "config_version = 1\nsynth.seed = 11\n");
        const auto a = load_run_config(dir.file("a.cfg"));
        const auto b = load_run_config(dir.file("b.cfg"));
        CHECK(a.features.sampling_seed != b.features.sampling_seed);
        CHECK(a.model.seed != b.model.seed);
        CHECK(a.features.sampling_seed != a.model.seed);
    }
    SECTION("explicit seeds survive a master override") {
        write_file(dir.file("c.cfg"), "config_version = 1\nfeatures.sampling_seed = 123\n");
        auto cfg = load_run_config(dir.file("c.cfg"));
        const auto derived_model_seed = cfg.model.seed;
        cfg.apply_master_seed(99);
        CHECK(cfg.synth.seed == 99);
        CHECK(cfg.features.sampling_seed == 123);
        CHECK(cfg.model.seed != derived_model_seed);
    }
}

TEST_CASE("resolve_k_values merges absolute and percentage ladders") {
    EvalSettings eval;
    eval.k_values = {10, 50};
    eval.k_percents = {5.0};
    CHECK(resolve_k_values(eval, 1000) == std::vector<std::int64_t>{10, 50});
    CHECK(resolve_k_values(eval, 2000) == std::vector<std::int64_t>{10, 50, 100});
    eval.k_values = {10, 5000};
    CHECK_THROWS_AS(resolve_k_values(eval, 1000), EvalError);
}

TEST_CASE("shipped configs parse") {
    for (const char* name : {"default.cfg", "null_control.cfg", "small.cfg"}) {
        const auto path = std::filesystem::path(CLAIMCAST_CONFIG_DIR) / name;
        CHECK_NOTHROW(load_run_config(path));
    }
}

TEST_CASE("cli end to end on a small panel") {
    TempDir dir("cli");
    write_file(dir.file("run.cfg"), small_config_text);
    const std::string cfg_arg = "--config " + dir.file("run.cfg").string();

    SECTION("generate writes data files and an accurate manifest, deterministically") {
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "data/events.jsonl"));
        CHECK(std::filesystem::exists(dir.path() / "data/patients.jsonl"));
        const auto manifest = nlohmann::json::parse(read_file(dir.path() / "data/manifest.json"));
        CHECK(std::abs(manifest["realized_event_rate"].get<double>() - 0.08) <= 0.01);
        CHECK(manifest["patients"] == 400);
        CHECK(manifest["seeds"]["generation"] == 5);

        const auto events_once = read_file(dir.path() / "data/events.jsonl");
        const auto patients_once = read_file(dir.path() / "data/patients.jsonl");
        const auto manifest_once = read_file(dir.path() / "data/manifest.json");
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(read_file(dir.path() / "data/events.jsonl") == events_once);
        CHECK(read_file(dir.path() / "data/patients.jsonl") == patients_once);
        CHECK(read_file(dir.path() / "data/manifest.json") == manifest_once);
    }

    SECTION("featurize, train, score, evaluate chain into each other") {
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        REQUIRE(run_cli("featurize " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "out/train_matrix_bucketed.csv"));
        CHECK(std::filesystem::exists(dir.path() / "out/score_matrix_bucketed.csv"));
        REQUIRE(run_cli("train " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "out/model_bucketed.json"));
        REQUIRE(run_cli("score " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "out/scores_bucketed.csv"));
        REQUIRE(run_cli("evaluate " + cfg_arg, dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "out/report_bucketed.csv"));
        CHECK(std::filesystem::exists(dir.path() / "out/curve_bucketed.csv"));
        CHECK(std::filesystem::exists(dir.path() / "out/curve_bucketed.svg"));
        const auto log_text = read_file(dir.file("log"));
        CHECK(log_text.find("K=10") != std::string::npos);
    }

    SECTION("benchmark produces the full bundle and reruns byte-identically") {
        REQUIRE(run_cli("benchmark " + cfg_arg + " --quiet", dir.file("log")) == 0);
        for (const char* f : {"reports.csv", "improvements.csv", "curve.csv", "curve.svg", "summary.txt"})
            CHECK(std::filesystem::exists(dir.path() / "out" / f));
        const auto reports_once = read_file(dir.path() / "out/reports.csv");
        const auto summary_once = read_file(dir.path() / "out/summary.txt");
        CHECK(reports_once.find("bucketed") != std::string::npos);
        CHECK(reports_once.find("count_td") != std::string::npos);
        REQUIRE(run_cli("benchmark " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(read_file(dir.path() / "out/reports.csv") == reports_once);
        CHECK(read_file(dir.path() / "out/summary.txt") == summary_once);
    }

    SECTION("the seed flag changes generated data") {
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        const auto baseline = read_file(dir.path() / "data/events.jsonl");
        REQUIRE(run_cli("generate " + cfg_arg + " --seed 77 --quiet", dir.file("log")) == 0);
        CHECK(read_file(dir.path() / "data/events.jsonl") != baseline);
    }

    SECTION("the out flag redirects artifacts") {
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        REQUIRE(run_cli("benchmark " + cfg_arg + " --quiet --out " + dir.file("elsewhere").string(),
                        dir.file("log")) == 0);
        CHECK(std::filesystem::exists(dir.path() / "elsewhere/reports.csv"));
        CHECK_FALSE(std::filesystem::exists(dir.path() / "out/reports.csv"));
    }

    SECTION("quiet silences progress output") {
        REQUIRE(run_cli("generate " + cfg_arg + " --quiet", dir.file("log")) == 0);
        CHECK(read_file(dir.file("log")).empty());
    }
}

TEST_CASE("cli exit codes follow the documented classes") {
    TempDir dir("cli_err");
    SECTION("config errors exit 1") {
        write_file(dir.file("bad.cfg"), "config_version = 1\nnope = 1\n");
        CHECK(run_cli("generate --config " + dir.file("bad.cfg").string(), dir.file("log")) == 1);
    }
    SECTION("calibration failures exit 2") {
        write_file(dir.file("cal.cfg"),
                   "config_version = 1\n"
                   "synth.patients = 20\nsynth.days = 120\nsynth.services = 4\n"
                   "synth.demographics = 2\nsynth.dummy_demographics = 0\n"
                   "synth.trigger_services = 0\nsynth.recency_window = 10\n"
                   "synth.hazard_boost = 1.0\nsynth.target_event_rate = 0.035\n"
                   "features.split_day = 80\nfeatures.horizon = 40\n");
        CHECK(run_cli("generate --config " + dir.file("cal.cfg").string() + " --quiet", dir.file("log")) == 2);
        CHECK(read_file(dir.file("log")).find("infeasible") != std::string::npos);
    }
    SECTION("missing scores file exits 6") {
        write_file(dir.file("run.cfg"), small_config_text);
        REQUIRE(run_cli("generate --config " + dir.file("run.cfg").string() + " --quiet", dir.file("log")) == 0);
        CHECK(run_cli("evaluate --config " + dir.file("run.cfg").string() + " --quiet", dir.file("log")) == 6);
    }
    SECTION("missing config file exits 6") {
        CHECK(run_cli("generate --config /nonexistent.cfg", dir.file("log")) == 6);
    }
    SECTION("unknown subcommands fail") {
        CHECK(run_cli("conjure --config x", dir.file("log")) != 0);
    }
}
