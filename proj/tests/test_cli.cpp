#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cate/experiment.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cate;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& rel = "") const { return (rel.empty() ? path : path / rel).string(); }
};

nlohmann::json base_config(const TempDir& dir) {
    nlohmann::json config;
    config["space"] = {{"ops",
                        {{{"label", "maxpool3x3"}, {"param_cost", 0.0}, {"flops_cost", 1.0}},
                         {{"label", "conv1x1"}, {"param_cost", 1.0}, {"flops_cost", 2.0}},
                         {{"label", "conv3x3"}, {"param_cost", 9.0}, {"flops_cost", 18.0}}}},
                       {"min_nodes", 3},
                       {"max_nodes", 7},
                       {"max_edges", 9},
                       {"attribute", "params"}};
    config["gen"] = {{"count", 250}, {"seed", 5}};
    config["pairs"] = {{"delta", 1.0}, {"partners", 2}, {"split", 0.9}};
    config["corruption"] = {{"rate", 0.2}, {"mask_fraction", 0.8}, {"random_fraction", 0.2}};
    config["encoder"] = {{"blocks", 2}, {"cross_blocks", 2}, {"heads", 2}, {"hidden", 16},
                         {"ff", 24},    {"direction", "uni"}, {"mask", "indirect"}, {"max_nodes", 7}};
    config["train"] = {{"epochs", 1}, {"batch_size", 32}, {"learning_rate", 3e-3}, {"seed", 3}};
    config["benchmark"] = {{"kind", "synthetic"}, {"seed", 11}};
    config["pretrain"] = {{"dataset", dir.str("out/dataset.jsonl")}};
    config["encode"] = {{"dataset", dir.str("out/dataset.jsonl")},
                        {"scheme", "adjacency-onehot"}};
    config["search"] = {{"algorithms", {"random", "rea"}},
                        {"budget", 30},
                        {"seeds", {1, 2, 3}},
                        {"universe", dir.str("out/dataset.jsonl")},
                        {"encodings", {{"adjacency-onehot", dir.str("out/encodings-adjacency-onehot.jsonl")}}},
                        {"scheme", "adjacency-onehot"},
                        {"predictor", {{"hidden", 16}, {"epochs", 20}}}};
    config["out"] = dir.str("out");
    return config;
}

CliOptions options_for(const TempDir& dir, const nlohmann::json& config) {
    const std::string path = dir.str("config.json");
    std::ofstream out(path);
    out << config.dump(2);
    out.close();
    CliOptions opts;
    opts.config_path = path;
    opts.workers = 2;
    return opts;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("the full pipeline runs end to end and is byte-deterministic") {
    TempDir dir("cate_cli_pipeline");
    auto config = base_config(dir);
    const CliOptions opts = options_for(dir, config);
    std::ostringstream log;

    REQUIRE(run_command("gen-space", opts, log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/dataset.jsonl")));

    REQUIRE(run_command("pretrain", opts, log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/checkpoint.bin")));
    REQUIRE(fs::exists(dir.str("out/metrics.jsonl")));

    REQUIRE(run_command("encode", opts, log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/encodings-adjacency-onehot.jsonl")));

    // cate encodings from the trained checkpoint
    config["encode"]["scheme"] = "cate-uni";
    config["encode"]["checkpoint"] = dir.str("out/checkpoint.bin");
    REQUIRE(run_command("encode", options_for(dir, config), log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/encodings-cate-uni.jsonl")));

    REQUIRE(run_command("search", opts, log) == kExitOk);
    for (const std::string algo : {"random", "rea"}) {
        for (const std::string seed : {"1", "2", "3"}) {
            REQUIRE(fs::exists(dir.str("out/trajectories/" + algo + "_seed" + seed + ".jsonl")));
        }
    }

    REQUIRE(run_command("report", opts, log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/report/summary.jsonl")));
    REQUIRE(fs::exists(dir.str("out/report/curves.jsonl")));
    REQUIRE(fs::exists(dir.str("out/report/table.txt")));

    // Determinism: a re-run reproduces byte-identical trajectories and reports.
    const std::string traj_before = slurp(dir.str("out/trajectories/random_seed1.jsonl"));
    const std::string summary_before = slurp(dir.str("out/report/summary.jsonl"));
    REQUIRE(run_command("search", opts, log) == kExitOk);
    REQUIRE(run_command("report", opts, log) == kExitOk);
    CHECK(slurp(dir.str("out/trajectories/random_seed1.jsonl")) == traj_before);
    CHECK(slurp(dir.str("out/report/summary.jsonl")) == summary_before);
}

TEST_CASE("predictor-based search runs against an encoded universe") {
    TempDir dir("cate_cli_predictor");
    auto config = base_config(dir);
    const CliOptions opts = options_for(dir, config);
    std::ostringstream log;
    REQUIRE(run_command("gen-space", opts, log) == kExitOk);
    REQUIRE(run_command("encode", opts, log) == kExitOk);
    config["search"]["algorithms"] = {"cate-dngo-ls", "ls-latent"};
    config["search"]["seeds"] = {1};
    config["search"]["budget"] = 40;
    const CliOptions opts2 = options_for(dir, config);
    REQUIRE(run_command("search", opts2, log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/trajectories/cate-dngo-ls[adjacency-onehot]_seed1.jsonl")));
    REQUIRE(fs::exists(dir.str("out/trajectories/ls-latent[adjacency-onehot]_seed1.jsonl")));
    const auto trajs = read_trajectories(dir.str("out/trajectories/cate-dngo-ls[adjacency-onehot]_seed1.jsonl"));
    REQUIRE(trajs.size() == 1);
    CHECK(trajs[0].entries.size() == 40);
}

TEST_CASE("compare runs the scheme-by-subroutine matrix") {
    TempDir dir("cate_cli_compare");
    auto config = base_config(dir);
    std::ostringstream log;
    REQUIRE(run_command("gen-space", options_for(dir, config), log) == kExitOk);
    REQUIRE(run_command("encode", options_for(dir, config), log) == kExitOk);
    config["encode"]["scheme"] = "path-truncated";
    config["encode"]["truncate_to"] = 40;
    REQUIRE(run_command("encode", options_for(dir, config), log) == kExitOk);
    config["search"]["encodings"]["path-truncated"] = dir.str("out/encodings-path-truncated.jsonl");
    config["compare"] = {{"schemes", {"adjacency-onehot", "path-truncated"}},
                         {"algorithms", {"random", "predictor"}}};
    config["search"]["seeds"] = {1, 2};
    config["search"]["budget"] = 25;
    REQUIRE(run_command("compare", options_for(dir, config), log) == kExitOk);
    REQUIRE(fs::exists(dir.str("out/trajectories/random_seed1.jsonl")));
    REQUIRE(fs::exists(dir.str("out/trajectories/predictor[adjacency-onehot]_seed2.jsonl")));
    REQUIRE(fs::exists(dir.str("out/trajectories/predictor[path-truncated]_seed1.jsonl")));
    REQUIRE(run_command("report", options_for(dir, config), log) == kExitOk);
    const std::string table = slurp(dir.str("out/report/table.txt"));
    CHECK(table.find("predictor[path-truncated]") != std::string::npos);
}

TEST_CASE("search emits one trajectory stream per seed, two hundred at full fan-out") {
    TempDir dir("cate_cli_fanout");
    auto config = base_config(dir);
    config["gen"]["count"] = 120;
    config["search"]["algorithms"] = {"random"};
    config["search"]["seeds"] = {{"count", 200}, {"base", 1}};
    config["search"]["budget"] = 150;
    std::ostringstream log;
    REQUIRE(run_command("gen-space", options_for(dir, config), log) == kExitOk);
    REQUIRE(run_command("search", options_for(dir, config), log) == kExitOk);
    std::size_t streams = 0;
    for (const auto& entry : fs::directory_iterator(dir.str("out/trajectories"))) {
        streams += entry.path().extension() == ".jsonl";
    }
    CHECK(streams == 200);
}

TEST_CASE("latent-neighborhood search without encodings is a config error") {
    TempDir dir("cate_cli_latent_missing");
    auto config = base_config(dir);
    std::ostringstream log;
    REQUIRE(run_command("gen-space", options_for(dir, config), log) == kExitOk);
    config["search"]["algorithms"] = {"ls-latent"};
    config["search"]["scheme"] = "cate-uni";  // never encoded
    CHECK(run_command("search", options_for(dir, config), log) == kExitConfig);
    CHECK(log.str().find("cate-uni") != std::string::npos);
}

TEST_CASE("report aggregates known trajectories to hand-computed statistics") {
    TempDir dir("cate_cli_report");
    fs::create_directories(dir.str("traj"));
    // Three synthetic runs with finals 0.5, 0.7, 0.9.
    for (int k = 0; k < 3; ++k) {
        SearchTrajectory t;
        t.seed = static_cast<std::uint64_t>(k);
        t.algorithm = "toy";
        t.budget = 2;
        const double final = 0.5 + 0.2 * k;
        t.entries.push_back({1, 123, 0.4, 0.4});
        t.entries.push_back({2, 456, final, final});
        write_trajectory(dir.str("traj/toy_seed" + std::to_string(k) + ".jsonl"), t);
    }
    const auto rows = emit_report({dir.str("traj/toy_seed0.jsonl"), dir.str("traj/toy_seed1.jsonl"),
                                   dir.str("traj/toy_seed2.jsonl")},
                                  dir.str("report"), false);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].runs == 3);
    CHECK(rows[0].final_mean == doctest::Approx(0.7));
    CHECK(rows[0].final_median == doctest::Approx(0.7));
    CHECK(rows[0].final_std == doctest::Approx(std::sqrt((0.04 + 0.0 + 0.04) / 3.0)));

    // A single trajectory reports its own final; identical runs have std 0.
    const auto single = emit_report({dir.str("traj/toy_seed2.jsonl")}, dir.str("report2"), false);
    CHECK(single[0].final_mean == doctest::Approx(0.9));
    CHECK(single[0].final_std == 0.0);
}

TEST_CASE("mixed budgets are rejected unless ragged aggregation is allowed") {
    TempDir dir("cate_cli_ragged");
    fs::create_directories(dir.str("traj"));
    SearchTrajectory a;
    a.seed = 1;
    a.algorithm = "toy";
    a.entries.push_back({1, 1, 0.5, 0.5});
    SearchTrajectory b = a;
    b.seed = 2;
    b.entries.push_back({2, 2, 0.6, 0.6});
    write_trajectory(dir.str("traj/a.jsonl"), a);
    write_trajectory(dir.str("traj/b.jsonl"), b);
    CHECK_THROWS_WITH_AS(emit_report({dir.str("traj/a.jsonl"), dir.str("traj/b.jsonl")}, dir.str("report"), false),
                         doctest::Contains("ragged"), std::runtime_error);
    CHECK_NOTHROW(emit_report({dir.str("traj/a.jsonl"), dir.str("traj/b.jsonl")}, dir.str("report"), true));
}

TEST_CASE("configuration problems exit with the config code and a field-level message") {
    TempDir dir("cate_cli_errors");
    auto config = base_config(dir);
    config["search"].erase("algorithms");
    std::ostringstream log;
    CHECK(run_command("search", options_for(dir, config), log) == kExitConfig);
    CHECK(log.str().find("search.algorithms") != std::string::npos);

    std::ostringstream log2;
    config = base_config(dir);
    config["space"]["attribute"] = "watts";
    CHECK(run_command("gen-space", options_for(dir, config), log2) == kExitConfig);
    CHECK(log2.str().find("space.attribute") != std::string::npos);

    std::ostringstream log3;
    CHECK(run_command("bogus-subcommand", options_for(dir, base_config(dir)), log3) == kExitConfig);

    std::ostringstream log4;
    CliOptions missing;
    missing.config_path = dir.str("nope.json");
    CHECK(run_command("report", missing, log4) == kExitConfig);
}

TEST_CASE("overrides rewrite nested config fields") {
    TempDir dir("cate_cli_override");
    auto config = base_config(dir);
    CliOptions opts = options_for(dir, config);
    opts.overrides = {"gen.count=60", "gen.seed=9"};
    std::ostringstream log;
    REQUIRE(run_command("gen-space", opts, log) == kExitOk);
    std::ifstream in(dir.str("out/dataset.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) lines += !line.empty();
    CHECK(lines == 60);
}
