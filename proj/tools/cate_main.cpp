#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cate/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cate: computation-aware architecture encodings and encoding-dependent search"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    cate::CliOptions options;
    std::string seed_csv;
    bool have_budget = false;
    std::size_t budget = 0;

    const std::vector<std::string> names = {"gen-space", "pretrain", "encode", "search", "compare", "report"};
    const std::vector<std::string> descriptions = {
        "sample a deduplicated architecture dataset with attributes",
        "masked-operator pre-training; writes checkpoint.bin and metrics.jsonl",
        "dump encoding vectors for a dataset under one scheme",
        "run seeded search algorithms; writes one trajectory file per run",
        "run a {scheme x subroutine} comparison matrix",
        "aggregate trajectory files into summary tables and curves"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
        sub->add_option("--config", options.config_path, "experiment config (JSON)")->required();
        sub->add_option("--set", options.overrides, "config override key.path=value (repeatable)");
        sub->add_option("--out", [&](const std::vector<std::string>& v) {
            options.out = v.back();
            return true;
        }, "output directory (overrides config 'out')");
        sub->add_option("--seed-list", seed_csv, "comma-separated seeds (overrides search.seeds)");
        sub->add_option("--budget", [&](const std::vector<std::string>& v) {
            budget = std::stoull(v.back());
            have_budget = true;
            return true;
        }, "query budget (overrides search.budget)");
        sub->add_flag("--resume", options.resume, "reuse existing artifacts instead of recomputing");
        sub->add_flag("--allow-ragged", options.allow_ragged, "aggregate trajectories of mixed lengths");
        sub->add_option("--workers", options.workers, "worker threads for search/compare (0 = all cores)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return cate::kExitConfig;
    }

    if (!seed_csv.empty()) {
        try {
            options.seed_list = parse_seed_list(seed_csv);
        } catch (const std::exception&) {
            std::cerr << "invalid --seed-list '" << seed_csv << "'\n";
            return cate::kExitConfig;
        }
    }
    if (have_budget) options.budget = budget;

    const std::string subcommand = app.get_subcommands().front()->get_name();
    return cate::run_command(subcommand, options, std::cout);
}
