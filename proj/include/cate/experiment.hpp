#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cate/cell.hpp"
#include "cate/encoder.hpp"
#include "cate/pretrain.hpp"
#include "cate/search.hpp"

namespace cate {

/// Exit codes shared by run_command and the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct CliOptions {
    std::string config_path;
    std::vector<std::string> overrides;  // key.path=json-value
    std::optional<std::string> out;
    std::optional<std::vector<std::uint64_t>> seed_list;
    std::optional<std::size_t> budget;
    bool resume = false;
    bool allow_ragged = false;
    std::size_t workers = 0;  // 0 = hardware concurrency
};

/// Executes one pipeline subcommand (gen-space, pretrain, encode, search,
/// compare, report) against a validated configuration. Returns an exit code;
/// configuration problems yield kExitConfig with a field-level message on
/// `log`, runtime failures kExitRuntime.
int run_command(const std::string& subcommand, const CliOptions& options, std::ostream& log);

// ---- Pieces exposed for tests ------------------------------------------------------

nlohmann::json load_config(const CliOptions& options);  // parses, applies overrides
SpaceSpec space_from_json(const nlohmann::json& j);
EncoderConfig encoder_from_json(const nlohmann::json& j, const OpVocab& vocab);
SyntheticOptions synthetic_from_json(const nlohmann::json& j);

struct ReportRow {
    std::string algorithm;
    std::size_t runs = 0;
    std::size_t budget = 0;
    double final_mean = 0.0;
    double final_median = 0.0;
    double final_std = 0.0;
};

/// Aggregates trajectory files into summary rows plus per-query mean/median
/// best-so-far curves. Mixed budgets are an error unless allow_ragged.
std::vector<ReportRow> emit_report(const std::vector<std::string>& trajectory_files,
                                   const std::string& out_dir, bool allow_ragged);

}  // namespace cate
