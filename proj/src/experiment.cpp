#include "cate/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace cate {

namespace {

using nlohmann::json;

/// Raised for configuration problems; carries the offending field path.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

json parse_override_value(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const std::exception&) {
        return json(raw);  // plain strings may be given unquoted
    }
}

void apply_override(json& config, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + spec + "' is not of the form key.path=value");
    const std::string path = spec.substr(0, eq);
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + spec + "' has an empty key segment");
        if (dot == std::string::npos) {
            (*node)[key] = parse_override_value(spec.substr(eq + 1));
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

const json& require(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError("config: missing required field '" + where + key + "'");
    return j.at(key);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

std::string out_dir_of(const json& config, const CliOptions& options) {
    if (options.out) return *options.out;
    if (config.contains("out")) return config.at("out").get<std::string>();
    throw ConfigError("config: missing required field 'out' (or pass --out)");
}

}  // namespace

json load_config(const CliOptions& options) {
    std::ifstream in(options.config_path);
    if (!in) throw ConfigError("config: cannot open '" + options.config_path + "'");
    json config;
    try {
        config = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config: parse error in '" + options.config_path + "': " + e.what());
    }
    for (const auto& o : options.overrides) apply_override(config, o);
    return config;
}

SpaceSpec space_from_json(const json& j) {
    std::vector<OpVocab::Op> intermediate;
    for (const auto& op : require(j, "ops", "space.")) {
        intermediate.push_back({require(op, "label", "space.ops[].").get<std::string>(),
                                get_or<double>(op, "param_cost", 0.0), get_or<double>(op, "flops_cost", 0.0)});
    }
    std::vector<std::string> inputs = get_or<std::vector<std::string>>(j, "inputs", {"input"});
    const std::string output = get_or<std::string>(j, "output", "output");
    SpaceSpec spec;
    spec.vocab = OpVocab(std::move(inputs), std::move(intermediate), output);
    spec.min_nodes = get_or<std::size_t>(j, "min_nodes", 3);
    spec.max_nodes = get_or<std::size_t>(j, "max_nodes", 7);
    spec.max_edges = get_or<std::size_t>(j, "max_edges", 9);
    spec.allow_unused_inputs = get_or<bool>(j, "allow_unused_inputs", false);
    const std::string attr = get_or<std::string>(j, "attribute", "params");
    if (attr == "params") {
        spec.attribute = AttributeKind::ParamProxy;
    } else if (attr == "flops") {
        spec.attribute = AttributeKind::FlopsProxy;
    } else {
        throw ConfigError("config: space.attribute must be 'params' or 'flops', got '" + attr + "'");
    }
    if (spec.max_nodes < spec.min_nodes) throw ConfigError("config: space.max_nodes < space.min_nodes");
    return spec;
}

EncoderConfig encoder_from_json(const json& j, const OpVocab& vocab) {
    EncoderConfig c;
    c.blocks = get_or<std::size_t>(j, "blocks", 4);
    c.cross_blocks = get_or<std::size_t>(j, "cross_blocks", 4);
    c.heads = get_or<std::size_t>(j, "heads", 4);
    c.hidden = get_or<std::size_t>(j, "hidden", 32);
    c.ff = get_or<std::size_t>(j, "ff", 64);
    c.vocab_size = vocab.size();
    c.max_nodes = get_or<std::size_t>(j, "max_nodes", 7);
    const std::string dir = get_or<std::string>(j, "direction", "uni");
    if (dir != "uni" && dir != "bi")
        throw ConfigError("config: encoder.direction must be 'uni' or 'bi', got '" + dir + "'");
    c.direction = dir == "bi" ? EncodingDirection::Bi : EncodingDirection::Uni;
    c.cross_hidden = get_or<std::size_t>(j, "cross_hidden",
                                         c.direction == EncodingDirection::Bi ? 2 * c.hidden : c.hidden);
    const std::string mask = get_or<std::string>(j, "mask", "indirect");
    if (mask != "direct" && mask != "indirect")
        throw ConfigError("config: encoder.mask must be 'direct' or 'indirect', got '" + mask + "'");
    c.mask = mask == "direct" ? MaskKind::Direct : MaskKind::Indirect;
    c.residual = get_or<bool>(j, "residual", true);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: encoder: ") + e.what());
    }
    return c;
}

SyntheticOptions synthetic_from_json(const json& j) {
    SyntheticOptions o;
    o.peak_attribute = get_or<double>(j, "peak_attribute", o.peak_attribute);
    o.peak_width = get_or<double>(j, "peak_width", o.peak_width);
    o.attribute_weight = get_or<double>(j, "attribute_weight", o.attribute_weight);
    o.diversity_weight = get_or<double>(j, "diversity_weight", o.diversity_weight);
    o.depth_weight = get_or<double>(j, "depth_weight", o.depth_weight);
    o.noise_weight = get_or<double>(j, "noise_weight", o.noise_weight);
    return o;
}

namespace {

PairSampleConfig pairs_from_json(const json& j) {
    PairSampleConfig c;
    c.delta = get_or<double>(j, "delta", c.delta);
    c.partners = get_or<std::size_t>(j, "partners", c.partners);
    c.split = get_or<double>(j, "split", c.split);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: pairs: ") + e.what());
    }
    return c;
}

CorruptionConfig corruption_from_json(const json& j) {
    CorruptionConfig c;
    c.rate = get_or<double>(j, "rate", c.rate);
    c.mask_fraction = get_or<double>(j, "mask_fraction", c.mask_fraction);
    c.random_fraction = get_or<double>(j, "random_fraction", c.random_fraction);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: corruption: ") + e.what());
    }
    return c;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    c.epochs = get_or<std::size_t>(j, "epochs", c.epochs);
    c.batch_size = get_or<std::size_t>(j, "batch_size", c.batch_size);
    c.learning_rate = get_or<double>(j, "learning_rate", c.learning_rate);
    c.beta1 = get_or<double>(j, "beta1", c.beta1);
    c.beta2 = get_or<double>(j, "beta2", c.beta2);
    c.weight_decay = get_or<double>(j, "weight_decay", c.weight_decay);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: train: ") + e.what());
    }
    return c;
}

PredictorOptions predictor_from_json(const json& j) {
    PredictorOptions o;
    o.hidden = get_or<std::size_t>(j, "hidden", o.hidden);
    o.epochs = get_or<std::size_t>(j, "epochs", o.epochs);
    o.learning_rate = get_or<double>(j, "learning_rate", o.learning_rate);
    o.weight_decay = get_or<double>(j, "weight_decay", o.weight_decay);
    o.seed = get_or<std::uint64_t>(j, "seed", o.seed);
    return o;
}

std::vector<std::uint64_t> seeds_from_json(const json& search, const CliOptions& options) {
    if (options.seed_list) return *options.seed_list;
    if (!search.contains("seeds")) throw ConfigError("config: search.seeds missing (or pass --seed-list)");
    const auto& s = search.at("seeds");
    std::vector<std::uint64_t> seeds;
    if (s.is_array()) {
        for (const auto& v : s) seeds.push_back(v.get<std::uint64_t>());
    } else {
        const std::size_t count = require(s, "count", "search.seeds.").get<std::size_t>();
        const std::uint64_t base = get_or<std::uint64_t>(s, "base", 1);
        for (std::size_t i = 0; i < count; ++i) seeds.push_back(base + i);
    }
    if (seeds.empty()) throw ConfigError("config: search.seeds must be non-empty");
    return seeds;
}

// ---- gen-space -------------------------------------------------------------------

int cmd_gen_space(const json& config, const CliOptions& options, std::ostream& log) {
    const SpaceSpec spec = space_from_json(require(config, "space", ""));
    const json& gen = require(config, "gen", "");
    const std::size_t count = require(gen, "count", "gen.").get<std::size_t>();
    const std::uint64_t seed = get_or<std::uint64_t>(gen, "seed", 1);
    const bool dedupe = get_or<bool>(gen, "dedupe", true);
    const std::string out_dir = out_dir_of(config, options);
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/dataset.jsonl";
    if (options.resume && fs::exists(path)) {
        log << "gen-space: " << path << " exists, resume skip\n";
        return kExitOk;
    }

    Rng rng(seed);
    std::vector<DatasetRecord> records;
    std::set<std::uint64_t> seen;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 200 * count + 10000;
    while (records.size() < count) {
        if (++attempts > max_attempts)
            throw std::runtime_error("gen-space: space too small for " + std::to_string(count) +
                                     " distinct cells");
        CellGraph cell = random_cell(spec, rng);
        if (dedupe && !seen.insert(canonical_hash(cell)).second) continue;
        DatasetRecord rec;
        rec.cell = std::move(cell);
        rec.attribute = compute_attribute(rec.cell, spec.vocab, spec.attribute);
        records.push_back(std::move(rec));
    }
    write_dataset(path, records, spec.vocab);
    log << "gen-space: wrote " << records.size() << " cells to " << path << "\n";
    return kExitOk;
}

// ---- pretrain --------------------------------------------------------------------

int cmd_pretrain(const json& config, const CliOptions& options, std::ostream& log) {
    const SpaceSpec spec = space_from_json(require(config, "space", ""));
    const json& section = require(config, "pretrain", "");
    const std::string dataset_path = require(section, "dataset", "pretrain.").get<std::string>();
    if (!fs::exists(dataset_path)) throw ConfigError("config: pretrain.dataset '" + dataset_path + "' not found");
    const EncoderConfig encoder = encoder_from_json(get_or<json>(config, "encoder", json::object()), spec.vocab);
    const PairSampleConfig pairs = pairs_from_json(get_or<json>(config, "pairs", json::object()));
    const CorruptionConfig corruption = corruption_from_json(get_or<json>(config, "corruption", json::object()));
    const TrainConfig train = train_from_json(get_or<json>(config, "train", json::object()));
    const std::string out_dir = out_dir_of(config, options);
    fs::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    const std::string metrics_path = out_dir + "/metrics.jsonl";
    if (options.resume && fs::exists(ckpt_path)) {
        log << "pretrain: " << ckpt_path << " exists, resume skip\n";
        return kExitOk;
    }

    const auto dataset = read_dataset(dataset_path, spec.vocab);
    const auto result = pretrain(dataset, spec, encoder, pairs, corruption, train);
    save_checkpoint(ckpt_path, result.weights);
    write_metrics(metrics_path, result.metrics);
    if (result.aborted_nan) {
        log << "pretrain: aborted on non-finite loss; wrote last good checkpoint\n";
        return kExitRuntime;
    }
    log << "pretrain: best epoch " << result.best_epoch << ", heldout masked acc "
        << (result.metrics.empty() ? 0.0 : result.metrics[result.best_epoch - 1].heldout_masked_acc) << ", wrote "
        << ckpt_path << "\n";
    return kExitOk;
}

// ---- encode ----------------------------------------------------------------------

int cmd_encode(const json& config, const CliOptions& options, std::ostream& log) {
    const SpaceSpec spec = space_from_json(require(config, "space", ""));
    const json& section = require(config, "encode", "");
    const std::string dataset_path = require(section, "dataset", "encode.").get<std::string>();
    if (!fs::exists(dataset_path)) throw ConfigError("config: encode.dataset '" + dataset_path + "' not found");
    const EncodingScheme scheme = scheme_from_name(require(section, "scheme", "encode.").get<std::string>());
    const std::string out_dir = out_dir_of(config, options);
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/encodings-" + scheme_name(scheme) + ".jsonl";
    if (options.resume && fs::exists(path)) {
        log << "encode: " << path << " exists, resume skip\n";
        return kExitOk;
    }

    const auto dataset = read_dataset(dataset_path, spec.vocab);
    std::vector<CellGraph> cells;
    std::vector<std::uint64_t> hashes;
    for (const auto& rec : dataset) {
        cells.push_back(rec.cell);
        hashes.push_back(canonical_hash(rec.cell));
    }

    std::vector<EncodingVector> encodings;
    switch (scheme) {
        case EncodingScheme::AdjacencyOneHot:
            for (const auto& cell : cells) encodings.push_back(encode_adjacency_onehot(cell, spec));
            break;
        case EncodingScheme::PathOneHot:
            for (const auto& cell : cells) encodings.push_back(encode_path(cell, spec));
            break;
        case EncodingScheme::PathTruncated: {
            const std::size_t width = require(section, "truncate_to", "encode.").get<std::size_t>();
            for (const auto& cell : cells) encodings.push_back(encode_path(cell, spec, width));
            break;
        }
        case EncodingScheme::CateUni:
        case EncodingScheme::CateBi: {
            const std::string ckpt = require(section, "checkpoint", "encode.").get<std::string>();
            if (!fs::exists(ckpt)) throw ConfigError("config: encode.checkpoint '" + ckpt + "' not found");
            const EncoderWeights weights = load_checkpoint(ckpt);
            const bool want_bi = scheme == EncodingScheme::CateBi;
            if ((weights.config().direction == EncodingDirection::Bi) != want_bi)
                throw ConfigError("config: encode.scheme does not match the checkpoint direction");
            encodings = extract_cate_encoding(weights, cells, spec);
            break;
        }
    }
    write_encodings(path, hashes, encodings);
    log << "encode: wrote " << encodings.size() << " " << scheme_name(scheme) << " vectors to " << path << "\n";
    return kExitOk;
}

// ---- search / compare ------------------------------------------------------------

struct SearchResources {
    SpaceSpec spec;
    json benchmark;
    std::size_t budget = 150;
    EvolutionOptions rea;
    PoolSearchOptions pool;
    std::size_t latent_k = 8;
    std::optional<CandidateUniverse> universe;  // with encodings of one scheme
    std::string universe_dataset;
};

BenchmarkOracle make_oracle(const SearchResources& res) {
    const std::string kind = get_or<std::string>(res.benchmark, "kind", "synthetic");
    if (kind == "synthetic") {
        return BenchmarkOracle::synthetic(res.spec, get_or<std::uint64_t>(res.benchmark, "seed", 0),
                                          synthetic_from_json(res.benchmark));
    }
    if (kind == "records") {
        return BenchmarkOracle::from_file(require(res.benchmark, "path", "benchmark.").get<std::string>(),
                                          res.spec.vocab);
    }
    throw ConfigError("config: benchmark.kind must be 'synthetic' or 'records', got '" + kind + "'");
}

CandidateUniverse load_universe(const SpaceSpec& spec, const std::string& dataset_path,
                                const std::string& encodings_path) {
    if (!fs::exists(dataset_path))
        throw ConfigError("config: universe dataset '" + dataset_path + "' not found");
    if (!fs::exists(encodings_path))
        throw ConfigError("config: encodings file '" + encodings_path + "' not found");
    CandidateUniverse universe;
    for (const auto& rec : read_dataset(dataset_path, spec.vocab)) {
        universe.cells.push_back(rec.cell);
        universe.hashes.push_back(canonical_hash(rec.cell));
    }
    EncodingDump dump = read_encodings(encodings_path);
    if (dump.hashes != universe.hashes)
        throw ConfigError("config: encodings file does not align with the universe dataset");
    universe.encodings = std::move(dump.encodings);
    universe.validate();
    return universe;
}

bool algorithm_needs_universe(const std::string& algo) {
    return algo == "ls-latent" || algo == "predictor" || algo == "dngo" || algo == "cate-dngo-ls";
}

SearchTrajectory run_algorithm(const std::string& algo, const SearchResources& res, std::uint64_t seed) {
    BenchmarkOracle oracle = make_oracle(res);
    if (algo == "random") return random_search(oracle, res.spec, res.budget, seed);
    if (algo == "rea") return regularized_evolution(oracle, res.spec, res.budget, res.rea, seed);
    if (algo == "ls") return local_search(oracle, res.spec, res.budget, seed);
    if (algo == "ls-latent") return local_search_latent(oracle, *res.universe, res.budget, res.latent_k, seed);
    if (algo == "predictor") return predictor_search(oracle, *res.universe, res.budget, res.pool, seed);
    if (algo == "dngo") return dngo_search(oracle, *res.universe, res.budget, res.pool, seed);
    if (algo == "cate-dngo-ls") return cate_dngo_ls(oracle, *res.universe, res.budget, res.pool, seed);
    throw ConfigError("config: unknown search algorithm '" + algo + "'");
}

struct SearchTask {
    std::string algorithm;       // algorithm id passed to run_algorithm
    std::string tag;             // algorithm[scheme] label written to files
    std::uint64_t seed = 0;
    const SearchResources* resources = nullptr;
    std::string out_path;
};

void run_tasks(std::vector<SearchTask>& tasks, const CliOptions& options, std::ostream& log) {
    std::size_t workers = options.workers ? options.workers : std::thread::hardware_concurrency();
    workers = std::max<std::size_t>(1, std::min(workers, tasks.size()));
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(tasks.size());
    auto body = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            auto& task = tasks[i];
            try {
                if (fs::exists(task.out_path)) continue;  // resume granularity: one file per run
                SearchTrajectory traj = run_algorithm(task.algorithm, *task.resources, task.seed);
                traj.algorithm = task.tag;
                write_trajectory(task.out_path + ".tmp", traj);
                fs::rename(task.out_path + ".tmp", task.out_path);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t wkr = 0; wkr < workers; ++wkr) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!errors[i].empty())
            throw std::runtime_error("search task '" + tasks[i].tag + "' seed " + std::to_string(tasks[i].seed) +
                                     ": " + errors[i]);
    }
    log << "search: " << tasks.size() << " trajectory streams under "
        << (tasks.empty() ? std::string{} : fs::path(tasks[0].out_path).parent_path().string()) << "\n";
}

SearchResources base_resources(const json& config, const json& search, const CliOptions& options) {
    SearchResources res;
    res.spec = space_from_json(require(config, "space", ""));
    res.benchmark = get_or<json>(config, "benchmark", json{{"kind", "synthetic"}, {"seed", 0}});
    res.budget = options.budget ? *options.budget : get_or<std::size_t>(search, "budget", 150);
    if (res.budget < 1) throw ConfigError("config: search.budget must be >= 1");
    const json rea = get_or<json>(search, "rea", json::object());
    res.rea.population = get_or<std::size_t>(rea, "population", 20);
    res.rea.tournament = get_or<std::size_t>(rea, "tournament", 5);
    const json pool = get_or<json>(search, "pool", json::object());
    res.pool.initial_pool = get_or<std::size_t>(pool, "initial_pool", 10);
    res.pool.top_k = get_or<std::size_t>(pool, "top_k", 5);
    res.pool.predictor = predictor_from_json(get_or<json>(search, "predictor", json::object()));
    res.latent_k = get_or<std::size_t>(search, "latent_k", 8);
    res.universe_dataset = get_or<std::string>(search, "universe", "");
    return res;
}

int cmd_search(const json& config, const CliOptions& options, std::ostream& log) {
    const json& search = require(config, "search", "");
    const auto seeds = seeds_from_json(search, options);
    const auto algorithms = require(search, "algorithms", "search.").get<std::vector<std::string>>();
    if (algorithms.empty()) throw ConfigError("config: search.algorithms must be non-empty");

    // One resource pack per scheme actually used, so a universe is loaded once.
    const std::string out_dir = out_dir_of(config, options);
    fs::create_directories(out_dir + "/trajectories");

    std::vector<std::unique_ptr<SearchResources>> packs;
    auto pack_for = [&](const std::string& scheme) -> SearchResources* {
        auto res = std::make_unique<SearchResources>(base_resources(config, search, options));
        if (!scheme.empty()) {
            const json encodings = require(search, "encodings", "search.");
            if (!encodings.contains(scheme))
                throw ConfigError("config: search.encodings has no entry for scheme '" + scheme + "'");
            if (res->universe_dataset.empty())
                throw ConfigError("config: search.universe is required for predictor/latent algorithms");
            res->universe =
                load_universe(res->spec, res->universe_dataset, encodings.at(scheme).get<std::string>());
        }
        packs.push_back(std::move(res));
        return packs.back().get();
    };

    SearchResources* plain = nullptr;
    SearchResources* with_universe = nullptr;
    const std::string scheme = get_or<std::string>(search, "scheme", "cate-uni");

    std::vector<SearchTask> tasks;
    for (const auto& algo : algorithms) {
        SearchResources* res;
        std::string tag = algo;
        if (algorithm_needs_universe(algo)) {
            if (!with_universe) with_universe = pack_for(scheme);
            res = with_universe;
            tag = algo + "[" + scheme + "]";
        } else {
            if (!plain) plain = pack_for("");
            res = plain;
        }
        for (const auto seed : seeds) {
            SearchTask task;
            task.algorithm = algo;
            task.tag = tag;
            task.seed = seed;
            task.resources = res;
            task.out_path = out_dir + "/trajectories/" + tag + "_seed" + std::to_string(seed) + ".jsonl";
            if (!options.resume && fs::exists(task.out_path)) fs::remove(task.out_path);
            tasks.push_back(std::move(task));
        }
    }
    run_tasks(tasks, options, log);
    return kExitOk;
}

int cmd_compare(const json& config, const CliOptions& options, std::ostream& log) {
    const json& compare = require(config, "compare", "");
    const json& search = require(config, "search", "");
    const auto seeds = seeds_from_json(search, options);
    const auto schemes = require(compare, "schemes", "compare.").get<std::vector<std::string>>();
    const auto algorithms = require(compare, "algorithms", "compare.").get<std::vector<std::string>>();
    const std::string out_dir = out_dir_of(config, options);
    fs::create_directories(out_dir + "/trajectories");

    std::vector<std::unique_ptr<SearchResources>> packs;
    std::vector<SearchTask> tasks;
    auto add_tasks = [&](const std::string& algo, const std::string& tag, SearchResources* res) {
        for (const auto seed : seeds) {
            SearchTask task;
            task.algorithm = algo;
            task.tag = tag;
            task.seed = seed;
            task.resources = res;
            task.out_path = out_dir + "/trajectories/" + tag + "_seed" + std::to_string(seed) + ".jsonl";
            if (!options.resume && fs::exists(task.out_path)) fs::remove(task.out_path);
            tasks.push_back(std::move(task));
        }
    };

    SearchResources* plain = nullptr;
    for (const auto& algo : algorithms) {
        if (!algorithm_needs_universe(algo)) {
            if (!plain) {
                packs.push_back(std::make_unique<SearchResources>(base_resources(config, search, options)));
                plain = packs.back().get();
            }
            add_tasks(algo, algo, plain);
            continue;
        }
        for (const auto& scheme : schemes) {
            packs.push_back(std::make_unique<SearchResources>(base_resources(config, search, options)));
            SearchResources* res = packs.back().get();
            const json encodings = require(search, "encodings", "search.");
            if (!encodings.contains(scheme))
                throw ConfigError("config: search.encodings has no entry for scheme '" + scheme + "'");
            res->universe =
                load_universe(res->spec, res->universe_dataset, encodings.at(scheme).get<std::string>());
            add_tasks(algo, algo + "[" + scheme + "]", res);
        }
    }
    run_tasks(tasks, options, log);
    return kExitOk;
}

// ---- report ----------------------------------------------------------------------

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_report(const json& config, const CliOptions& options, std::ostream& log) {
    const json report = get_or<json>(config, "report", json::object());
    const std::string out_dir = out_dir_of(config, options);
    std::string traj_dir = get_or<std::string>(report, "trajectories", out_dir + "/trajectories");
    if (!fs::exists(traj_dir)) throw ConfigError("config: trajectory directory '" + traj_dir + "' not found");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(traj_dir)) {
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("report: no trajectory files in '" + traj_dir + "'");
    const auto rows = emit_report(files, out_dir + "/report", options.allow_ragged ||
                                                                  get_or<bool>(report, "allow_ragged", false));
    log << "report: " << rows.size() << " algorithm groups over " << files.size() << " files -> " << out_dir
        << "/report\n";
    return kExitOk;
}

}  // namespace

std::vector<ReportRow> emit_report(const std::vector<std::string>& trajectory_files, const std::string& out_dir,
                                   bool allow_ragged) {
    std::map<std::string, std::vector<SearchTrajectory>> groups;
    for (const auto& file : trajectory_files) {
        for (auto& traj : read_trajectories(file)) groups[traj.algorithm].push_back(std::move(traj));
    }
    if (groups.empty()) throw std::runtime_error("emit_report: no trajectories");

    std::size_t budget = 0;
    for (const auto& [tag, trajs] : groups) {
        for (const auto& t : trajs) {
            const std::size_t len = t.entries.size();
            if (budget == 0) budget = len;
            if (len != budget && !allow_ragged)
                throw std::runtime_error("emit_report: mixed trajectory lengths (" + std::to_string(len) +
                                         " vs " + std::to_string(budget) + "); pass --allow-ragged to aggregate");
            budget = std::max(budget, len);
        }
    }

    fs::create_directories(out_dir);
    std::ofstream summary(out_dir + "/summary.jsonl");
    std::ofstream curves(out_dir + "/curves.jsonl");
    std::ofstream table(out_dir + "/table.txt");
    if (!summary || !curves || !table) throw std::runtime_error("emit_report: cannot write to '" + out_dir + "'");

    std::vector<ReportRow> rows;
    table << std::left << std::setw(34) << "algorithm" << std::right << std::setw(6) << "runs" << std::setw(8)
          << "budget" << std::setw(12) << "final_mean" << std::setw(14) << "final_median" << std::setw(12)
          << "final_std" << "\n";
    for (const auto& [tag, trajs] : groups) {
        ReportRow row;
        row.algorithm = tag;
        row.runs = trajs.size();
        std::vector<double> finals;
        for (const auto& t : trajs) {
            finals.push_back(t.final_best());
            row.budget = std::max(row.budget, t.entries.size());
        }
        const double n = static_cast<double>(finals.size());
        for (const double f : finals) row.final_mean += f;
        row.final_mean /= n;
        row.final_median = median_of(finals);
        double var = 0.0;
        for (const double f : finals) var += (f - row.final_mean) * (f - row.final_mean);
        row.final_std = std::sqrt(var / n);

        nlohmann::ordered_json j;
        j["algorithm"] = row.algorithm;
        j["runs"] = row.runs;
        j["budget"] = row.budget;
        j["final_mean"] = row.final_mean;
        j["final_median"] = row.final_median;
        j["final_std"] = row.final_std;
        summary << j.dump() << "\n";

        // Per-query aggregate curve: mean and median best-so-far at each index.
        for (std::size_t qi = 0; qi < row.budget; ++qi) {
            std::vector<double> best;
            for (const auto& t : trajs) {
                if (qi < t.entries.size()) best.push_back(t.entries[qi].best_so_far);
            }
            if (best.empty()) continue;
            double mean = 0.0;
            for (const double b : best) mean += b;
            mean /= static_cast<double>(best.size());
            nlohmann::ordered_json c;
            c["algorithm"] = row.algorithm;
            c["query_index"] = qi + 1;
            c["mean_best"] = mean;
            c["median_best"] = median_of(best);
            c["runs"] = best.size();
            curves << c.dump() << "\n";
        }

        table << std::left << std::setw(34) << row.algorithm << std::right << std::setw(6) << row.runs
              << std::setw(8) << row.budget << std::setw(12) << std::fixed << std::setprecision(5)
              << row.final_mean << std::setw(14) << row.final_median << std::setw(12) << row.final_std << "\n";
        rows.push_back(std::move(row));
    }
    return rows;
}

int run_command(const std::string& subcommand, const CliOptions& options, std::ostream& log) {
    try {
        const json config = load_config(options);
        if (subcommand == "gen-space") return cmd_gen_space(config, options, log);
        if (subcommand == "pretrain") return cmd_pretrain(config, options, log);
        if (subcommand == "encode") return cmd_encode(config, options, log);
        if (subcommand == "search") return cmd_search(config, options, log);
        if (subcommand == "compare") return cmd_compare(config, options, log);
        if (subcommand == "report") return cmd_report(config, options, log);
        log << "unknown subcommand '" << subcommand << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace cate
