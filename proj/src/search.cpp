#include "cate/search.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace cate {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

double clamp_open_unit(double v) { return std::min(0.999, std::max(0.001, v)); }

}  // namespace

// ---- BenchmarkOracle -------------------------------------------------------------

BenchmarkOracle BenchmarkOracle::synthetic(const SpaceSpec& spec, std::uint64_t seed, SyntheticOptions opts) {
    BenchmarkOracle o;
    o.synthetic_spec_ = spec;
    o.seed_ = seed;
    o.opts_ = opts;
    return o;
}

BenchmarkOracle BenchmarkOracle::from_records(const std::vector<DatasetRecord>& records, const OpVocab& vocab) {
    (void)vocab;
    BenchmarkOracle o;
    o.record_backed_ = true;
    for (const auto& rec : records) {
        if (!rec.accuracy) throw std::invalid_argument("benchmark records: record without accuracy");
        const std::uint64_t h = canonical_hash(rec.cell);
        const auto [it, inserted] = o.records_.insert({h, *rec.accuracy});
        if (!inserted && it->second != *rec.accuracy)
            throw std::invalid_argument("benchmark records: conflicting accuracies for cell " + hash_hex(h));
    }
    return o;
}

BenchmarkOracle BenchmarkOracle::from_file(const std::string& path, const OpVocab& vocab) {
    return from_records(read_dataset(path, vocab), vocab);
}

double BenchmarkOracle::accuracy_of(const CellGraph& cell) const {
    const std::uint64_t h = canonical_hash(cell);
    if (record_backed_) {
        const auto it = records_.find(h);
        if (it == records_.end())
            throw std::invalid_argument("benchmark oracle: unknown cell " + hash_hex(h));
        return it->second;
    }
    const auto& spec = *synthetic_spec_;
    const double attr = compute_attribute(cell, spec.vocab, spec.attribute);
    const double dev = (attr - opts_.peak_attribute) / opts_.peak_width;
    const double attribute_term = std::exp(-0.5 * dev * dev);

    std::set<std::size_t> distinct;
    std::size_t intermediates = 0;
    for (const auto op : cell.ops) {
        if (spec.vocab.is_intermediate(op)) {
            distinct.insert(op);
            ++intermediates;
        }
    }
    const double diversity =
        intermediates == 0 ? 0.0
                           : static_cast<double>(distinct.size()) / static_cast<double>(spec.vocab.num_intermediate());
    const double depth = static_cast<double>(longest_path_length(cell)) / static_cast<double>(spec.max_nodes - 1);
    const std::uint64_t bits = mix64(canonical_hash(cell) ^ mix64(seed_ + 0x51ed2700418cull));
    const double noise = 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
    return clamp_open_unit(0.5 + opts_.attribute_weight * attribute_term + opts_.diversity_weight * diversity +
                           opts_.depth_weight * depth + opts_.noise_weight * noise);
}

BenchmarkOracle::QueryResult BenchmarkOracle::query(const CellGraph& cell) {
    const std::uint64_t h = canonical_hash(cell);
    const auto it = served_.find(h);
    if (it != served_.end()) return {it->second, false};
    const double acc = accuracy_of(cell);
    served_.insert({h, acc});
    ++query_count_;
    return {acc, true};
}

// ---- Trajectory IO ---------------------------------------------------------------

void write_trajectory(const std::string& path, const SearchTrajectory& trajectory) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_trajectory: cannot open '" + path + "'");
    for (const auto& e : trajectory.entries) {
        nlohmann::ordered_json j;
        j["seed"] = trajectory.seed;
        j["algorithm"] = trajectory.algorithm;
        j["query_index"] = e.query_index;
        j["cell_hash"] = hash_hex(e.cell_hash);
        j["accuracy"] = e.accuracy;
        j["best_so_far"] = e.best_so_far;
        out << j.dump() << "\n";
    }
}

std::vector<SearchTrajectory> read_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_trajectories: cannot open '" + path + "'");
    std::vector<SearchTrajectory> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        TrajectoryEntry e;
        e.query_index = j.at("query_index").get<std::size_t>();
        e.cell_hash = std::stoull(j.at("cell_hash").get<std::string>(), nullptr, 16);
        e.accuracy = j.at("accuracy").get<double>();
        e.best_so_far = j.at("best_so_far").get<double>();
        const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
        const std::string algorithm = j.at("algorithm").get<std::string>();
        if (out.empty() || out.back().seed != seed || out.back().algorithm != algorithm ||
            e.query_index <= out.back().entries.back().query_index) {
            SearchTrajectory t;
            t.seed = seed;
            t.algorithm = algorithm;
            out.push_back(std::move(t));
        }
        out.back().entries.push_back(e);
        out.back().budget = std::max(out.back().budget, e.query_index);
    }
    return out;
}

// ---- Search helpers ----------------------------------------------------------------

namespace {

/// Queries the oracle and appends a trajectory entry when the query was new.
/// Returns true when the run may continue (budget not yet exhausted).
struct QueryLogger {
    BenchmarkOracle& oracle;
    SearchTrajectory& trajectory;
    std::size_t budget;

    bool budget_left() const { return oracle.query_count() < budget; }

    double log(const CellGraph& cell) {
        const auto res = oracle.query(cell);
        if (res.counted) {
            const double best =
                trajectory.entries.empty() ? res.accuracy : std::max(res.accuracy, trajectory.entries.back().best_so_far);
            trajectory.entries.push_back({oracle.query_count(), canonical_hash(cell), res.accuracy, best});
        }
        return res.accuracy;
    }
};

}  // namespace

SearchTrajectory random_search(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                               std::uint64_t seed) {
    if (budget < 1) throw std::invalid_argument("random_search: budget must be >= 1");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "random";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0xA11CE));
    QueryLogger q{oracle, traj, budget};
    std::size_t stale = 0;
    while (q.budget_left()) {
        const CellGraph cell = random_cell(spec, rng);
        const std::size_t before = oracle.query_count();
        q.log(cell);
        if (oracle.query_count() == before) {
            if (++stale >= 1000) {
                traj.early_stop = true;
                traj.early_stop_reason = "no new distinct cell after 1000 draws";
                break;
            }
        } else {
            stale = 0;
        }
    }
    return traj;
}

SearchTrajectory regularized_evolution(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                                       const EvolutionOptions& opts, std::uint64_t seed,
                                       const MutationFn& mutate) {
    if (opts.population < 1 || opts.tournament < 1)
        throw std::invalid_argument("regularized_evolution: population and tournament must be >= 1");
    if (opts.population > budget)
        throw std::invalid_argument("regularized_evolution: population exceeds the query budget");
    const MutationFn mutate_fn =
        mutate ? mutate : [](const CellGraph& c, const SpaceSpec& s, Rng& r) { return mutate_cell(c, s, r); };

    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "rea";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0x2EA));
    QueryLogger q{oracle, traj, budget};

    std::deque<std::pair<CellGraph, double>> population;
    std::size_t stale = 0;
    while (population.size() < opts.population && q.budget_left()) {
        const CellGraph cell = random_cell(spec, rng);
        const std::size_t before = oracle.query_count();
        const double acc = q.log(cell);
        if (oracle.query_count() > before) {
            population.push_back({cell, acc});
            stale = 0;
        } else if (++stale >= 1000) {
            traj.early_stop = true;
            traj.early_stop_reason = "population seeding exhausted distinct cells";
            return traj;
        }
    }

    const std::size_t max_steps = 50 * budget;
    std::size_t steps = 0;
    while (q.budget_left()) {
        if (++steps > max_steps) {
            traj.early_stop = true;
            traj.early_stop_reason = "no new distinct cell within the step limit";
            break;
        }
        // Aging tournament: best of `tournament` sampled members becomes the parent.
        std::size_t best_idx = rng.below(population.size());
        for (std::size_t t = 1; t < opts.tournament; ++t) {
            const std::size_t idx = rng.below(population.size());
            if (population[idx].second > population[best_idx].second) best_idx = idx;
        }
        const CellGraph child = mutate_fn(population[best_idx].first, spec, rng);
        const double acc = q.log(child);
        population.push_back({child, acc});
        population.pop_front();  // remove the oldest
    }
    return traj;
}

SearchTrajectory local_search(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                              std::uint64_t seed) {
    if (budget < 1) throw std::invalid_argument("local_search: budget must be >= 1");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "ls";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0x10CA1));
    QueryLogger q{oracle, traj, budget};
    std::set<std::uint64_t> visited;

    auto fresh_start = [&](CellGraph& out) {
        for (std::size_t attempt = 0; attempt < 1000; ++attempt) {
            CellGraph cell = random_cell(spec, rng);
            if (visited.insert(canonical_hash(cell)).second) {
                out = std::move(cell);
                return true;
            }
        }
        return false;
    };

    CellGraph current;
    if (!fresh_start(current)) {
        traj.early_stop = true;
        traj.early_stop_reason = "no unvisited start cell";
        return traj;
    }
    double current_acc = q.log(current);

    while (q.budget_left()) {
        auto neighbors = edit_neighbors(current, spec);
        rng.shuffle(neighbors);
        double best_acc = -1.0;
        std::size_t best = neighbors.size();
        for (std::size_t i = 0; i < neighbors.size() && q.budget_left(); ++i) {
            if (!visited.insert(canonical_hash(neighbors[i])).second) continue;
            const double acc = q.log(neighbors[i]);
            if (acc > best_acc) {
                best_acc = acc;
                best = i;
            }
        }
        if (!q.budget_left()) break;
        if (best < neighbors.size() && best_acc > current_acc) {
            current = neighbors[best];
            current_acc = best_acc;
        } else {
            // Local optimum: restart from a fresh random cell.
            if (!fresh_start(current)) {
                traj.early_stop = true;
                traj.early_stop_reason = "no unvisited restart cell";
                break;
            }
            current_acc = q.log(current);
        }
    }
    return traj;
}

void CandidateUniverse::validate() const {
    if (cells.size() != encodings.size() || cells.size() != hashes.size())
        throw std::invalid_argument("candidate universe: cells/encodings/hashes sizes differ");
    if (cells.empty()) throw std::invalid_argument("candidate universe: empty");
    for (std::size_t i = 1; i < encodings.size(); ++i) {
        if (encodings[i].width() != encodings[0].width())
            throw std::invalid_argument("candidate universe: inconsistent encoding widths");
    }
}

SearchTrajectory local_search_latent(BenchmarkOracle& oracle, const CandidateUniverse& universe,
                                     std::size_t budget, std::size_t k, std::uint64_t seed) {
    universe.validate();
    if (budget < 1 || k < 1) throw std::invalid_argument("local_search_latent: budget and k must be >= 1");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "ls-latent";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0x1A7E27));
    QueryLogger q{oracle, traj, budget};
    std::vector<std::uint8_t> visited(universe.cells.size(), 0);
    std::size_t visited_count = 0;

    auto fresh_start = [&](std::size_t& out) {
        if (visited_count == universe.cells.size()) return false;
        std::size_t idx = rng.below(universe.cells.size());
        while (visited[idx]) idx = (idx + 1) % universe.cells.size();
        out = idx;
        return true;
    };

    std::size_t current = 0;
    if (!fresh_start(current)) {
        traj.early_stop = true;
        traj.early_stop_reason = "universe exhausted";
        return traj;
    }
    visited[current] = 1;
    ++visited_count;
    double current_acc = q.log(universe.cells[current]);

    while (q.budget_left()) {
        const auto neighbors = latent_neighbors(universe.encodings[current].values, universe.encodings, k, visited);
        if (neighbors.empty()) {
            traj.early_stop = true;
            traj.early_stop_reason = "universe exhausted";
            break;
        }
        double best_acc = -1.0;
        std::size_t best = universe.cells.size();
        for (const auto idx : neighbors) {
            if (!q.budget_left()) break;
            visited[idx] = 1;
            ++visited_count;
            const double acc = q.log(universe.cells[idx]);
            if (acc > best_acc) {
                best_acc = acc;
                best = idx;
            }
        }
        if (!q.budget_left()) break;
        if (best < universe.cells.size() && best_acc > current_acc) {
            current = best;
            current_acc = best_acc;
        } else {
            if (!fresh_start(current)) {
                traj.early_stop = true;
                traj.early_stop_reason = "universe exhausted";
                break;
            }
            visited[current] = 1;
            ++visited_count;
            current_acc = q.log(universe.cells[current]);
        }
    }
    return traj;
}

// ---- MLP regressor -------------------------------------------------------------------

void MlpRegressor::fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets) {
    if (inputs.size() != targets.size() || inputs.size() < 2)
        throw std::invalid_argument("MlpRegressor::fit: need >= 2 training points");
    input_width_ = inputs[0].size();
    const std::size_t n = inputs.size(), h = opts_.hidden;

    y_mean_ = 0.0;
    for (const double y : targets) y_mean_ += y;
    y_mean_ /= static_cast<double>(n);
    double var = 0.0;
    for (const double y : targets) var += (y - y_mean_) * (y - y_mean_);
    y_std_ = std::sqrt(var / static_cast<double>(n));
    if (y_std_ < 1e-12) y_std_ = 1.0;
    std::vector<double> ynorm(n);
    for (std::size_t i = 0; i < n; ++i) ynorm[i] = (targets[i] - y_mean_) / y_std_;

    std::vector<double> flat(n * input_width_);
    for (std::size_t i = 0; i < n; ++i) {
        if (inputs[i].size() != input_width_)
            throw std::invalid_argument("MlpRegressor::fit: inconsistent input widths");
        std::copy(inputs[i].begin(), inputs[i].end(), flat.begin() + static_cast<std::ptrdiff_t>(i * input_width_));
    }

    Tape tape;
    Rng init(opts_.seed);
    auto glorot = [&](std::size_t r, std::size_t c) {
        std::vector<double> data(r * c);
        const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
        for (auto& v : data) v = init.uniform(-limit, limit);
        return tape.parameter({r, c}, std::move(data));
    };
    Tensor w1 = glorot(input_width_, h);
    Tensor b1 = tape.parameter({h}, std::vector<double>(h, 0.0));
    Tensor w2 = glorot(h, 1);
    Tensor b2 = tape.parameter({1}, std::vector<double>(1, 0.0));
    std::vector<Param> params{{"w1", w1, DecayMode::Regular},
                              {"b1", b1, DecayMode::None},
                              {"w2", w2, DecayMode::Regular},
                              {"b2", b2, DecayMode::None}};
    const Tensor x = Tensor::constant({n, input_width_}, flat);

    AdamWOptions aopts;
    aopts.learning_rate = opts_.learning_rate;
    aopts.weight_decay = opts_.weight_decay;
    AdamW opt(aopts);
    for (std::size_t epoch = 0; epoch < opts_.epochs; ++epoch) {
        opt.zero_grad(params);
        tape.clear();
        Tensor hidden = relu(add_rowvec(matmul(x, w1), b1));
        Tensor pred = add_rowvec(matmul(hidden, w2), b2);
        Tensor loss = mse_loss(pred, ynorm);
        tape.backward(loss);
        opt.step(params);
    }
    w1_ = w1.data();
    b1_ = b1.data();
    w2_ = w2.data();
    b2_ = b2.data();
}

std::vector<double> MlpRegressor::features(const std::vector<double>& input) const {
    if (input.size() != input_width_) throw std::invalid_argument("MlpRegressor: input width mismatch");
    const std::size_t h = opts_.hidden;
    std::vector<double> phi(h + 1, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        double acc = b1_[j];
        for (std::size_t i = 0; i < input_width_; ++i) acc += input[i] * w1_[i * h + j];
        phi[j] = acc > 0.0 ? acc : 0.0;
    }
    phi[h] = 1.0;  // bias feature
    return phi;
}

double MlpRegressor::predict(const std::vector<double>& input) const {
    const auto phi = features(input);
    double out = b2_[0];
    for (std::size_t j = 0; j < opts_.hidden; ++j) out += phi[j] * w2_[j];
    return y_mean_ + y_std_ * out;
}

std::vector<double> MlpRegressor::predict_batch(const std::vector<std::vector<double>>& inputs) const {
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) out.push_back(predict(x));
    return out;
}

// ---- Bayesian linear regression ----------------------------------------------------------

namespace {

// In-place Cholesky of a symmetric positive-definite matrix (row-major,
// lower triangle). Returns false when a pivot is non-positive.
bool cholesky(std::vector<double>& a, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
            if (i == j) {
                if (s <= 0.0) return false;
                a[i * d + i] = std::sqrt(s);
            } else {
                a[i * d + j] = s / a[j * d + j];
            }
        }
        for (std::size_t j = i + 1; j < d; ++j) a[i * d + j] = 0.0;
    }
    return true;
}

void solve_lower(const std::vector<double>& l, std::size_t d, std::vector<double>& b) {
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * d + k] * b[k];
        b[i] = s / l[i * d + i];
    }
}

void solve_upper_from_lower(const std::vector<double>& l, std::size_t d, std::vector<double>& b) {
    for (std::size_t ii = d; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < d; ++k) s -= l[k * d + ii] * b[k];
        b[ii] = s / l[ii * d + ii];
    }
}

}  // namespace

BlrPosterior blr_fit(const std::vector<std::vector<double>>& features, const std::vector<double>& targets,
                     double alpha, double beta) {
    if (features.size() != targets.size() || features.empty())
        throw std::invalid_argument("blr_fit: features/targets mismatch");
    const std::size_t d = features[0].size();
    std::vector<double> a(d * d, 0.0), rhs(d, 0.0);
    for (std::size_t r = 0; r < features.size(); ++r) {
        const auto& phi = features[r];
        if (phi.size() != d) throw std::invalid_argument("blr_fit: inconsistent feature widths");
        for (std::size_t i = 0; i < d; ++i) {
            rhs[i] += beta * phi[i] * targets[r];
            for (std::size_t j = 0; j <= i; ++j) a[i * d + j] += beta * phi[i] * phi[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) a[i * d + j] = a[j * d + i];
        a[i * d + i] += alpha;
    }

    std::vector<double> chol = a;
    if (!cholesky(chol, d)) {
        // One documented jitter retry before giving up.
        double trace = 0.0;
        for (std::size_t i = 0; i < d; ++i) trace += a[i * d + i];
        const double jitter = 1e-8 * trace / static_cast<double>(d);
        chol = a;
        for (std::size_t i = 0; i < d; ++i) chol[i * d + i] += jitter;
        if (!cholesky(chol, d)) throw std::runtime_error("blr_fit: Gram matrix is not positive definite");
    }

    BlrPosterior post;
    post.alpha = alpha;
    post.beta = beta;
    post.width = d;
    post.chol = chol;
    post.mean = rhs;
    solve_lower(chol, d, post.mean);
    solve_upper_from_lower(chol, d, post.mean);
    return post;
}

double BlrPosterior::predictive_mean(const std::vector<double>& phi) const {
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i) s += mean[i] * phi[i];
    return s;
}

double BlrPosterior::predictive_variance(const std::vector<double>& phi) const {
    std::vector<double> z = phi;
    solve_lower(chol, width, z);
    double s = 0.0;
    for (const double v : z) s += v * v;
    return s + 1.0 / beta;
}

void DngoModel::fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets) {
    mlp_.fit(inputs, targets);
    std::vector<std::vector<double>> phis;
    phis.reserve(inputs.size());
    std::vector<double> ynorm(targets.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        phis.push_back(mlp_.features(inputs[i]));
        ynorm[i] = (targets[i] - mlp_.target_mean()) / mlp_.target_std();
    }
    posterior_ = blr_fit(phis, ynorm, alpha_, beta_);
}

DngoModel::Prediction DngoModel::predict(const std::vector<double>& input) const {
    const auto phi = mlp_.features(input);
    Prediction p;
    p.mean = mlp_.target_mean() + mlp_.target_std() * posterior_.predictive_mean(phi);
    p.variance = posterior_.predictive_variance(phi) * mlp_.target_std() * mlp_.target_std();
    return p;
}

double expected_improvement(double mean, double variance, double best) {
    const double sigma = std::sqrt(std::max(0.0, variance));
    if (sigma < 1e-12) return std::max(0.0, mean - best);
    const double z = (mean - best) / sigma;
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    return (mean - best) * cdf + sigma * pdf;
}

// ---- Predictor-based searches ---------------------------------------------------------------

namespace {

struct PoolState {
    std::vector<std::size_t> pool;            // universe indices, insertion order
    std::vector<double> pool_acc;             // matching oracle accuracies
    std::vector<std::uint8_t> visited;        // over the universe

    bool add(QueryLogger& q, const CandidateUniverse& universe, std::size_t idx) {
        if (!q.budget_left()) return false;
        visited[idx] = 1;
        pool.push_back(idx);
        pool_acc.push_back(q.log(universe.cells[idx]));
        return true;
    }
};

bool seed_pool(PoolState& state, QueryLogger& q, const CandidateUniverse& universe,
               const PoolSearchOptions& opts, Rng& rng) {
    if (opts.initial_pool > universe.cells.size())
        throw std::invalid_argument("pool search: initial pool exceeds the universe");
    for (const auto idx : rng.sample_distinct(universe.cells.size(), opts.initial_pool)) {
        if (!state.add(q, universe, idx)) return false;
    }
    return true;
}

std::vector<std::vector<double>> pool_inputs(const PoolState& state, const CandidateUniverse& universe) {
    std::vector<std::vector<double>> x;
    x.reserve(state.pool.size());
    for (const auto idx : state.pool) x.push_back(universe.encodings[idx].values);
    return x;
}

/// Highest-scoring unvisited universe indices; ties break by ascending index.
std::vector<std::size_t> top_unvisited(const std::vector<double>& score, const std::vector<std::uint8_t>& visited,
                                       std::size_t k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (!visited[i]) idx.push_back(i);
    }
    const std::size_t take = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (score[a] != score[b]) return score[a] > score[b];
                          return a < b;
                      });
    idx.resize(take);
    return idx;
}

}  // namespace

SearchTrajectory predictor_search(BenchmarkOracle& oracle, const CandidateUniverse& universe,
                                  std::size_t budget, const PoolSearchOptions& opts, std::uint64_t seed) {
    universe.validate();
    if (budget < opts.initial_pool)
        throw std::invalid_argument("predictor_search: budget must cover the initial pool");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "predictor";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0x9A3D1C70));
    QueryLogger q{oracle, traj, budget};
    PoolState state;
    state.visited.assign(universe.cells.size(), 0);
    if (!seed_pool(state, q, universe, opts, rng)) return traj;

    while (q.budget_left()) {
        MlpRegressor model(opts.predictor);
        model.fit(pool_inputs(state, universe), state.pool_acc);
        std::vector<double> scores(universe.cells.size(), 0.0);
        for (std::size_t i = 0; i < universe.cells.size(); ++i) {
            if (!state.visited[i]) scores[i] = model.predict(universe.encodings[i].values);
        }
        const auto picks = top_unvisited(scores, state.visited, opts.top_k);
        if (picks.empty()) {
            traj.early_stop = true;
            traj.early_stop_reason = "candidate universe exhausted";
            break;
        }
        std::size_t added = 0;
        for (const auto idx : picks) {
            if (!state.add(q, universe, idx)) break;
            ++added;
        }
        if (added == picks.size()) traj.iteration_added.push_back(added);
    }
    return traj;
}

SearchTrajectory dngo_search(BenchmarkOracle& oracle, const CandidateUniverse& universe, std::size_t budget,
                             const PoolSearchOptions& opts, std::uint64_t seed) {
    universe.validate();
    if (budget < opts.initial_pool)
        throw std::invalid_argument("dngo_search: budget must cover the initial pool");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "dngo";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0xD2160));
    QueryLogger q{oracle, traj, budget};
    PoolState state;
    state.visited.assign(universe.cells.size(), 0);
    if (!seed_pool(state, q, universe, opts, rng)) return traj;

    while (q.budget_left()) {
        DngoModel model(opts.predictor);
        model.fit(pool_inputs(state, universe), state.pool_acc);
        const double best = *std::max_element(state.pool_acc.begin(), state.pool_acc.end());
        std::vector<double> scores(universe.cells.size(), 0.0);
        for (std::size_t i = 0; i < universe.cells.size(); ++i) {
            if (state.visited[i]) continue;
            const auto pred = model.predict(universe.encodings[i].values);
            scores[i] = expected_improvement(pred.mean, pred.variance, best);
        }
        const auto picks = top_unvisited(scores, state.visited, opts.top_k);
        if (picks.empty()) {
            traj.early_stop = true;
            traj.early_stop_reason = "candidate universe exhausted";
            break;
        }
        std::size_t added = 0;
        for (const auto idx : picks) {
            if (!state.add(q, universe, idx)) break;
            ++added;
        }
        if (added == picks.size()) traj.iteration_added.push_back(added);
    }
    return traj;
}

SearchTrajectory cate_dngo_ls(BenchmarkOracle& oracle, const CandidateUniverse& universe, std::size_t budget,
                              const PoolSearchOptions& opts, std::uint64_t seed) {
    universe.validate();
    if (budget < opts.initial_pool)
        throw std::invalid_argument("cate_dngo_ls: budget must cover the initial pool");
    SearchTrajectory traj;
    traj.seed = seed;
    traj.algorithm = "cate-dngo-ls";
    traj.budget = budget;
    Rng rng(mix64(seed ^ 0xCA7ED));
    QueryLogger q{oracle, traj, budget};
    PoolState state;
    state.visited.assign(universe.cells.size(), 0);
    if (!seed_pool(state, q, universe, opts, rng)) return traj;

    while (q.budget_left()) {
        DngoModel model(opts.predictor);
        model.fit(pool_inputs(state, universe), state.pool_acc);
        std::vector<double> scores(universe.cells.size(), 0.0);
        for (std::size_t i = 0; i < universe.cells.size(); ++i) {
            if (!state.visited[i]) scores[i] = model.predict(universe.encodings[i].values).mean;
        }
        const auto picks = top_unvisited(scores, state.visited, opts.top_k);
        if (picks.empty()) {
            traj.early_stop = true;
            traj.early_stop_reason = "candidate universe exhausted";
            break;
        }
        std::size_t added = 0;
        std::vector<std::size_t> new_members;
        bool truncated = false;
        for (const auto idx : picks) {
            if (!state.add(q, universe, idx)) {
                truncated = true;
                break;
            }
            new_members.push_back(idx);
            ++added;
        }
        if (truncated) break;
        if (added < opts.top_k) {
            traj.early_stop = true;
            traj.early_stop_reason = "candidate universe exhausted";
            break;
        }

        // True top-k of the updated pool by oracle accuracy.
        std::vector<std::size_t> order(state.pool.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (state.pool_acc[a] != state.pool_acc[b]) return state.pool_acc[a] > state.pool_acc[b];
            return a < b;
        });
        const std::size_t top = std::min(opts.top_k, order.size());
        for (std::size_t r = 0; r < top && q.budget_left(); ++r) {
            const std::size_t universe_idx = state.pool[order[r]];
            const bool is_new =
                std::find(new_members.begin(), new_members.end(), universe_idx) != new_members.end();
            if (is_new) continue;  // M of the new entries made the true top-k
            // Latent local move: nearest unvisited neighbor of the incumbent.
            const auto nn = latent_neighbors(universe.encodings[universe_idx].values, universe.encodings, 1,
                                             state.visited);
            if (nn.empty()) continue;
            const auto raw_nn =
                latent_neighbors(universe.encodings[universe_idx].values, universe.encodings, 2, {});
            // raw_nn.front() is the incumbent itself (distance 0).
            if (raw_nn.size() > 1 && raw_nn[1] != nn.front()) ++traj.neighbor_skips;
            if (state.add(q, universe, nn.front())) ++added;
        }
        if (q.budget_left()) traj.iteration_added.push_back(added);
    }
    return traj;
}

}  // namespace cate
