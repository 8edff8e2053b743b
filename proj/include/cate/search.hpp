#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cate/cell.hpp"
#include "cate/encodings.hpp"
#include "cate/tensor.hpp"

namespace cate {

/// Shaping parameters of the synthetic accuracy formula. Every term reads
/// isomorphism-invariant features, and the attribute term dominates so that
/// cells with close attributes have correlated accuracies.
struct SyntheticOptions {
    double peak_attribute = 30.0;   // attribute value with the highest base term
    double peak_width = 12.0;       // Gaussian width of the attribute term
    double attribute_weight = 0.35;
    double diversity_weight = 0.08;
    double depth_weight = 0.05;
    double noise_weight = 0.02;
};

/// Query-counting accuracy oracle over cells. A distinct cell (by canonical
/// hash) increments the counter exactly once; re-queries are served from the
/// log. Accuracy comes either from the deterministic synthetic formula or
/// from loaded records (unknown cells are then an error).
class BenchmarkOracle {
public:
    static BenchmarkOracle synthetic(const SpaceSpec& spec, std::uint64_t seed, SyntheticOptions opts = {});
    static BenchmarkOracle from_records(const std::vector<DatasetRecord>& records, const OpVocab& vocab);
    static BenchmarkOracle from_file(const std::string& path, const OpVocab& vocab);

    struct QueryResult {
        double accuracy = 0.0;
        bool counted = false;  // false when served from the log
    };
    QueryResult query(const CellGraph& cell);
    double accuracy_of(const CellGraph& cell) const;  // no counting; synthetic formula or record lookup

    std::size_t query_count() const { return query_count_; }

private:
    BenchmarkOracle() = default;

    std::optional<SpaceSpec> synthetic_spec_;
    std::uint64_t seed_ = 0;
    SyntheticOptions opts_;
    bool record_backed_ = false;
    std::unordered_map<std::uint64_t, double> records_;
    std::unordered_map<std::uint64_t, double> served_;
    std::size_t query_count_ = 0;
};

struct TrajectoryEntry {
    std::size_t query_index = 0;  // 1-based
    std::uint64_t cell_hash = 0;
    double accuracy = 0.0;
    double best_so_far = 0.0;
};

struct SearchTrajectory {
    std::uint64_t seed = 0;
    std::string algorithm;
    std::size_t budget = 0;
    std::vector<TrajectoryEntry> entries;
    bool early_stop = false;
    std::string early_stop_reason;
    /// Pool-growth per completed iteration (predictor-based searches only).
    std::vector<std::size_t> iteration_added;
    /// Latent local moves whose globally nearest neighbor was already pooled
    /// and had to fall through to the next-nearest unvisited one.
    std::size_t neighbor_skips = 0;

    double final_best() const { return entries.empty() ? 0.0 : entries.back().best_so_far; }
};

void write_trajectory(const std::string& path, const SearchTrajectory& trajectory);
std::vector<SearchTrajectory> read_trajectories(const std::string& path);

// ---- Encoding-dependent search subroutines -------------------------------------

using MutationFn = std::function<CellGraph(const CellGraph&, const SpaceSpec&, Rng&)>;

SearchTrajectory random_search(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                               std::uint64_t seed);

struct EvolutionOptions {
    std::size_t population = 20;
    std::size_t tournament = 5;
};

SearchTrajectory regularized_evolution(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                                       const EvolutionOptions& opts, std::uint64_t seed,
                                       const MutationFn& mutate = nullptr);

/// Best-improvement hill climbing over single-edit neighborhoods, with random
/// restarts at local optima. Never queries the same hash twice.
SearchTrajectory local_search(BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget,
                              std::uint64_t seed);

/// Pre-sampled candidate universe with precomputed encodings for the
/// predictor-based and latent-neighborhood subroutines.
struct CandidateUniverse {
    std::vector<CellGraph> cells;
    std::vector<EncodingVector> encodings;
    std::vector<std::uint64_t> hashes;

    void validate() const;
};

/// Hill climbing where the neighborhood of a cell is its k nearest unvisited
/// universe entries in latent L2 distance.
SearchTrajectory local_search_latent(BenchmarkOracle& oracle, const CandidateUniverse& universe,
                                     std::size_t budget, std::size_t k, std::uint64_t seed);

// ---- Neural predictors ------------------------------------------------------------

struct PredictorOptions {
    std::size_t hidden = 128;
    std::size_t epochs = 100;
    double learning_rate = 1e-2;
    double weight_decay = 0.0;
    std::uint64_t seed = 17;
};

/// 2-layer MLP regressor (hidden width per options) trained with AdamW for a
/// fixed epoch count on standardized targets.
class MlpRegressor {
public:
    explicit MlpRegressor(PredictorOptions opts = {}) : opts_(opts) {}

    void fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets);
    double predict(const std::vector<double>& input) const;
    std::vector<double> predict_batch(const std::vector<std::vector<double>>& inputs) const;

    /// Last-hidden-layer features (plus a constant 1) of one input.
    std::vector<double> features(const std::vector<double>& input) const;
    std::size_t feature_width() const { return opts_.hidden + 1; }
    double target_mean() const { return y_mean_; }
    double target_std() const { return y_std_; }

private:
    PredictorOptions opts_;
    std::size_t input_width_ = 0;
    std::vector<double> w1_, b1_, w2_, b2_;
    double y_mean_ = 0.0, y_std_ = 1.0;
};

/// Bayesian linear regression posterior over fixed features: weights ~
/// N(0, 1/alpha), observation precision beta. Fitted by Cholesky; a jitter of
/// 1e-8 * mean(diag) is added once if the factorization fails.
struct BlrPosterior {
    std::vector<double> mean;          // feature weights
    std::vector<double> chol;          // lower-triangular factor of A = beta X^T X + alpha I
    double alpha = 1.0, beta = 100.0;
    std::size_t width = 0;

    double predictive_mean(const std::vector<double>& phi) const;
    double predictive_variance(const std::vector<double>& phi) const;
};

BlrPosterior blr_fit(const std::vector<std::vector<double>>& features, const std::vector<double>& targets,
                     double alpha, double beta);

/// Adaptive-basis Bayesian regression: MLP feature extractor plus closed-form
/// Bayesian linear regression on its last hidden layer.
class DngoModel {
public:
    explicit DngoModel(PredictorOptions opts = {}, double alpha = 1.0, double beta = 100.0)
        : mlp_(opts), alpha_(alpha), beta_(beta) {}

    void fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets);

    struct Prediction {
        double mean = 0.0;
        double variance = 0.0;
    };
    Prediction predict(const std::vector<double>& input) const;

private:
    MlpRegressor mlp_;
    BlrPosterior posterior_;
    double alpha_, beta_;
};

double expected_improvement(double mean, double variance, double best);

struct PoolSearchOptions {
    std::size_t initial_pool = 10;
    std::size_t top_k = 5;
    PredictorOptions predictor;
};

/// Plain MLP-predictor subroutine: fit on the pool, query the top-k
/// candidates by predicted accuracy, repeat until the budget is reached.
SearchTrajectory predictor_search(BenchmarkOracle& oracle, const CandidateUniverse& universe,
                                  std::size_t budget, const PoolSearchOptions& opts, std::uint64_t seed);

/// DNGO subroutine: like predictor_search but candidates are ranked by
/// expected improvement under the Bayesian predictive distribution.
SearchTrajectory dngo_search(BenchmarkOracle& oracle, const CandidateUniverse& universe, std::size_t budget,
                             const PoolSearchOptions& opts, std::uint64_t seed);

/// Predictor-guided search interleaved with latent-space local moves: per
/// iteration the top-5 predicted candidates join the pool; with M of them in
/// the pool's true top-5, the other (5-M) incumbent top-5 members contribute
/// their nearest unvisited latent neighbor. Adds between 5 and 10 cells per
/// complete iteration.
SearchTrajectory cate_dngo_ls(BenchmarkOracle& oracle, const CandidateUniverse& universe, std::size_t budget,
                              const PoolSearchOptions& opts, std::uint64_t seed);

}  // namespace cate
