#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cate/cell.hpp"
#include "cate/encoder.hpp"

namespace cate {

/// Computationally-similar pair sampling parameters. The neighborhood of an
/// anchor x is r(x) = { y : |attr(x) - attr(y)| < delta }.
struct PairSampleConfig {
    double delta = 1.0;
    std::size_t partners = 2;  // K distinct partners per anchor
    double split = 0.95;       // train fraction of the dataset

    void validate() const;
};

/// Masked-operator corruption parameters: `rate` of the maskable (non-input,
/// non-output, non-pad) nodes are selected per cell; of the selected,
/// round-half-up(mask_fraction * k) become [mask] and the rest become a
/// uniformly random legal op different from the original.
struct CorruptionConfig {
    double rate = 0.20;
    double mask_fraction = 0.80;
    double random_fraction = 0.20;

    void validate() const;
};

struct IndexPair {
    std::size_t x = 0;
    std::size_t y = 0;
};

/// Sliding-window pair sampling over the attribute-sorted dataset. For each
/// anchor, up to K distinct partners are drawn uniformly without replacement
/// from its neighborhood (anchors with smaller neighborhoods contribute all
/// available partners; empty neighborhoods contribute none and are counted in
/// `skipped`). Total work is O(n log n + n K).
std::vector<IndexPair> sample_pairs(const std::vector<double>& attributes, const PairSampleConfig& config,
                                    Rng& rng, std::size_t* skipped = nullptr);

struct CorruptedCell {
    std::vector<std::size_t> ops;        // with [mask]/random replacements applied
    std::vector<std::size_t> positions;  // corrupted node indices
    std::vector<std::size_t> originals;  // original op ids at those indices
};

/// Corrupt one cell. Returns nullopt (skip) when the cell has no maskable
/// node. Structural tokens are never selected.
std::optional<CorruptedCell> corrupt_cell(const CellGraph& cell, const OpVocab& vocab,
                                          const CorruptionConfig& config, Rng& rng);

/// Corrupted, padded pair ready for the joint encoder.
PairExample make_corrupted_pair(const CellGraph& x, const CellGraph& y, const OpVocab& vocab,
                                std::size_t n_max, const CorruptionConfig& config, Rng& rng);

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    std::uint64_t seed = 1;

    /// Reference full-scale settings: 10 epochs, batch 1024, lr 1e-3,
    /// betas (0.9, 0.999), weight decay 0.01.
    static TrainConfig full_scale();
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double heldout_masked_acc = 0.0;
    double wall_time_s = 0.0;
};

struct PretrainResult {
    EncoderWeights weights;  // best held-out checkpoint
    std::vector<EpochMetrics> metrics;
    std::size_t best_epoch = 0;
    bool aborted_nan = false;
    std::size_t train_cells = 0;
    std::size_t heldout_cells = 0;
};

/// Masked-operator pre-training over an architecture dataset. The dataset is
/// seed-shuffled and split into train/held-out per config; pairs are
/// resampled every epoch, corrupted, batched, and optimized with AdamW. The
/// held-out metric is masked-operator accuracy on a fixed evaluation set of
/// corrupted held-out pairs. Divergence (non-finite loss) aborts with the
/// last good checkpoint.
PretrainResult pretrain(const std::vector<DatasetRecord>& dataset, const SpaceSpec& space,
                        const EncoderConfig& encoder_config, const PairSampleConfig& pair_config,
                        const CorruptionConfig& corruption_config, const TrainConfig& train_config);

/// Masked-operator argmax accuracy of the weights on a fixed example set.
double masked_accuracy(const EncoderWeights& weights, const std::vector<PairExample>& examples);

void write_metrics(const std::string& path, const std::vector<EpochMetrics>& metrics);

}  // namespace cate
