#include "cate/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace cate {

void PairSampleConfig::validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("pair config: delta must be > 0");
    if (partners < 1) throw std::invalid_argument("pair config: partners (K) must be >= 1");
    if (!(split > 0.0 && split < 1.0)) throw std::invalid_argument("pair config: split must lie in (0,1)");
}

void CorruptionConfig::validate() const {
    if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("corruption config: rate must lie in (0,1)");
    if (mask_fraction < 0.0 || random_fraction < 0.0 ||
        std::abs(mask_fraction + random_fraction - 1.0) > 1e-12)
        throw std::invalid_argument("corruption config: mask and random fractions must sum to 1");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.epochs = 10;
    c.batch_size = 1024;
    c.learning_rate = 1e-3;
    c.beta1 = 0.9;
    c.beta2 = 0.999;
    c.weight_decay = 0.01;
    return c;
}

std::vector<IndexPair> sample_pairs(const std::vector<double>& attributes, const PairSampleConfig& config,
                                    Rng& rng, std::size_t* skipped) {
    config.validate();
    const std::size_t n = attributes.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (attributes[a] != attributes[b]) return attributes[a] < attributes[b];
        return a < b;  // deterministic tie-break
    });

    std::vector<IndexPair> pairs;
    pairs.reserve(n * config.partners);
    std::size_t empty_neighborhoods = 0;
    std::size_t lo = 0, hi = 0;
    for (std::size_t a = 0; a < n; ++a) {
        const double center = attributes[order[a]];
        while (lo < n && !(center - attributes[order[lo]] < config.delta)) ++lo;
        if (hi < a + 1) hi = a + 1;
        while (hi < n && attributes[order[hi]] - center < config.delta) ++hi;
        const std::size_t window = hi - lo;  // includes the anchor itself
        if (window <= 1) {
            ++empty_neighborhoods;
            continue;
        }
        const std::size_t take = std::min<std::size_t>(config.partners, window - 1);
        for (const std::size_t pick : rng.sample_distinct(window - 1, take)) {
            // Window positions, skipping the anchor slot.
            const std::size_t pos = lo + pick + (lo + pick >= a ? 1 : 0);
            pairs.push_back({order[a], order[pos]});
        }
    }
    if (skipped) *skipped = empty_neighborhoods;
    return pairs;
}

std::optional<CorruptedCell> corrupt_cell(const CellGraph& cell, const OpVocab& vocab,
                                          const CorruptionConfig& config, Rng& rng) {
    config.validate();
    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < cell.num_nodes; ++i) {
        if (vocab.is_intermediate(cell.ops[i])) maskable.push_back(i);
    }
    if (maskable.empty()) return std::nullopt;

    const std::size_t k = static_cast<std::size_t>(
        std::ceil(config.rate * static_cast<double>(maskable.size())));
    CorruptedCell out;
    out.ops = cell.ops;
    const auto picks = rng.sample_distinct(maskable.size(), std::min(k, maskable.size()));
    for (const auto p : picks) out.positions.push_back(maskable[p]);
    // round-half-up on the [mask] share; picks are already in random order,
    // so the first n_mask selected positions take the [mask] token.
    const std::size_t n_mask = static_cast<std::size_t>(
        std::floor(config.mask_fraction * static_cast<double>(out.positions.size()) + 0.5));
    for (std::size_t i = 0; i < out.positions.size(); ++i) {
        const std::size_t pos = out.positions[i];
        out.originals.push_back(cell.ops[pos]);
        if (i < n_mask) {
            out.ops[pos] = vocab.mask_id();
        } else {
            // uniformly random legal op != original
            const std::size_t original_offset = cell.ops[pos] - vocab.num_inputs();
            std::size_t draw = rng.below(vocab.num_intermediate() - 1);
            if (draw >= original_offset) ++draw;
            out.ops[pos] = vocab.num_inputs() + draw;
        }
    }
    return out;
}

PairExample make_corrupted_pair(const CellGraph& x, const CellGraph& y, const OpVocab& vocab,
                                std::size_t n_max, const CorruptionConfig& config, Rng& rng) {
    const auto cx = corrupt_cell(x, vocab, config, rng);
    const auto cy = corrupt_cell(y, vocab, config, rng);
    if (!cx || !cy) throw std::invalid_argument("make_corrupted_pair: cell with no maskable node");

    CellGraph xc = x, yc = y;
    xc.ops = cx->ops;
    yc.ops = cy->ops;
    const CellBatch bx = pad_batch({xc}, n_max, vocab);
    const CellBatch by = pad_batch({yc}, n_max, vocab);
    PairExample ex;
    ex.n = n_max;
    ex.ops_x.assign(bx.ops_row(0), bx.ops_row(0) + n_max);
    ex.ops_y.assign(by.ops_row(0), by.ops_row(0) + n_max);
    ex.adj_x.assign(bx.adj_row(0), bx.adj_row(0) + n_max * n_max);
    ex.adj_y.assign(by.adj_row(0), by.adj_row(0) + n_max * n_max);
    ex.pad_x.assign(bx.pad_row(0), bx.pad_row(0) + n_max);
    ex.pad_y.assign(by.pad_row(0), by.pad_row(0) + n_max);
    for (std::size_t i = 0; i < cx->positions.size(); ++i) {
        ex.positions.push_back(cx->positions[i]);
        ex.targets.push_back(cx->originals[i]);
    }
    for (std::size_t i = 0; i < cy->positions.size(); ++i) {
        ex.positions.push_back(n_max + cy->positions[i]);
        ex.targets.push_back(cy->originals[i]);
    }
    return ex;
}

double masked_accuracy(const EncoderWeights& weights, const std::vector<PairExample>& examples) {
    Tape::NoGrad pause(weights.tape());
    std::size_t correct = 0, total = 0;
    for (const auto& ex : examples) {
        const MlmResult res = mlm_forward_loss(weights, ex, weights.config().mask);
        const std::size_t v = weights.config().vocab_size;
        for (std::size_t r = 0; r < ex.positions.size(); ++r) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < v; ++j) {
                if (res.logits.at(r, j) > res.logits.at(r, best)) best = j;
            }
            correct += best == ex.targets[r];
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

PretrainResult pretrain(const std::vector<DatasetRecord>& dataset, const SpaceSpec& space,
                        const EncoderConfig& encoder_config, const PairSampleConfig& pair_config,
                        const CorruptionConfig& corruption_config, const TrainConfig& train_config) {
    pair_config.validate();
    corruption_config.validate();
    train_config.validate();
    if (dataset.size() < 4) throw std::invalid_argument("pretrain: dataset too small");
    for (const auto& rec : dataset) {
        if (!rec.attribute) throw std::invalid_argument("pretrain: dataset record without attribute");
    }

    Rng root(train_config.seed);
    // Seeded shuffle, then split into train and held-out parts.
    std::vector<std::size_t> index(dataset.size());
    std::iota(index.begin(), index.end(), 0);
    root.shuffle(index);
    const std::size_t n_train = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::floor(pair_config.split * static_cast<double>(dataset.size()))));
    std::vector<const DatasetRecord*> train, heldout;
    for (std::size_t i = 0; i < index.size(); ++i) {
        (i < n_train ? train : heldout).push_back(&dataset[index[i]]);
    }
    std::vector<double> train_attr, heldout_attr;
    for (const auto* r : train) train_attr.push_back(*r->attribute);
    for (const auto* r : heldout) heldout_attr.push_back(*r->attribute);

    PretrainResult result{EncoderWeights(encoder_config, space.vocab, root.next()), {}, 0, false,
                          train.size(), heldout.size()};
    EncoderWeights& weights = result.weights;

    // Fixed held-out evaluation set: pairs sampled and corrupted once.
    std::vector<PairExample> eval_examples;
    {
        Rng eval_rng = root.fork(0xE7A1);
        const auto eval_pairs = sample_pairs(heldout_attr, pair_config, eval_rng);
        for (const auto& pr : eval_pairs) {
            eval_examples.push_back(make_corrupted_pair(heldout[pr.x]->cell, heldout[pr.y]->cell, space.vocab,
                                                        encoder_config.max_nodes, corruption_config, eval_rng));
        }
    }

    AdamWOptions opts;
    opts.learning_rate = train_config.learning_rate;
    opts.beta1 = train_config.beta1;
    opts.beta2 = train_config.beta2;
    opts.weight_decay = train_config.weight_decay;
    AdamW optimizer(opts);

    auto snapshot = weights.snapshot();
    double best_acc = -1.0;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = 0; epoch < train_config.epochs; ++epoch) {
        Rng erng = root.fork(1000 + epoch);
        auto pairs = sample_pairs(train_attr, pair_config, erng);
        erng.shuffle(pairs);

        double loss_sum = 0.0;
        std::size_t loss_batches = 0;
        bool nan_hit = false;
        for (std::size_t start = 0; start < pairs.size() && !nan_hit; start += train_config.batch_size) {
            const std::size_t stop = std::min(pairs.size(), start + train_config.batch_size);
            optimizer.zero_grad(weights.params());
            weights.tape().clear();
            Tensor batch_sum;
            std::size_t batch_count = 0;
            for (std::size_t p = start; p < stop; ++p) {
                PairExample ex;
                try {
                    ex = make_corrupted_pair(train[pairs[p].x]->cell, train[pairs[p].y]->cell, space.vocab,
                                             encoder_config.max_nodes, corruption_config, erng);
                } catch (const std::invalid_argument&) {
                    continue;  // cells without maskable nodes are skipped
                }
                Tensor joint = joint_hidden(weights, ex, encoder_config.mask);
                Tensor selected = gather_rows(joint, ex.positions);
                Tensor logits = add_rowvec(matmul(selected, weights.mlm_w()), weights.mlm_b());
                Tensor pair_sum = cross_entropy_loss(logits, ex.targets, {}, Reduction::Sum);
                batch_sum = batch_count == 0 ? pair_sum : add(batch_sum, pair_sum);
                batch_count += ex.positions.size();
            }
            if (batch_count == 0) continue;
            Tensor loss = scale(batch_sum, 1.0 / static_cast<double>(batch_count));
            const double loss_value = loss.scalar();
            if (!std::isfinite(loss_value)) {
                nan_hit = true;
                break;
            }
            weights.tape().backward(loss);
            optimizer.step(weights.params());
            loss_sum += loss_value;
            ++loss_batches;
        }
        weights.tape().clear();

        if (nan_hit) {
            result.aborted_nan = true;
            break;
        }

        EpochMetrics m;
        m.epoch = epoch + 1;
        m.train_loss = loss_batches == 0 ? 0.0 : loss_sum / static_cast<double>(loss_batches);
        m.heldout_masked_acc = masked_accuracy(weights, eval_examples);
        m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(m);

        if (m.heldout_masked_acc > best_acc) {
            best_acc = m.heldout_masked_acc;
            snapshot = weights.snapshot();
            result.best_epoch = m.epoch;
        }
    }

    weights.restore(snapshot);
    return result;
}

void write_metrics(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics: cannot open '" + path + "'");
    for (const auto& m : metrics) {
        nlohmann::ordered_json j;
        j["epoch"] = m.epoch;
        j["train_loss"] = m.train_loss;
        j["heldout_masked_acc"] = m.heldout_masked_acc;
        j["wall_time_s"] = m.wall_time_s;
        out << j.dump() << "\n";
    }
}

}  // namespace cate
