#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cate/pretrain.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cate;

namespace {

SpaceSpec nb101() { return SpaceSpec::nasbench101_like(); }

std::vector<DatasetRecord> synthetic_dataset(const SpaceSpec& spec, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<DatasetRecord> data;
    std::set<std::uint64_t> seen;
    while (data.size() < count) {
        CellGraph cell = random_cell(spec, rng);
        if (!seen.insert(canonical_hash(cell)).second) continue;
        DatasetRecord rec;
        rec.cell = std::move(cell);
        rec.attribute = compute_attribute(rec.cell, spec.vocab, spec.attribute);
        data.push_back(std::move(rec));
    }
    return data;
}

// Synthetic wide cell with the requested number of maskable nodes.
CellGraph wide_cell(const OpVocab& vocab, std::size_t maskable) {
    CellGraph cell = CellGraph::empty(maskable + 2);
    cell.ops[0] = vocab.input_id(0);
    cell.ops[maskable + 1] = vocab.output_id();
    for (std::size_t i = 1; i <= maskable; ++i) {
        cell.ops[i] = vocab.num_inputs() + (i % vocab.num_intermediate());
        cell.set_edge(0, i, true);
        cell.set_edge(i, maskable + 1, true);
    }
    return cell;
}

}  // namespace

TEST_CASE("pair sampling respects the neighborhood definition") {
    const std::vector<double> attrs{1.0, 2.0, 3.0, 10.0};
    PairSampleConfig cfg;
    cfg.delta = 2.0;
    cfg.partners = 1;
    Rng rng(4);
    std::size_t skipped = 0;
    const auto pairs = sample_pairs(attrs, cfg, rng, &skipped);
    // anchor 1.0 can only pair with 2.0 (|1-3| = 2 is not < 2)
    for (const auto& p : pairs) {
        CHECK(std::abs(attrs[p.x] - attrs[p.y]) < cfg.delta);
        if (attrs[p.x] == 1.0) CHECK(attrs[p.y] == 2.0);
        CHECK(attrs[p.x] != 10.0);  // anchor 10 has an empty neighborhood
    }
    CHECK(skipped == 1);
    CHECK(pairs.size() <= cfg.partners * attrs.size());
}

TEST_CASE("full-scale defaults carry the reference pairing and training settings") {
    // Full-scale run settings: delta 2e6 with K = 2 pairs per anchor, and
    // 10 epochs at batch 1024 with learning rate 1e-3.
    PairSampleConfig pairs;
    pairs.delta = 2e6;
    pairs.partners = 2;
    CHECK_NOTHROW(pairs.validate());
    const TrainConfig train = TrainConfig::full_scale();
    CHECK(train.epochs == 10);
    CHECK(train.batch_size == 1024);
    CHECK(train.learning_rate == 1e-3);
    CHECK(train.beta1 == 0.9);
    CHECK(train.beta2 == 0.999);
    CHECK(train.weight_decay == 0.01);
}

TEST_CASE("emitted pairs are a subset of the brute-force neighborhood relation") {
    const SpaceSpec spec = nb101();
    const auto data = synthetic_dataset(spec, 500, 99);
    std::vector<double> attrs;
    for (const auto& rec : data) attrs.push_back(*rec.attribute);
    PairSampleConfig cfg;
    cfg.delta = 3.0;
    cfg.partners = 2;
    Rng rng(5);
    const auto pairs = sample_pairs(attrs, cfg, rng);
    std::vector<std::size_t> per_anchor(attrs.size(), 0);
    for (const auto& p : pairs) {
        CHECK(p.x != p.y);
        CHECK(std::abs(attrs[p.x] - attrs[p.y]) < cfg.delta);  // brute-force O(n^2) relation
        ++per_anchor[p.x];
    }
    for (const auto count : per_anchor) CHECK(count <= cfg.partners);
    // No pair may repeat a partner for the same anchor.
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& p : pairs) CHECK(seen.insert({p.x, p.y}).second);
}

TEST_CASE("corruption selects ceil(rate * maskable) positions with round-half-up mask share") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    const CellGraph cell = wide_cell(vocab, 10);
    CorruptionConfig cfg;
    Rng rng(8);
    const auto res = corrupt_cell(cell, vocab, cfg, rng);
    REQUIRE(res.has_value());
    CHECK(res->positions.size() == 2);  // ceil(0.2 * 10)
    std::size_t masked = 0;
    for (const auto pos : res->positions) masked += res->ops[pos] == vocab.mask_id();
    CHECK(masked == 2);  // round(0.8 * 2) = 2 under round-half-up
}

TEST_CASE("corruption is reproducible per seed and never touches structural nodes") {
    const SpaceSpec spec = nb101();
    Rng cells(77);
    CorruptionConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const CellGraph cell = random_cell(spec, cells);
        Rng a(trial), b(trial);
        const auto ra = corrupt_cell(cell, spec.vocab, cfg, a);
        const auto rb = corrupt_cell(cell, spec.vocab, cfg, b);
        REQUIRE(ra.has_value());
        CHECK(ra->ops == rb->ops);
        CHECK(ra->positions == rb->positions);
        for (const auto pos : ra->positions) {
            CHECK(pos > 0);
            CHECK(pos < cell.num_nodes - 1);
            CHECK(spec.vocab.is_intermediate(cell.ops[pos]));
        }
        // Corrupted cells remain valid when [mask] counts as a wildcard op.
        CellGraph corrupted = cell;
        corrupted.ops = ra->ops;
        for (auto& op : corrupted.ops) {
            if (op == spec.vocab.mask_id()) op = spec.vocab.num_inputs();  // wildcard stand-in
        }
        CHECK(is_valid_cell(corrupted, spec));
    }
}

TEST_CASE("random replacements keep the original op as the prediction target") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    const CellGraph cell = wide_cell(vocab, 15);  // k = 3 -> 2 masks + 1 random
    CorruptionConfig cfg;
    Rng rng(123);
    const auto res = corrupt_cell(cell, vocab, cfg, rng);
    REQUIRE(res.has_value());
    REQUIRE(res->positions.size() == 3);
    std::size_t masked = 0, randomized = 0;
    for (std::size_t i = 0; i < res->positions.size(); ++i) {
        const auto pos = res->positions[i];
        CHECK(res->originals[i] == cell.ops[pos]);  // target is the original op
        if (res->ops[pos] == vocab.mask_id()) {
            ++masked;
        } else {
            ++randomized;
            CHECK(res->ops[pos] != cell.ops[pos]);  // random token differs from the original
            CHECK(vocab.is_intermediate(res->ops[pos]));
        }
    }
    CHECK(masked == 2);
    CHECK(randomized == 1);
}

TEST_CASE("the realized mask share over many corruptions is 0.80 within 0.01") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    CorruptionConfig cfg;
    Rng rng(31415);
    std::size_t selected = 0, masked = 0, corruptions = 0;
    // Maskable counts are multiples of five, so the round-half-up share is
    // exactly achievable; the tally checks the 80/20 split is applied.
    while (corruptions < 100000) {
        const std::size_t maskable = (1 + rng.below(4)) * 5;
        const auto res = corrupt_cell(wide_cell(vocab, maskable), vocab, cfg, rng);
        REQUIRE(res.has_value());
        for (const auto pos : res->positions) masked += res->ops[pos] == vocab.mask_id();
        selected += res->positions.size();
        ++corruptions;
    }
    const double share = static_cast<double>(masked) / static_cast<double>(selected);
    CHECK(std::abs(share - 0.80) <= 0.01);
}

TEST_CASE("a cell with no maskable node is skipped") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    CellGraph cell = CellGraph::empty(2);
    cell.ops = {vocab.input_id(0), vocab.output_id()};
    cell.set_edge(0, 1, true);
    CorruptionConfig cfg;
    Rng rng(1);
    CHECK(!corrupt_cell(cell, vocab, cfg, rng).has_value());
}

TEST_CASE("a tiny pretraining run learns: epoch-one loss beats the untrained loss") {
    const SpaceSpec spec = nb101();
    const auto data = synthetic_dataset(spec, 300, 11);
    EncoderConfig ec;
    ec.blocks = 2;
    ec.cross_blocks = 2;
    ec.heads = 2;
    ec.hidden = 16;
    ec.cross_hidden = 16;
    ec.ff = 24;
    ec.vocab_size = spec.vocab.size();
    ec.max_nodes = spec.max_nodes;
    PairSampleConfig pc;
    pc.delta = 1.0;
    pc.partners = 2;
    CorruptionConfig cc;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.seed = 21;
    const auto result = pretrain(data, spec, ec, pc, cc, tc);
    REQUIRE(result.metrics.size() == 2);
    CHECK(result.metrics[0].train_loss < std::log(static_cast<double>(spec.vocab.size())) + 0.3);
    CHECK(result.metrics[1].train_loss < result.metrics[0].train_loss);
    CHECK(result.train_cells + result.heldout_cells == data.size());
    CHECK(!result.aborted_nan);

    // Metrics file format: one record per epoch with the four fields.
    const std::string path = "test_metrics.jsonl";
    write_metrics(path, result.metrics);
    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("epoch"));
        CHECK(j.contains("train_loss"));
        CHECK(j.contains("heldout_masked_acc"));
        CHECK(j.contains("wall_time_s"));
        ++lines;
    }
    CHECK(lines == 2);
    std::remove(path.c_str());
}
