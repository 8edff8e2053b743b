#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cate/cell.hpp"
#include "doctest.h"

using namespace cate;

namespace {

CellGraph chain_cell(const OpVocab& vocab, const std::vector<std::size_t>& middle_ops) {
    CellGraph c = CellGraph::empty(middle_ops.size() + 2);
    c.ops[0] = vocab.input_id(0);
    for (std::size_t i = 0; i < middle_ops.size(); ++i) c.ops[i + 1] = middle_ops[i];
    c.ops[c.num_nodes - 1] = vocab.output_id();
    for (std::size_t i = 0; i + 1 < c.num_nodes; ++i) c.set_edge(i, i + 1, true);
    return c;
}

// Brute-force canonical form: lexicographically smallest (ops, adjacency)
// over all node relabelings that keep the matrix strictly upper-triangular.
// Independent of canonical_hash by construction.
std::string brute_canonical_form(const CellGraph& cell) {
    const std::size_t n = cell.num_nodes;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::string best;
    do {
        bool triangular = true;
        for (std::size_t i = 0; i < n && triangular; ++i) {
            for (std::size_t j = 0; j <= i && triangular; ++j) {
                if (cell.adjacency[perm[i] * n + perm[j]]) triangular = false;
            }
        }
        if (!triangular) continue;
        std::string form;
        for (std::size_t i = 0; i < n; ++i) form.push_back(static_cast<char>('a' + cell.ops[perm[i]]));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                form.push_back(cell.adjacency[perm[i] * n + perm[j]] ? '1' : '0');
        if (best.empty() || form < best) best = form;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Independent re-implementation of the documented random_cell repair step.
void reference_repair(CellGraph& cell, const SpaceSpec& spec) {
    const std::size_t n = cell.num_nodes;
    for (std::size_t j = spec.vocab.num_inputs(); j < n; ++j) {
        if (cell.in_degree(j) == 0) cell.set_edge(0, j, true);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (i < spec.vocab.num_inputs() && spec.allow_unused_inputs) continue;
        if (cell.out_degree(i) == 0) cell.set_edge(i, n - 1, true);
    }
}

// Random topological reordering of a valid cell (preserves triangularity).
std::vector<std::size_t> random_topo_perm(const CellGraph& cell, Rng& rng) {
    const std::size_t n = cell.num_nodes;
    std::vector<std::size_t> remaining_in(n, 0);
    for (std::size_t j = 0; j < n; ++j) remaining_in[j] = cell.in_degree(j);
    std::vector<bool> placed(n, false);
    std::vector<std::size_t> perm;
    while (perm.size() < n) {
        std::vector<std::size_t> ready;
        for (std::size_t j = 0; j < n; ++j) {
            if (!placed[j] && remaining_in[j] == 0) ready.push_back(j);
        }
        const std::size_t pick = ready[rng.below(ready.size())];
        placed[pick] = true;
        perm.push_back(pick);
        for (std::size_t j = 0; j < n; ++j) {
            if (cell.edge(pick, j)) --remaining_in[j];
        }
    }
    return perm;
}

}  // namespace

TEST_CASE("a simple chain passes validation") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    const CellGraph cell = chain_cell(spec.vocab, {spec.vocab.id_of("conv3x3")});
    CHECK(validate_cell(cell, spec).empty());
}

TEST_CASE("an isolated intermediate node is reported as a connectivity violation") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    CellGraph cell = CellGraph::empty(4);
    cell.ops = {spec.vocab.input_id(0), spec.vocab.id_of("conv1x1"), spec.vocab.id_of("conv1x1"),
                spec.vocab.output_id()};
    cell.set_edge(0, 1, true);
    cell.set_edge(1, 3, true);
    // node 2 has no edges at all
    const auto violations = validate_cell(cell, spec);
    REQUIRE(!violations.empty());
    bool connectivity = false;
    for (const auto& v : violations) connectivity = connectivity || v.find("connectivity") != std::string::npos;
    CHECK(connectivity);
}

TEST_CASE("a 7-node cell with 10 edges violates the 9-edge budget") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    CellGraph cell = chain_cell(spec.vocab, std::vector<std::size_t>(5, spec.vocab.id_of("conv1x1")));
    REQUIRE(cell.num_nodes == 7);
    REQUIRE(cell.edge_count() == 6);
    cell.set_edge(0, 2, true);
    cell.set_edge(0, 3, true);
    cell.set_edge(1, 4, true);
    cell.set_edge(2, 6, true);
    REQUIRE(cell.edge_count() == 10);
    const auto violations = validate_cell(cell, spec);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("edges") != std::string::npos);
}

TEST_CASE("random_cell is reproducible per seed and always valid") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    Rng a(123), b(123);
    const CellGraph ca = random_cell(spec, a);
    const CellGraph cb = random_cell(spec, b);
    CHECK(ca.ops == cb.ops);
    CHECK(ca.adjacency == cb.adjacency);

    Rng rng(9001);
    for (int i = 0; i < 10000; ++i) {
        const CellGraph c = random_cell(spec, rng);
        if (!is_valid_cell(c, spec)) {
            CAPTURE(i);
            REQUIRE(validate_cell(c, spec).empty());
        }
    }
}

TEST_CASE("random_cell matches the analytically enumerated distribution of a 4-node space") {
    SpaceSpec spec = SpaceSpec::nasbench101_like();
    spec.min_nodes = 3;
    spec.max_nodes = 4;
    spec.max_edges = 5;  // forces some rejection mass

    // Exhaustive enumeration of the documented procedure: node count uniform
    // on {3,4}, ops uniform, every upper-triangle edge Bernoulli(1/2), repair,
    // reject over-budget samples.
    std::map<std::string, double> expected;
    double accepted_mass = 0.0;
    for (std::size_t n = 3; n <= 4; ++n) {
        const double node_mass = 0.5;
        const std::size_t inter = n - 2;
        const std::size_t op_combos = inter == 1 ? 3 : 9;
        const std::size_t edge_slots = n * (n - 1) / 2;
        for (std::size_t oc = 0; oc < op_combos; ++oc) {
            for (std::size_t bits = 0; bits < (1ULL << edge_slots); ++bits) {
                CellGraph cell = CellGraph::empty(n);
                cell.ops[0] = spec.vocab.input_id(0);
                cell.ops[n - 1] = spec.vocab.output_id();
                std::size_t o = oc;
                for (std::size_t i = 1; i + 1 < n; ++i) {
                    cell.ops[i] = 1 + (o % 3);
                    o /= 3;
                }
                std::size_t b = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) cell.set_edge(i, j, (bits >> b++) & 1);
                }
                reference_repair(cell, spec);
                if (cell.edge_count() > spec.max_edges || !is_valid_cell(cell, spec)) continue;
                const double mass = node_mass / static_cast<double>(op_combos) /
                                    static_cast<double>(1ULL << edge_slots);
                expected[brute_canonical_form(cell)] += mass;
                accepted_mass += mass;
            }
        }
    }
    for (auto& [key, mass] : expected) mass /= accepted_mass;

    const int samples = 10000;
    std::map<std::string, int> observed;
    Rng rng(31337);
    for (int i = 0; i < samples; ++i) observed[brute_canonical_form(random_cell(spec, rng))] += 1;

    for (const auto& [key, count] : observed) CHECK(expected.count(key) == 1);
    for (const auto& [key, p] : expected) {
        const double freq = observed.count(key) ? observed[key] / static_cast<double>(samples) : 0.0;
        const double sigma = std::sqrt(p * (1.0 - p) / samples);
        CAPTURE(key);
        CHECK(std::abs(freq - p) <= 3.0 * sigma + 1e-12);
    }
}

TEST_CASE("mutations are single edits that stay valid and differ from the parent") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    Rng rng(5);
    const CellGraph parent = random_cell(spec, rng);
    int op_edits = 0, edge_edits = 0;
    for (int i = 0; i < 1000; ++i) {
        const CellGraph child = mutate_cell(parent, spec, rng);
        CHECK(is_valid_cell(child, spec));
        CHECK(child.num_nodes == parent.num_nodes);
        std::size_t op_diff = 0;
        for (std::size_t j = 0; j < parent.num_nodes; ++j) op_diff += child.ops[j] != parent.ops[j];
        std::size_t edge_diff = 0;
        for (std::size_t j = 0; j < parent.adjacency.size(); ++j)
            edge_diff += child.adjacency[j] != parent.adjacency[j];
        CHECK(op_diff + edge_diff == 1);
        op_edits += op_diff == 1;
        edge_edits += edge_diff == 1;
    }
    CHECK(op_edits > 0);
    CHECK(edge_edits > 0);
}

TEST_CASE("mutate_cell reports when no valid neighbor exists") {
    SpaceSpec spec = SpaceSpec::nasbench101_like();
    spec.max_nodes = 2;
    spec.min_nodes = 2;
    spec.max_edges = 1;
    CellGraph cell = CellGraph::empty(2);
    cell.ops = {spec.vocab.input_id(0), spec.vocab.output_id()};
    cell.set_edge(0, 1, true);
    Rng rng(1);
    CHECK_THROWS_AS(mutate_cell(cell, spec, rng), std::runtime_error);
}

TEST_CASE("canonical hash is invariant under relabelings of a diamond cell") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    CellGraph cell = CellGraph::empty(4);
    cell.ops = {spec.vocab.input_id(0), spec.vocab.id_of("conv1x1"), spec.vocab.id_of("conv3x3"),
                spec.vocab.output_id()};
    cell.set_edge(0, 1, true);
    cell.set_edge(0, 2, true);
    cell.set_edge(1, 3, true);
    cell.set_edge(2, 3, true);
    const CellGraph swapped = relabel_cell(cell, {0, 2, 1, 3});
    CHECK(swapped.ops != cell.ops);
    CHECK(canonical_hash(swapped) == canonical_hash(cell));

    CellGraph relabeled = cell;
    relabeled.ops[1] = spec.vocab.id_of("maxpool3x3");
    CHECK(canonical_hash(relabeled) != canonical_hash(cell));
}

TEST_CASE("digest equality classes match brute-force isomorphism classes on all cells up to 5 nodes") {
    SpaceSpec spec = SpaceSpec::nasbench101_like();
    spec.max_nodes = 5;
    spec.max_edges = 10;
    std::map<std::string, std::set<std::uint64_t>> by_form;
    std::map<std::uint64_t, std::set<std::string>> by_digest;
    for (std::size_t n = 3; n <= 5; ++n) {
        const std::size_t inter = n - 2;
        std::size_t op_combos = 1;
        for (std::size_t i = 0; i < inter; ++i) op_combos *= 3;
        const std::size_t edge_slots = n * (n - 1) / 2;
        for (std::size_t oc = 0; oc < op_combos; ++oc) {
            for (std::size_t bits = 0; bits < (1ULL << edge_slots); ++bits) {
                CellGraph cell = CellGraph::empty(n);
                cell.ops[0] = spec.vocab.input_id(0);
                cell.ops[n - 1] = spec.vocab.output_id();
                std::size_t o = oc;
                for (std::size_t i = 1; i + 1 < n; ++i) {
                    cell.ops[i] = 1 + (o % 3);
                    o /= 3;
                }
                std::size_t b = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) cell.set_edge(i, j, (bits >> b++) & 1);
                }
                if (!is_valid_cell(cell, spec)) continue;
                by_form[brute_canonical_form(cell)].insert(canonical_hash(cell));
                by_digest[canonical_hash(cell)].insert(brute_canonical_form(cell));
            }
        }
    }
    REQUIRE(by_form.size() > 100);
    for (const auto& [form, digests] : by_form) CHECK(digests.size() == 1);
    for (const auto& [digest, forms] : by_digest) CHECK(forms.size() == 1);
}

TEST_CASE("canonical hash and attribute are invariant under random topological relabelings") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const CellGraph cell = random_cell(spec, rng);
        const auto perm = random_topo_perm(cell, rng);
        const CellGraph relabeled = relabel_cell(cell, perm);
        CHECK(is_valid_cell(relabeled, spec));
        CHECK(canonical_hash(relabeled) == canonical_hash(cell));
        CHECK(compute_attribute(relabeled, spec.vocab, AttributeKind::ParamProxy) ==
              compute_attribute(cell, spec.vocab, AttributeKind::ParamProxy));
        CHECK(compute_attribute(relabeled, spec.vocab, AttributeKind::FlopsProxy) ==
              compute_attribute(cell, spec.vocab, AttributeKind::FlopsProxy));
    }
}

TEST_CASE("attribute of a cell with no intermediate nodes is zero") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    CellGraph cell = CellGraph::empty(2);
    cell.ops = {vocab.input_id(0), vocab.output_id()};
    cell.set_edge(0, 1, true);
    CHECK(compute_attribute(cell, vocab, AttributeKind::ParamProxy) == 0.0);
    CHECK(compute_attribute(cell, vocab, AttributeKind::FlopsProxy) == 0.0);
}

TEST_CASE("adding a conv3x3 node strictly increases the parameter proxy") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    const CellGraph small = chain_cell(vocab, {vocab.id_of("conv1x1")});
    const CellGraph bigger = chain_cell(vocab, {vocab.id_of("conv1x1"), vocab.id_of("conv3x3")});
    CHECK(compute_attribute(bigger, vocab, AttributeKind::ParamProxy) >
          compute_attribute(small, vocab, AttributeKind::ParamProxy));
}

TEST_CASE("attribute of a fixed 7-node cell equals the hand-summed cost table") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    CellGraph cell = chain_cell(vocab, {vocab.id_of("conv3x3"), vocab.id_of("conv1x1"),
                                        vocab.id_of("maxpool3x3"), vocab.id_of("conv3x3"),
                                        vocab.id_of("conv1x1")});
    cell.set_edge(0, 2, true);  // conv1x1 node now has fan-in 2
    cell.set_edge(1, 4, true);  // second conv3x3 node now has fan-in 2
    cell.set_edge(0, 6, true);
    // params: conv3x3*1 + conv1x1*2 + maxpool*1 + conv3x3*2 + conv1x1*1
    CHECK(compute_attribute(cell, vocab, AttributeKind::ParamProxy) ==
          doctest::Approx(9.0 * 1 + 1.0 * 2 + 0.0 * 1 + 9.0 * 2 + 1.0 * 1));
    // flops: 18*1 + 2*2 + 1*1 + 18*2 + 2*1
    CHECK(compute_attribute(cell, vocab, AttributeKind::FlopsProxy) ==
          doctest::Approx(18.0 + 4.0 + 1.0 + 36.0 + 2.0));
}

TEST_CASE("darts transformation yields the 15-node, 11-symbol layout") {
    Rng rng(3);
    const OpVocab vocab = OpVocab::darts_transformed();
    const SpaceSpec spec = SpaceSpec::darts_transformed();
    for (int trial = 0; trial < 200; ++trial) {
        const DartsCell darts = random_darts_cell(rng);
        const CellGraph cell = transform_darts_cell(darts);
        REQUIRE(cell.num_nodes == 15);
        REQUIRE(cell.adjacency.size() == 15 * 15);
        CHECK(validate_cell(cell, spec).empty());
        // Operation matrix is 15 x 11: every op id falls inside the 11 symbols.
        for (const auto op : cell.ops) CHECK(op < 11);
        CHECK(cell.edge_count() == 20);
    }
    // 2 inputs + 8 op nodes + 4 sums + 1 output.
    const CellGraph cell = transform_darts_cell(random_darts_cell(rng));
    std::size_t sums = 0;
    for (const auto op : cell.ops) sums += op == vocab.id_of("sum");
    CHECK(sums == 4);
}

TEST_CASE("a labeled darts edge becomes a two-edge chain through a fresh op node") {
    DartsCell darts;
    for (std::size_t j = 0; j < 4; ++j) {
        darts.edges[j][0] = {0, DartsOp::SkipConnect};
        darts.edges[j][1] = {1, DartsOp::SkipConnect};
    }
    darts.edges[1][0] = {2, DartsOp::SepConv5x5};  // intermediate 0 -> intermediate 1
    const CellGraph cell = transform_darts_cell(darts);
    const OpVocab vocab = OpVocab::darts_transformed();
    // Intermediate 0's sum node is node 4; intermediate 1's first op node is 5.
    CHECK(cell.edge(4, 5));
    CHECK(cell.edge(5, 7));  // op node feeds intermediate 1's sum node
    CHECK(cell.ops[5] == vocab.id_of("sep-conv-5x5"));
}

TEST_CASE("malformed darts cells are rejected") {
    DartsCell darts;
    for (std::size_t j = 0; j < 4; ++j) {
        darts.edges[j][0] = {0, DartsOp::SkipConnect};
        darts.edges[j][1] = {1, DartsOp::SkipConnect};
    }
    darts.edges[0][0].source = 3;  // references a later state
    CHECK_THROWS_AS(transform_darts_cell(darts), std::invalid_argument);
}

TEST_CASE("pad_batch pads ops, adjacency and the pad mask") {
    const OpVocab vocab = OpVocab::nasbench101_like();
    const CellGraph small = chain_cell(vocab, {vocab.id_of("conv1x1")});
    const CellBatch batch = pad_batch({small}, 7, vocab);
    REQUIRE(batch.n_max == 7);
    const std::vector<std::uint8_t> expected_pad{1, 1, 1, 0, 0, 0, 0};
    CHECK(std::vector<std::uint8_t>(batch.pad_row(0), batch.pad_row(0) + 7) == expected_pad);
    for (std::size_t i = 3; i < 7; ++i) CHECK(batch.ops_row(0)[i] == vocab.pad_id());

    const CellBatch same = pad_batch({small, small}, 3, vocab);
    for (std::size_t i = 0; i < 6; ++i) CHECK(same.pad_mask[i] == 1);

    CHECK_THROWS_AS(pad_batch({small}, 2, vocab), std::invalid_argument);
}

TEST_CASE("dataset files round-trip exactly") {
    const SpaceSpec spec = SpaceSpec::nasbench101_like();
    Rng rng(21);
    std::vector<DatasetRecord> records;
    for (int i = 0; i < 50; ++i) {
        DatasetRecord rec;
        rec.cell = random_cell(spec, rng);
        rec.attribute = compute_attribute(rec.cell, spec.vocab, spec.attribute);
        if (i % 3 == 0) rec.accuracy = rng.uniform();
        records.push_back(std::move(rec));
    }
    const std::string path = "test_dataset_roundtrip.jsonl";
    write_dataset(path, records, spec.vocab);
    const auto loaded = read_dataset(path, spec.vocab);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].cell.ops == records[i].cell.ops);
        CHECK(loaded[i].cell.adjacency == records[i].cell.adjacency);
        CHECK(loaded[i].attribute == records[i].attribute);
        CHECK(loaded[i].accuracy == records[i].accuracy);
    }
    std::remove(path.c_str());
}
