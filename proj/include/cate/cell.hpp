#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cate/rng.hpp"

namespace cate {

/// Ordered operation vocabulary for one search space.
///
/// Layout: input labels first (usually one; two for DARTS-style cells), then
/// the intermediate operation labels, then the output label, then the two
/// training tokens [mask] and [pad]. The training tokens are never legal in a
/// stored cell. Per-label costs back the computational-attribute proxies.
class OpVocab {
public:
    struct Op {
        std::string label;
        double param_cost = 0.0;
        double flops_cost = 0.0;
    };

    OpVocab(std::vector<std::string> input_labels, std::vector<Op> intermediate, std::string output_label);

    /// 7-node style space: input/output plus conv1x1, conv3x3, maxpool3x3
    /// with per-fan-in costs {1,9,0} (params) and {2,18,1} (flops).
    static OpVocab nasbench101_like();
    /// 11-symbol vocabulary of the DARTS-style transformed cell.
    static OpVocab darts_transformed();

    std::size_t size() const { return ops_.size(); }  // includes mask/pad
    std::size_t num_inputs() const { return n_inputs_; }
    std::size_t num_intermediate() const { return n_intermediate_; }
    std::size_t input_id(std::size_t which) const { return which; }
    std::size_t output_id() const { return n_inputs_ + n_intermediate_; }
    std::size_t mask_id() const { return output_id() + 1; }
    std::size_t pad_id() const { return output_id() + 2; }
    bool is_structural(std::size_t id) const { return id < n_inputs_ || id == output_id(); }
    bool is_intermediate(std::size_t id) const { return id >= n_inputs_ && id < output_id(); }

    const std::string& label(std::size_t id) const { return ops_.at(id).label; }
    std::size_t id_of(const std::string& label) const;  // throws on unknown label
    double param_cost(std::size_t id) const { return ops_.at(id).param_cost; }
    double flops_cost(std::size_t id) const { return ops_.at(id).flops_cost; }

    std::vector<std::string> labels() const;
    bool operator==(const OpVocab& other) const;

private:
    std::vector<Op> ops_;
    std::size_t n_inputs_ = 0;
    std::size_t n_intermediate_ = 0;
};

/// Labeled DAG cell: strictly upper-triangular binary adjacency plus one
/// operation id per node. Node 0 is the (first) input, node N-1 the output.
struct CellGraph {
    std::size_t num_nodes = 0;
    std::vector<std::size_t> ops;       // length num_nodes, ids into an OpVocab
    std::vector<std::uint8_t> adjacency;  // row-major num_nodes x num_nodes

    bool edge(std::size_t i, std::size_t j) const { return adjacency[i * num_nodes + j] != 0; }
    void set_edge(std::size_t i, std::size_t j, bool v) { adjacency[i * num_nodes + j] = v ? 1 : 0; }
    std::size_t edge_count() const;
    std::size_t in_degree(std::size_t node) const;
    std::size_t out_degree(std::size_t node) const;

    static CellGraph empty(std::size_t n);
};

enum class AttributeKind { ParamProxy, FlopsProxy };

/// Structural limits and legality rules of one search space.
struct SpaceSpec {
    OpVocab vocab = OpVocab::nasbench101_like();
    std::size_t min_nodes = 3;
    std::size_t max_nodes = 7;
    std::size_t max_edges = 9;
    AttributeKind attribute = AttributeKind::ParamProxy;
    /// DARTS-style transformed cells keep both input nodes even when one has
    /// no outgoing edge; strict single-in-single-out spaces do not allow that.
    bool allow_unused_inputs = false;

    static SpaceSpec nasbench101_like();
    static SpaceSpec darts_transformed();
};

/// Diagnostic validation: returns every violated structural invariant, empty
/// when the cell is valid under the spec.
std::vector<std::string> validate_cell(const CellGraph& cell, const SpaceSpec& spec);
bool is_valid_cell(const CellGraph& cell, const SpaceSpec& spec);

/// Seeded random valid cell. Procedure: node count uniform in
/// [min_nodes, max_nodes]; each intermediate op uniform; each strict
/// upper-triangle edge Bernoulli(1/2); then orphan repair (nodes without a
/// predecessor gain an edge from the input, nodes without a successor an edge
/// to the output, in node order); reject and retry when the edge budget is
/// exceeded. Throws after `max_attempts` rejections.
CellGraph random_cell(const SpaceSpec& spec, Rng& rng, std::size_t max_attempts = 1000);

/// One valid single-edit neighbor (op relabel or edge toggle), uniform over
/// all valid single edits. Throws when no valid neighbor exists.
CellGraph mutate_cell(const CellGraph& cell, const SpaceSpec& spec, Rng& rng);

/// All valid single-edit neighbors, in a deterministic enumeration order.
std::vector<CellGraph> edit_neighbors(const CellGraph& cell, const SpaceSpec& spec);

/// Permute node labels: node i of the result is node perm[i] of the input.
/// The permutation must keep the adjacency strictly upper-triangular.
CellGraph relabel_cell(const CellGraph& cell, const std::vector<std::size_t>& perm);

/// Isomorphism-invariant digest (iterative neighborhood-label hashing seeded
/// with op label and in/out-degree, num_nodes rounds). Stable across runs.
std::uint64_t canonical_hash(const CellGraph& cell);
std::string hash_hex(std::uint64_t digest);

/// Computational attribute: sum over non-structural nodes of the per-op cost
/// for the requested kind, weighted by the node's in-degree.
double compute_attribute(const CellGraph& cell, const OpVocab& vocab, AttributeKind kind);

/// Length (#edges) of the longest input->output path; 0 when only the direct
/// edge exists. Used by the synthetic benchmark.
std::size_t longest_path_length(const CellGraph& cell);

// ---- DARTS-style cell transformation ----------------------------------------

enum class DartsOp : std::size_t {
    MaxPool3x3 = 0,
    AvgPool3x3,
    SkipConnect,
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
};

/// Edge-labeled DARTS-convention cell: two input states and four intermediate
/// nodes, each combining exactly two labeled input edges. `source` indexes
/// 0 = first input state, 1 = second input state, 2+j = intermediate node j.
struct DartsCell {
    struct Edge {
        std::size_t source = 0;
        DartsOp op = DartsOp::MaxPool3x3;
    };
    std::array<std::array<Edge, 2>, 4> edges;
};

/// Node-labeled 15-node DAG for a DARTS cell: every labeled edge A->B becomes
/// a fresh op node P with edges A->P and P->B, each intermediate node gains a
/// summation node, and all summation nodes feed the output. Ops index into
/// OpVocab::darts_transformed(). Throws on malformed input.
CellGraph transform_darts_cell(const DartsCell& cell);

DartsCell random_darts_cell(Rng& rng);

// ---- Batching ----------------------------------------------------------------

/// Padded batch: op ids padded with [pad], adjacency zero-padded, pad mask
/// marking real nodes.
struct CellBatch {
    std::size_t batch = 0;
    std::size_t n_max = 0;
    std::vector<std::size_t> ops;        // batch x n_max
    std::vector<std::uint8_t> adjacency;   // batch x n_max x n_max
    std::vector<std::uint8_t> pad_mask;    // batch x n_max, 1 = real node

    const std::size_t* ops_row(std::size_t b) const { return &ops[b * n_max]; }
    const std::uint8_t* adj_row(std::size_t b) const { return &adjacency[b * n_max * n_max]; }
    const std::uint8_t* pad_row(std::size_t b) const { return &pad_mask[b * n_max]; }
};

CellBatch pad_batch(const std::vector<CellGraph>& cells, std::size_t n_max, const OpVocab& vocab);

// ---- Dataset file -------------------------------------------------------------

/// One line of an architecture dataset file. Serialized as line-delimited
/// JSON objects {"ops": [labels], "adjacency": [upper-triangle bits],
/// "attribute": float?, "accuracy": float?}; adjacency lists the strict upper
/// triangle row-major: (0,1), (0,2), ..., (n-2,n-1).
struct DatasetRecord {
    CellGraph cell;
    std::optional<double> attribute;
    std::optional<double> accuracy;
};

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records, const OpVocab& vocab);
std::vector<DatasetRecord> read_dataset(const std::string& path, const OpVocab& vocab);

}  // namespace cate
