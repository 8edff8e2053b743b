#include "cate/cell.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
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

std::uint64_t combine(std::uint64_t h, std::uint64_t x) { return mix64(h ^ (x + 0x9e3779b97f4a7c15ULL)); }

}  // namespace

// ---- OpVocab ------------------------------------------------------------------

OpVocab::OpVocab(std::vector<std::string> input_labels, std::vector<Op> intermediate, std::string output_label)
    : n_inputs_(input_labels.size()), n_intermediate_(intermediate.size()) {
    if (input_labels.empty()) throw std::invalid_argument("OpVocab: at least one input label required");
    if (intermediate.empty()) throw std::invalid_argument("OpVocab: at least one intermediate op required");
    for (const auto& l : input_labels) ops_.push_back({l, 0.0, 0.0});
    for (auto& op : intermediate) ops_.push_back(std::move(op));
    ops_.push_back({std::move(output_label), 0.0, 0.0});
    ops_.push_back({"[mask]", 0.0, 0.0});
    ops_.push_back({"[pad]", 0.0, 0.0});
    for (std::size_t i = 0; i < ops_.size(); ++i) {
        for (std::size_t j = i + 1; j < ops_.size(); ++j) {
            if (ops_[i].label == ops_[j].label)
                throw std::invalid_argument("OpVocab: duplicate label '" + ops_[i].label + "'");
        }
    }
}

OpVocab OpVocab::nasbench101_like() {
    return OpVocab({"input"},
                   {{"conv1x1", 1.0, 2.0}, {"conv3x3", 9.0, 18.0}, {"maxpool3x3", 0.0, 1.0}},
                   "output");
}

OpVocab OpVocab::darts_transformed() {
    return OpVocab({"c_k-2", "c_k-1"},
                   {{"max-pool-3x3", 0.0, 1.0},
                    {"avg-pool-3x3", 0.0, 1.0},
                    {"skip-connect", 0.0, 0.0},
                    {"sep-conv-3x3", 2.0, 4.0},
                    {"sep-conv-5x5", 4.0, 8.0},
                    {"dil-conv-3x3", 2.0, 4.0},
                    {"dil-conv-5x5", 4.0, 8.0},
                    {"sum", 0.0, 0.0}},
                   "c_k");
}

std::size_t OpVocab::id_of(const std::string& label) const {
    for (std::size_t i = 0; i < ops_.size(); ++i) {
        if (ops_[i].label == label) return i;
    }
    throw std::invalid_argument("OpVocab: unknown label '" + label + "'");
}

std::vector<std::string> OpVocab::labels() const {
    std::vector<std::string> out;
    out.reserve(ops_.size());
    for (const auto& op : ops_) out.push_back(op.label);
    return out;
}

bool OpVocab::operator==(const OpVocab& other) const {
    if (n_inputs_ != other.n_inputs_ || n_intermediate_ != other.n_intermediate_ ||
        ops_.size() != other.ops_.size())
        return false;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
        if (ops_[i].label != other.ops_[i].label || ops_[i].param_cost != other.ops_[i].param_cost ||
            ops_[i].flops_cost != other.ops_[i].flops_cost)
            return false;
    }
    return true;
}

// ---- CellGraph ------------------------------------------------------------------

std::size_t CellGraph::edge_count() const {
    std::size_t c = 0;
    for (const auto b : adjacency) c += b != 0;
    return c;
}

std::size_t CellGraph::in_degree(std::size_t node) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < num_nodes; ++i) c += edge(i, node);
    return c;
}

std::size_t CellGraph::out_degree(std::size_t node) const {
    std::size_t c = 0;
    for (std::size_t j = 0; j < num_nodes; ++j) c += edge(node, j);
    return c;
}

CellGraph CellGraph::empty(std::size_t n) {
    CellGraph c;
    c.num_nodes = n;
    c.ops.assign(n, 0);
    c.adjacency.assign(n * n, 0);
    return c;
}

// ---- SpaceSpec -------------------------------------------------------------------

SpaceSpec SpaceSpec::nasbench101_like() {
    SpaceSpec s;
    s.vocab = OpVocab::nasbench101_like();
    s.min_nodes = 3;
    s.max_nodes = 7;
    s.max_edges = 9;
    s.attribute = AttributeKind::ParamProxy;
    return s;
}

SpaceSpec SpaceSpec::darts_transformed() {
    SpaceSpec s;
    s.vocab = OpVocab::darts_transformed();
    s.min_nodes = 15;
    s.max_nodes = 15;
    s.max_edges = 20;
    s.allow_unused_inputs = true;
    return s;
}

// ---- Validation -------------------------------------------------------------------

std::vector<std::string> validate_cell(const CellGraph& cell, const SpaceSpec& spec) {
    std::vector<std::string> violations;
    const auto& vocab = spec.vocab;
    const std::size_t n = cell.num_nodes;
    const std::size_t n_in = vocab.num_inputs();

    if (cell.ops.size() != n || cell.adjacency.size() != n * n) {
        violations.push_back("storage: ops/adjacency sizes do not match node count");
        return violations;
    }
    if (n < n_in + 1) violations.push_back("nodes: fewer nodes than structural minimum");
    if (n > spec.max_nodes) violations.push_back("nodes: node count exceeds max_nodes");
    if (!violations.empty()) return violations;

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i && j < n; ++j) {
            if (cell.adjacency[i * n + j]) {
                violations.push_back("triangularity: entry (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") below or on the diagonal");
            }
        }
    }

    for (std::size_t i = 0; i < n_in; ++i) {
        if (cell.ops[i] != vocab.input_id(i))
            violations.push_back("ops: node " + std::to_string(i) + " must be '" + vocab.label(vocab.input_id(i)) +
                                 "'");
    }
    if (cell.ops[n - 1] != vocab.output_id())
        violations.push_back("ops: node " + std::to_string(n - 1) + " must be '" + vocab.label(vocab.output_id()) +
                             "'");
    for (std::size_t i = n_in; i + 1 < n; ++i) {
        if (!vocab.is_intermediate(cell.ops[i]))
            violations.push_back("ops: node " + std::to_string(i) + " carries non-intermediate label '" +
                                 (cell.ops[i] < vocab.size() ? vocab.label(cell.ops[i]) : "<out of range>") + "'");
    }

    for (std::size_t i = n_in; i < n; ++i) {
        if (cell.in_degree(i) == 0)
            violations.push_back("connectivity: node " + std::to_string(i) + " has no predecessor");
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (i < n_in && spec.allow_unused_inputs) continue;
        if (cell.out_degree(i) == 0)
            violations.push_back("connectivity: node " + std::to_string(i) + " has no successor");
    }

    if (cell.edge_count() > spec.max_edges)
        violations.push_back("edges: " + std::to_string(cell.edge_count()) + " edges exceed budget of " +
                             std::to_string(spec.max_edges));
    return violations;
}

bool is_valid_cell(const CellGraph& cell, const SpaceSpec& spec) { return validate_cell(cell, spec).empty(); }

// ---- Sampling / mutation -----------------------------------------------------------

CellGraph random_cell(const SpaceSpec& spec, Rng& rng, std::size_t max_attempts) {
    const auto& vocab = spec.vocab;
    const std::size_t n_in = vocab.num_inputs();
    if (spec.max_nodes < spec.min_nodes || spec.min_nodes < n_in + 1)
        throw std::invalid_argument("random_cell: unsatisfiable space spec");
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        const std::size_t n =
            static_cast<std::size_t>(rng.range(static_cast<long long>(spec.min_nodes), static_cast<long long>(spec.max_nodes)));
        CellGraph cell = CellGraph::empty(n);
        for (std::size_t i = 0; i < n_in; ++i) cell.ops[i] = vocab.input_id(i);
        for (std::size_t i = n_in; i + 1 < n; ++i)
            cell.ops[i] = n_in + rng.below(vocab.num_intermediate());
        cell.ops[n - 1] = vocab.output_id();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) cell.set_edge(i, j, rng.bernoulli(0.5));
        }
        // Orphan repair, in node order: missing predecessors first, then
        // missing successors.
        for (std::size_t j = n_in; j < n; ++j) {
            if (cell.in_degree(j) == 0) cell.set_edge(0, j, true);
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            if (i < n_in && spec.allow_unused_inputs) continue;
            if (cell.out_degree(i) == 0) cell.set_edge(i, n - 1, true);
        }
        if (cell.edge_count() <= spec.max_edges && is_valid_cell(cell, spec)) return cell;
    }
    throw std::runtime_error("random_cell: no valid sample after " + std::to_string(max_attempts) + " attempts");
}

std::vector<CellGraph> edit_neighbors(const CellGraph& cell, const SpaceSpec& spec) {
    const auto& vocab = spec.vocab;
    std::vector<CellGraph> out;
    for (std::size_t p = vocab.num_inputs(); p + 1 < cell.num_nodes; ++p) {
        for (std::size_t o = vocab.num_inputs(); o < vocab.output_id(); ++o) {
            if (o == cell.ops[p]) continue;
            CellGraph c = cell;
            c.ops[p] = o;
            if (is_valid_cell(c, spec)) out.push_back(std::move(c));
        }
    }
    for (std::size_t i = 0; i < cell.num_nodes; ++i) {
        for (std::size_t j = i + 1; j < cell.num_nodes; ++j) {
            CellGraph c = cell;
            c.set_edge(i, j, !c.edge(i, j));
            if (is_valid_cell(c, spec)) out.push_back(std::move(c));
        }
    }
    return out;
}

CellGraph mutate_cell(const CellGraph& cell, const SpaceSpec& spec, Rng& rng) {
    auto neighbors = edit_neighbors(cell, spec);
    if (neighbors.empty()) throw std::runtime_error("mutate_cell: no valid single-edit neighbor");
    return neighbors[rng.below(neighbors.size())];
}

CellGraph relabel_cell(const CellGraph& cell, const std::vector<std::size_t>& perm) {
    const std::size_t n = cell.num_nodes;
    if (perm.size() != n) throw std::invalid_argument("relabel_cell: permutation size mismatch");
    CellGraph out = CellGraph::empty(n);
    for (std::size_t i = 0; i < n; ++i) out.ops[i] = cell.ops[perm[i]];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (cell.adjacency[perm[i] * n + perm[j]]) {
                if (j <= i)
                    throw std::invalid_argument("relabel_cell: permutation does not preserve upper-triangularity");
                out.set_edge(i, j, true);
            }
        }
    }
    return out;
}

// ---- Canonical hashing ---------------------------------------------------------------

std::uint64_t canonical_hash(const CellGraph& cell) {
    const std::size_t n = cell.num_nodes;
    std::vector<std::uint64_t> label(n), next(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t h = 0x6a09e667f3bcc909ULL;
        h = combine(h, cell.ops[i]);
        h = combine(h, cell.in_degree(i));
        h = combine(h, cell.out_degree(i));
        label[i] = h;
    }
    std::vector<std::uint64_t> bucket;
    for (std::size_t round = 0; round < n; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t h = combine(0x3c6ef372fe94f82bULL, label[i]);
            bucket.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (cell.edge(j, i)) bucket.push_back(label[j]);
            }
            std::sort(bucket.begin(), bucket.end());
            for (const auto b : bucket) h = combine(h, b ^ 0x5555555555555555ULL);
            bucket.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (cell.edge(i, j)) bucket.push_back(label[j]);
            }
            std::sort(bucket.begin(), bucket.end());
            for (const auto b : bucket) h = combine(h, b ^ 0xaaaaaaaaaaaaaaaaULL);
            next[i] = h;
        }
        label.swap(next);
    }
    std::sort(label.begin(), label.end());
    std::uint64_t digest = combine(0xbb67ae8584caa73bULL, n);
    digest = combine(digest, cell.edge_count());
    for (const auto l : label) digest = combine(digest, l);
    return digest;
}

std::string hash_hex(std::uint64_t digest) {
    static const char* hexdigits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = hexdigits[digest & 0xf];
        digest >>= 4;
    }
    return s;
}

// ---- Attributes ------------------------------------------------------------------------

double compute_attribute(const CellGraph& cell, const OpVocab& vocab, AttributeKind kind) {
    double total = 0.0;
    for (std::size_t i = 0; i < cell.num_nodes; ++i) {
        if (!vocab.is_intermediate(cell.ops[i])) continue;
        const double cost =
            kind == AttributeKind::ParamProxy ? vocab.param_cost(cell.ops[i]) : vocab.flops_cost(cell.ops[i]);
        total += cost * static_cast<double>(cell.in_degree(i));
    }
    return total;
}

std::size_t longest_path_length(const CellGraph& cell) {
    const std::size_t n = cell.num_nodes;
    std::vector<long long> dist(n, -1);
    dist[0] = 0;
    for (std::size_t i = 1; i < n; ++i) {
        // Extra input nodes are also sources.
        if (cell.in_degree(i) == 0) dist[i] = 0;
        for (std::size_t j = 0; j < i; ++j) {
            if (cell.edge(j, i) && dist[j] >= 0) dist[i] = std::max(dist[i], dist[j] + 1);
        }
    }
    return dist[n - 1] > 0 ? static_cast<std::size_t>(dist[n - 1]) : 0;
}

// ---- DARTS transformation ----------------------------------------------------------------

CellGraph transform_darts_cell(const DartsCell& darts) {
    const OpVocab vocab = OpVocab::darts_transformed();
    constexpr std::size_t kNodes = 15;  // 2 inputs + 8 op nodes + 4 sums + 1 output
    CellGraph cell = CellGraph::empty(kNodes);
    cell.ops[0] = 0;
    cell.ops[1] = 1;
    cell.ops[kNodes - 1] = vocab.output_id();
    const std::size_t sum_id = vocab.id_of("sum");
    for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t sum_node = 4 + 3 * j;
        cell.ops[sum_node] = sum_id;
        for (std::size_t e = 0; e < 2; ++e) {
            const auto& edge = darts.edges[j][e];
            if (edge.source >= 2 + j)
                throw std::invalid_argument("transform_darts_cell: intermediate " + std::to_string(j) +
                                            " references later state " + std::to_string(edge.source));
            const std::size_t op_index = static_cast<std::size_t>(edge.op);
            if (op_index > static_cast<std::size_t>(DartsOp::DilConv5x5))
                throw std::invalid_argument("transform_darts_cell: invalid operation index");
            // Labeled edge A->B becomes A -> P -> B with P carrying the label.
            const std::size_t p = 2 + 3 * j + e;
            const std::size_t source_node = edge.source < 2 ? edge.source : 4 + 3 * (edge.source - 2);
            cell.ops[p] = 2 + op_index;
            cell.set_edge(source_node, p, true);
            cell.set_edge(p, sum_node, true);
        }
        cell.set_edge(sum_node, kNodes - 1, true);
    }
    return cell;
}

DartsCell random_darts_cell(Rng& rng) {
    DartsCell cell;
    for (std::size_t j = 0; j < 4; ++j) {
        auto sources = rng.sample_distinct(2 + j, 2);
        std::sort(sources.begin(), sources.end());
        cell.edges[j][0].source = sources[0];
        cell.edges[j][1].source = sources[1];
        cell.edges[j][0].op = static_cast<DartsOp>(rng.below(7));
        cell.edges[j][1].op = static_cast<DartsOp>(rng.below(7));
    }
    return cell;
}

// ---- Batching -------------------------------------------------------------------------------

CellBatch pad_batch(const std::vector<CellGraph>& cells, std::size_t n_max, const OpVocab& vocab) {
    CellBatch batch;
    batch.batch = cells.size();
    batch.n_max = n_max;
    batch.ops.assign(cells.size() * n_max, vocab.pad_id());
    batch.adjacency.assign(cells.size() * n_max * n_max, 0);
    batch.pad_mask.assign(cells.size() * n_max, 0);
    for (std::size_t b = 0; b < cells.size(); ++b) {
        const auto& cell = cells[b];
        if (cell.num_nodes > n_max)
            throw std::invalid_argument("pad_batch: cell with " + std::to_string(cell.num_nodes) +
                                        " nodes exceeds N_max " + std::to_string(n_max));
        for (std::size_t i = 0; i < cell.num_nodes; ++i) {
            batch.ops[b * n_max + i] = cell.ops[i];
            batch.pad_mask[b * n_max + i] = 1;
            for (std::size_t j = 0; j < cell.num_nodes; ++j) {
                batch.adjacency[b * n_max * n_max + i * n_max + j] = cell.adjacency[i * cell.num_nodes + j];
            }
        }
    }
    return batch;
}

// ---- Dataset file -----------------------------------------------------------------------------

namespace {

nlohmann::ordered_json record_to_json(const DatasetRecord& rec, const OpVocab& vocab) {
    nlohmann::ordered_json j;
    std::vector<std::string> labels;
    labels.reserve(rec.cell.num_nodes);
    for (const auto id : rec.cell.ops) labels.push_back(vocab.label(id));
    j["ops"] = labels;
    std::vector<int> bits;
    const std::size_t n = rec.cell.num_nodes;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) bits.push_back(rec.cell.edge(i, k) ? 1 : 0);
    }
    j["adjacency"] = bits;
    if (rec.attribute) j["attribute"] = *rec.attribute;
    if (rec.accuracy) j["accuracy"] = *rec.accuracy;
    return j;
}

DatasetRecord record_from_json(const nlohmann::json& j, const OpVocab& vocab) {
    DatasetRecord rec;
    const auto& ops = j.at("ops");
    const std::size_t n = ops.size();
    rec.cell = CellGraph::empty(n);
    for (std::size_t i = 0; i < n; ++i) rec.cell.ops[i] = vocab.id_of(ops[i].get<std::string>());
    const auto& bits = j.at("adjacency");
    if (bits.size() != n * (n - 1) / 2)
        throw std::runtime_error("dataset: adjacency bit count does not match node count");
    std::size_t b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) rec.cell.set_edge(i, k, bits[b++].get<int>() != 0);
    }
    if (j.contains("attribute")) rec.attribute = j.at("attribute").get<double>();
    if (j.contains("accuracy")) rec.accuracy = j.at("accuracy").get<double>();
    return rec;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records, const OpVocab& vocab) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_dataset: cannot open '" + path + "'");
    for (const auto& rec : records) out << record_to_json(rec, vocab).dump() << "\n";
    if (!out) throw std::runtime_error("write_dataset: write failed for '" + path + "'");
}

std::vector<DatasetRecord> read_dataset(const std::string& path, const OpVocab& vocab) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_dataset: cannot open '" + path + "'");
    std::vector<DatasetRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line), vocab));
        } catch (const std::exception& e) {
            throw std::runtime_error("read_dataset: " + path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace cate
