#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cate/cell.hpp"
#include "cate/encoder.hpp"
#include "cate/encodings.hpp"
#include "cate/experiment.hpp"
#include "cate/masks.hpp"
#include "cate/pretrain.hpp"
#include "cate/search.hpp"

namespace py = pybind11;
using namespace cate;

namespace {

CellGraph make_cell(const OpVocab& vocab, const std::vector<std::string>& ops,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    CellGraph cell = CellGraph::empty(ops.size());
    for (std::size_t i = 0; i < ops.size(); ++i) cell.ops[i] = vocab.id_of(ops[i]);
    for (const auto& [i, j] : edges) {
        if (i >= cell.num_nodes || j >= cell.num_nodes)
            throw std::invalid_argument("make_cell: edge endpoint out of range");
        cell.set_edge(i, j, true);
    }
    return cell;
}

std::vector<std::vector<int>> adjacency_matrix(const CellGraph& cell) {
    std::vector<std::vector<int>> out(cell.num_nodes, std::vector<int>(cell.num_nodes, 0));
    for (std::size_t i = 0; i < cell.num_nodes; ++i)
        for (std::size_t j = 0; j < cell.num_nodes; ++j) out[i][j] = cell.edge(i, j) ? 1 : 0;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "computation-aware architecture encodings and encoding-dependent search";

    py::class_<Rng>(m, "Rng").def(py::init<std::uint64_t>());

    py::class_<OpVocab>(m, "OpVocab")
        .def_static("nasbench101_like", &OpVocab::nasbench101_like)
        .def_static("darts_transformed", &OpVocab::darts_transformed)
        .def("labels", &OpVocab::labels)
        .def("size", &OpVocab::size)
        .def("id_of", &OpVocab::id_of)
        .def("label", &OpVocab::label)
        .def("mask_id", &OpVocab::mask_id)
        .def("pad_id", &OpVocab::pad_id);

    py::class_<SpaceSpec>(m, "SpaceSpec")
        .def_static("nasbench101_like", &SpaceSpec::nasbench101_like)
        .def_static("darts_transformed", &SpaceSpec::darts_transformed)
        .def_readwrite("min_nodes", &SpaceSpec::min_nodes)
        .def_readwrite("max_nodes", &SpaceSpec::max_nodes)
        .def_readwrite("max_edges", &SpaceSpec::max_edges)
        .def_readonly("vocab", &SpaceSpec::vocab);

    py::class_<CellGraph>(m, "CellGraph")
        .def_readonly("num_nodes", &CellGraph::num_nodes)
        .def_readonly("ops", &CellGraph::ops)
        .def("edge", &CellGraph::edge)
        .def("edge_count", &CellGraph::edge_count)
        .def("adjacency_matrix", &adjacency_matrix)
        .def("__repr__", [](const CellGraph& c) {
            std::ostringstream os;
            os << "CellGraph(nodes=" << c.num_nodes << ", edges=" << c.edge_count() << ")";
            return os.str();
        });

    m.def("make_cell", &make_cell, py::arg("vocab"), py::arg("ops"), py::arg("edges"));
    m.def("validate_cell", &validate_cell);
    m.def("is_valid_cell", &is_valid_cell);
    m.def("random_cell", [](const SpaceSpec& spec, std::uint64_t seed) {
        Rng rng(seed);
        return random_cell(spec, rng);
    });
    m.def("mutate_cell", [](const CellGraph& cell, const SpaceSpec& spec, std::uint64_t seed) {
        Rng rng(seed);
        return mutate_cell(cell, spec, rng);
    });
    m.def("canonical_hash", [](const CellGraph& cell) { return hash_hex(canonical_hash(cell)); });
    m.def("compute_attribute", [](const CellGraph& cell, const OpVocab& vocab, const std::string& kind) {
        if (kind != "params" && kind != "flops") throw std::invalid_argument("kind must be 'params' or 'flops'");
        return compute_attribute(cell, vocab,
                                 kind == "params" ? AttributeKind::ParamProxy : AttributeKind::FlopsProxy);
    });
    m.def("longest_path_length", &longest_path_length);

    m.def("transform_darts_cell",
          [](const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& edges) {
              if (edges.size() != 4) throw std::invalid_argument("expected 4 intermediate nodes");
              DartsCell darts;
              for (std::size_t j = 0; j < 4; ++j) {
                  if (edges[j].size() != 2) throw std::invalid_argument("each intermediate needs 2 edges");
                  for (std::size_t e = 0; e < 2; ++e) {
                      darts.edges[j][e].source = edges[j][e].first;
                      darts.edges[j][e].op = static_cast<DartsOp>(edges[j][e].second);
                  }
              }
              return transform_darts_cell(darts);
          },
          "edges: per intermediate node, two (source_state, op_index) pairs");

    m.def("floyd_closure", [](const std::vector<std::vector<int>>& adjacency) {
        const std::size_t n = adjacency.size();
        std::vector<std::uint8_t> flat(n * n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (adjacency[i].size() != n) throw std::invalid_argument("adjacency must be square");
            for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = adjacency[i][j] ? 1 : 0;
        }
        const auto closure = floyd_closure(flat, n);
        std::vector<std::vector<int>> out(n, std::vector<int>(n, 0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i][j] = closure[i * n + j];
        return out;
    });

    m.def("attention_mask", [](const CellGraph& cell, const std::string& kind) {
        const auto mask = build_attention_mask(cell, kind == "direct" ? MaskKind::Direct : MaskKind::Indirect);
        std::vector<std::vector<int>> out(mask.n_query, std::vector<int>(mask.n_key, 0));
        for (std::size_t i = 0; i < mask.n_query; ++i)
            for (std::size_t j = 0; j < mask.n_key; ++j) out[i][j] = mask.allowed(i, j) ? 1 : 0;
        return out;
    });

    py::class_<EncoderConfig>(m, "EncoderConfig")
        .def_static("desk_scale", &EncoderConfig::desk_scale)
        .def_static("full_scale", &EncoderConfig::full_scale)
        .def_readwrite("blocks", &EncoderConfig::blocks)
        .def_readwrite("cross_blocks", &EncoderConfig::cross_blocks)
        .def_readwrite("heads", &EncoderConfig::heads)
        .def_readwrite("hidden", &EncoderConfig::hidden)
        .def_readwrite("cross_hidden", &EncoderConfig::cross_hidden)
        .def_readwrite("ff", &EncoderConfig::ff)
        .def_readwrite("max_nodes", &EncoderConfig::max_nodes);

    py::class_<EncoderWeights>(m, "EncoderWeights")
        .def(py::init<EncoderConfig, OpVocab, std::uint64_t>())
        .def("parameter_count", &EncoderWeights::parameter_count)
        .def_property_readonly("config", &EncoderWeights::config);

    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", &load_checkpoint);

    m.def("encode_cells",
          [](const EncoderWeights& weights, const std::vector<CellGraph>& cells, const SpaceSpec& spec) {
              std::vector<std::vector<double>> out;
              for (const auto& enc : extract_cate_encoding(weights, cells, spec)) out.push_back(enc.values);
              return out;
          });
    m.def("encode_adjacency_onehot",
          [](const CellGraph& cell, const SpaceSpec& spec) { return encode_adjacency_onehot(cell, spec).values; });
    m.def("encode_path", [](const CellGraph& cell, const SpaceSpec& spec, std::optional<std::size_t> truncate) {
        return encode_path(cell, spec, truncate).values;
    }, py::arg("cell"), py::arg("spec"), py::arg("truncate_to") = std::nullopt);

    m.def("corrupt_cell",
          [](const CellGraph& cell, const OpVocab& vocab, double rate, std::uint64_t seed) {
              CorruptionConfig cfg;
              cfg.rate = rate;
              Rng rng(seed);
              const auto res = corrupt_cell(cell, vocab, cfg, rng);
              if (!res) throw std::invalid_argument("cell has no maskable node");
              return py::make_tuple(res->ops, res->positions, res->originals);
          },
          py::arg("cell"), py::arg("vocab"), py::arg("rate") = 0.2, py::arg("seed") = 0);

    m.def("sample_pairs", [](const std::vector<double>& attributes, double delta, std::size_t partners,
                             std::uint64_t seed) {
        PairSampleConfig cfg;
        cfg.delta = delta;
        cfg.partners = partners;
        Rng rng(seed);
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& p : sample_pairs(attributes, cfg, rng)) out.push_back({p.x, p.y});
        return out;
    });

    py::class_<BenchmarkOracle>(m, "BenchmarkOracle")
        .def_static("synthetic",
                    [](const SpaceSpec& spec, std::uint64_t seed) { return BenchmarkOracle::synthetic(spec, seed); })
        .def_static("from_file", &BenchmarkOracle::from_file)
        .def("query",
             [](BenchmarkOracle& oracle, const CellGraph& cell) {
                 const auto res = oracle.query(cell);
                 return py::make_tuple(res.accuracy, res.counted);
             })
        .def("query_count", &BenchmarkOracle::query_count);

    py::class_<SearchTrajectory>(m, "SearchTrajectory")
        .def_readonly("seed", &SearchTrajectory::seed)
        .def_readonly("algorithm", &SearchTrajectory::algorithm)
        .def_readonly("early_stop", &SearchTrajectory::early_stop)
        .def("final_best", &SearchTrajectory::final_best)
        .def("__len__", [](const SearchTrajectory& t) { return t.entries.size(); })
        .def("best_curve", [](const SearchTrajectory& t) {
            std::vector<double> out;
            for (const auto& e : t.entries) out.push_back(e.best_so_far);
            return out;
        });

    m.def("random_search", &random_search);
    m.def("local_search", &local_search);
    m.def("regularized_evolution",
          [](BenchmarkOracle& oracle, const SpaceSpec& spec, std::size_t budget, std::size_t population,
             std::size_t tournament, std::uint64_t seed) {
              return regularized_evolution(oracle, spec, budget, {population, tournament}, seed);
          },
          py::arg("oracle"), py::arg("spec"), py::arg("budget"), py::arg("population") = 20,
          py::arg("tournament") = 5, py::arg("seed") = 1);

    py::class_<CandidateUniverse>(m, "CandidateUniverse")
        .def(py::init([](const std::vector<CellGraph>& cells, const std::vector<std::vector<double>>& encodings) {
            CandidateUniverse u;
            u.cells = cells;
            for (const auto& cell : cells) u.hashes.push_back(canonical_hash(cell));
            for (const auto& values : encodings) u.encodings.push_back({EncodingScheme::CateUni, values});
            u.validate();
            return u;
        }))
        .def("__len__", [](const CandidateUniverse& u) { return u.cells.size(); });

    m.def("cate_dngo_ls",
          [](BenchmarkOracle& oracle, const CandidateUniverse& universe, std::size_t budget, std::uint64_t seed,
             std::size_t predictor_epochs) {
              PoolSearchOptions opts;
              opts.predictor.epochs = predictor_epochs;
              return cate_dngo_ls(oracle, universe, budget, opts, seed);
          },
          py::arg("oracle"), py::arg("universe"), py::arg("budget"), py::arg("seed") = 1,
          py::arg("predictor_epochs") = 100);

    m.def("run_command", [](const std::string& subcommand, const std::string& config_path,
                            const std::vector<std::string>& overrides) {
        CliOptions opts;
        opts.config_path = config_path;
        opts.overrides = overrides;
        std::ostringstream log;
        const int code = run_command(subcommand, opts, log);
        return py::make_tuple(code, log.str());
    }, py::arg("subcommand"), py::arg("config_path"), py::arg("overrides") = std::vector<std::string>{});
}
