#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cate/cell.hpp"
#include "cate/encoder.hpp"

namespace cate {

enum class EncodingScheme { AdjacencyOneHot, PathOneHot, PathTruncated, CateUni, CateBi };

std::string scheme_name(EncodingScheme scheme);
EncodingScheme scheme_from_name(const std::string& name);

/// Fixed-width numeric representation of one cell under a scheme.
struct EncodingVector {
    EncodingScheme scheme = EncodingScheme::AdjacencyOneHot;
    std::vector<double> values;

    std::size_t width() const { return values.size(); }
};

/// Structure encoding: flattened strict upper triangle of the adjacency
/// (padded to the spec's max node count) followed by per-node one-hot
/// operation labels over the input/intermediate/output symbols (padding
/// positions stay all-zero). Total on any cell; not canonical under
/// isomorphism by construction.
EncodingVector encode_adjacency_onehot(const CellGraph& cell, const SpaceSpec& spec);

std::size_t adjacency_onehot_width(const SpaceSpec& spec);

/// Computation encoding: binary indicator over the operation sequences of
/// all input->output paths, enumerated by path length first and then
/// lexicographically by intermediate-op index, so truncation keeps a
/// deterministic prefix. Width grows as sum_i V^i; the guard throws when the
/// full width would not fit in 2^31 entries and no truncation is requested.
EncodingVector encode_path(const CellGraph& cell, const SpaceSpec& spec,
                           std::optional<std::size_t> truncate_to = std::nullopt);

std::size_t path_onehot_width(const SpaceSpec& spec);

/// Learned encodings for a batch of cells via a pre-trained checkpoint. The
/// weights must match the space (same vocabulary, node budget covering the
/// spec); cross-attention blocks are not used at extraction time.
std::vector<EncodingVector> extract_cate_encoding(const EncoderWeights& weights,
                                                  const std::vector<CellGraph>& cells, const SpaceSpec& spec);

/// Indices of the k nearest pool entries to `query` by Euclidean distance,
/// excluding `exclude`; ties break by ascending pool index. Returns fewer
/// than k (flagged via `short_pool`) when the pool is exhausted.
std::vector<std::size_t> latent_neighbors(const std::vector<double>& query,
                                          const std::vector<EncodingVector>& pool, std::size_t k,
                                          const std::vector<std::uint8_t>& exclude, bool* short_pool = nullptr);

double l2_distance(const std::vector<double>& a, const std::vector<double>& b);

/// Line-delimited encoding dump {"cell_hash": hex, "scheme": name,
/// "values": [...]}.
void write_encodings(const std::string& path, const std::vector<std::uint64_t>& hashes,
                     const std::vector<EncodingVector>& encodings);
struct EncodingDump {
    std::vector<std::uint64_t> hashes;
    std::vector<EncodingVector> encodings;
};
EncodingDump read_encodings(const std::string& path);

}  // namespace cate
