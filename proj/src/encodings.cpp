#include "cate/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace cate {

std::string scheme_name(EncodingScheme scheme) {
    switch (scheme) {
        case EncodingScheme::AdjacencyOneHot: return "adjacency-onehot";
        case EncodingScheme::PathOneHot: return "path-onehot";
        case EncodingScheme::PathTruncated: return "path-truncated";
        case EncodingScheme::CateUni: return "cate-uni";
        case EncodingScheme::CateBi: return "cate-bi";
    }
    throw std::invalid_argument("scheme_name: unknown scheme");
}

EncodingScheme scheme_from_name(const std::string& name) {
    if (name == "adjacency-onehot") return EncodingScheme::AdjacencyOneHot;
    if (name == "path-onehot") return EncodingScheme::PathOneHot;
    if (name == "path-truncated") return EncodingScheme::PathTruncated;
    if (name == "cate-uni") return EncodingScheme::CateUni;
    if (name == "cate-bi") return EncodingScheme::CateBi;
    throw std::invalid_argument("unknown encoding scheme '" + name + "'");
}

std::size_t adjacency_onehot_width(const SpaceSpec& spec) {
    const std::size_t n = spec.max_nodes;
    const std::size_t labels = spec.vocab.output_id() + 1;  // mask/pad are not cell labels
    return n * (n - 1) / 2 + n * labels;
}

EncodingVector encode_adjacency_onehot(const CellGraph& cell, const SpaceSpec& spec) {
    const std::size_t n_max = spec.max_nodes;
    const std::size_t labels = spec.vocab.output_id() + 1;
    EncodingVector out;
    out.scheme = EncodingScheme::AdjacencyOneHot;
    out.values.assign(adjacency_onehot_width(spec), 0.0);
    std::size_t bit = 0;
    for (std::size_t i = 0; i < n_max; ++i) {
        for (std::size_t j = i + 1; j < n_max; ++j, ++bit) {
            if (i < cell.num_nodes && j < cell.num_nodes && cell.edge(i, j)) out.values[bit] = 1.0;
        }
    }
    const std::size_t op_base = n_max * (n_max - 1) / 2;
    for (std::size_t i = 0; i < cell.num_nodes && i < n_max; ++i) {
        if (cell.ops[i] < labels) out.values[op_base + i * labels + cell.ops[i]] = 1.0;
    }
    return out;
}

namespace {

// sum_{i=0..len} V^i with an overflow guard.
std::size_t geometric_width(std::size_t v, std::size_t len) {
    std::size_t total = 0, power = 1;
    for (std::size_t i = 0; i <= len; ++i) {
        total += power;
        if (total > (std::size_t{1} << 31))
            throw std::invalid_argument("encode_path: full path-encoding width overflows; pass truncate_to");
        power *= v;
    }
    return total;
}

}  // namespace

std::size_t path_onehot_width(const SpaceSpec& spec) {
    const std::size_t v = spec.vocab.num_intermediate();
    const std::size_t max_intermediate = spec.max_nodes - 1 - spec.vocab.num_inputs();
    return geometric_width(v, max_intermediate);
}

EncodingVector encode_path(const CellGraph& cell, const SpaceSpec& spec,
                           std::optional<std::size_t> truncate_to) {
    const std::size_t v = spec.vocab.num_intermediate();
    // The overflow guard applies only when the full width is materialized.
    const std::size_t width = truncate_to ? *truncate_to : path_onehot_width(spec);
    EncodingVector out;
    out.scheme = truncate_to ? EncodingScheme::PathTruncated : EncodingScheme::PathOneHot;
    out.values.assign(width, 0.0);

    // Offsets of each path length: index(sequence) = offset(len) + base-V
    // value. Saturating arithmetic; branches whose offset passed the kept
    // width are pruned below, so saturated entries are never dereferenced.
    const std::size_t max_len = spec.max_nodes - 1 - spec.vocab.num_inputs();
    constexpr std::size_t kCap = std::size_t{1} << 62;
    std::vector<std::size_t> offset(max_len + 2, kCap);
    offset[0] = 0;
    {
        std::size_t power = 1;
        for (std::size_t len = 0; len <= max_len; ++len) {
            if (offset[len] >= kCap || power >= kCap) break;
            offset[len + 1] = offset[len] + power;
            power *= v;
        }
    }

    // DFS over all input->output paths, tracking the op-sequence index.
    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> stack;  // node, (len, value)
    for (std::size_t s = 0; s < spec.vocab.num_inputs(); ++s) {
        if (s >= cell.num_nodes) continue;
        stack.push_back({s, {0, 0}});
    }
    while (!stack.empty()) {
        const auto [node, state] = stack.back();
        stack.pop_back();
        const auto [len, value] = state;
        if (cell.ops[node] == spec.vocab.output_id()) {
            const std::size_t idx = offset[len] + value;
            if (offset[len] < width && idx < width) out.values[idx] = 1.0;
            continue;
        }
        for (std::size_t j = node + 1; j < cell.num_nodes; ++j) {
            if (!cell.edge(node, j)) continue;
            if (spec.vocab.is_intermediate(cell.ops[j])) {
                if (len + 1 > max_len)
                    throw std::invalid_argument("encode_path: path longer than the spec's node budget");
                if (offset[len + 1] >= width) continue;  // every deeper index falls past the kept prefix
                stack.push_back({j, {len + 1, value * v + (cell.ops[j] - spec.vocab.num_inputs())}});
            } else {
                stack.push_back({j, {len, value}});
            }
        }
    }
    return out;
}

std::vector<EncodingVector> extract_cate_encoding(const EncoderWeights& weights,
                                                  const std::vector<CellGraph>& cells, const SpaceSpec& spec) {
    if (!(weights.vocab() == spec.vocab))
        throw std::invalid_argument("extract_cate_encoding: checkpoint vocabulary does not match the space");
    if (weights.config().max_nodes < spec.max_nodes)
        throw std::invalid_argument("extract_cate_encoding: checkpoint node budget " +
                                    std::to_string(weights.config().max_nodes) + " is smaller than the space's " +
                                    std::to_string(spec.max_nodes));
    for (const auto& cell : cells) {
        const auto violations = validate_cell(cell, spec);
        if (!violations.empty())
            throw std::invalid_argument("extract_cate_encoding: invalid cell: " + violations.front());
    }
    const CellBatch batch = pad_batch(cells, weights.config().max_nodes, spec.vocab);
    auto raw = encode_architecture(weights, batch);
    std::vector<EncodingVector> out;
    out.reserve(raw.size());
    const EncodingScheme scheme =
        weights.config().direction == EncodingDirection::Bi ? EncodingScheme::CateBi : EncodingScheme::CateUni;
    for (auto& values : raw) out.push_back({scheme, std::move(values)});
    return out;
}

double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("l2_distance: width mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<std::size_t> latent_neighbors(const std::vector<double>& query,
                                          const std::vector<EncodingVector>& pool, std::size_t k,
                                          const std::vector<std::uint8_t>& exclude, bool* short_pool) {
    if (!exclude.empty() && exclude.size() != pool.size())
        throw std::invalid_argument("latent_neighbors: exclude mask size mismatch");
    std::vector<std::pair<double, std::size_t>> candidates;
    candidates.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!exclude.empty() && exclude[i]) continue;
        candidates.push_back({l2_distance(query, pool[i].values), i});
    }
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end());
    if (short_pool) *short_pool = candidates.size() < k;
    std::vector<std::size_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(candidates[i].second);
    return out;
}

void write_encodings(const std::string& path, const std::vector<std::uint64_t>& hashes,
                     const std::vector<EncodingVector>& encodings) {
    if (hashes.size() != encodings.size())
        throw std::invalid_argument("write_encodings: hash/encoding count mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_encodings: cannot open '" + path + "'");
    for (std::size_t i = 0; i < hashes.size(); ++i) {
        nlohmann::ordered_json j;
        j["cell_hash"] = hash_hex(hashes[i]);
        j["scheme"] = scheme_name(encodings[i].scheme);
        j["values"] = encodings[i].values;
        out << j.dump() << "\n";
    }
}

EncodingDump read_encodings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_encodings: cannot open '" + path + "'");
    EncodingDump dump;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const std::string hex = j.at("cell_hash").get<std::string>();
        dump.hashes.push_back(std::stoull(hex, nullptr, 16));
        EncodingVector enc;
        enc.scheme = scheme_from_name(j.at("scheme").get<std::string>());
        enc.values = j.at("values").get<std::vector<double>>();
        dump.encodings.push_back(std::move(enc));
    }
    return dump;
}

}  // namespace cate
