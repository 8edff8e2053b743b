#include "cate/masks.hpp"

#include <stdexcept>

namespace cate {

std::vector<std::uint8_t> floyd_closure(const std::vector<std::uint8_t>& adjacency, std::size_t n) {
    if (adjacency.size() != n * n) throw std::invalid_argument("floyd_closure: adjacency is not n x n");
    std::vector<std::uint8_t> closure = adjacency;
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!closure[i * n + k]) continue;
            for (std::size_t j = 0; j < n; ++j) {
                closure[i * n + j] |= closure[i * n + k] & closure[k * n + j];
            }
        }
    }
    return closure;
}

AttentionMask build_attention_mask(const std::vector<std::uint8_t>& adjacency, std::size_t n,
                                   MaskKind kind, const std::vector<std::uint8_t>& pad_mask) {
    if (pad_mask.size() != n) throw std::invalid_argument("build_attention_mask: pad mask size mismatch");
    const std::vector<std::uint8_t> reach =
        kind == MaskKind::Indirect ? floyd_closure(adjacency, n) : adjacency;
    AttentionMask mask;
    mask.n_query = n;
    mask.n_key = n;
    mask.kind = kind == MaskKind::Indirect ? AttentionMask::Kind::Indirect : AttentionMask::Kind::Direct;
    mask.allow.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        mask.set(i, i, true);  // self-attention always allowed
        if (!pad_mask[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !pad_mask[j]) continue;
            if (reach[j * n + i]) mask.set(i, j, true);  // j is an ancestor of i
        }
    }
    return mask;
}

AttentionMask build_attention_mask(const CellGraph& cell, MaskKind kind) {
    std::vector<std::uint8_t> pad(cell.num_nodes, 1);
    return build_attention_mask(cell.adjacency, cell.num_nodes, kind, pad);
}

AttentionMask build_cross_mask(const std::vector<std::uint8_t>& pad_x, const std::vector<std::uint8_t>& pad_y) {
    if (pad_x.size() != pad_y.size())
        throw std::invalid_argument("build_cross_mask: pad masks must have equal length");
    const std::size_t n = pad_x.size();
    AttentionMask mask;
    mask.n_query = 2 * n;
    mask.n_key = 2 * n;
    mask.kind = AttentionMask::Kind::Cross;
    mask.allow.assign(4 * n * n, 0);
    auto real = [&](std::size_t k) { return k < n ? pad_x[k] != 0 : pad_y[k - n] != 0; };
    for (std::size_t q = 0; q < 2 * n; ++q) {
        mask.set(q, q, true);
        if (!real(q)) continue;
        for (std::size_t k = 0; k < 2 * n; ++k) {
            if (real(k)) mask.set(q, k, true);
        }
    }
    return mask;
}

}  // namespace cate
