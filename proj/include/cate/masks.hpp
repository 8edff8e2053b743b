#pragma once

#include <cstdint>
#include <vector>

#include "cate/cell.hpp"
#include "cate/tensor.hpp"

namespace cate {

enum class MaskKind { Direct, Indirect };

/// Transitive closure by the triple loop: closure[i][j] = 1 iff a directed
/// path i -> ... -> j exists. Input is a binary row-major n x n matrix.
std::vector<std::uint8_t> floyd_closure(const std::vector<std::uint8_t>& adjacency, std::size_t n);

/// Dependency attention mask over a (possibly padded) adjacency matrix.
///
/// Query i may attend key j iff j == i, or j is an ancestor of i: a parent
/// under the direct mask, any ancestor via the transitive closure under the
/// indirect mask. Information therefore flows from ancestors to descendants;
/// the output node sees the whole graph under the indirect mask. Padded keys
/// are always forbidden and padded query rows attend only to themselves.
AttentionMask build_attention_mask(const std::vector<std::uint8_t>& adjacency, std::size_t n,
                                   MaskKind kind, const std::vector<std::uint8_t>& pad_mask);

AttentionMask build_attention_mask(const CellGraph& cell, MaskKind kind);

/// Cross-attention mask over the concatenation of two equally padded
/// segments: every real node of either segment attends every real node of
/// both segments. Pad handling as above.
AttentionMask build_cross_mask(const std::vector<std::uint8_t>& pad_x, const std::vector<std::uint8_t>& pad_y);

}  // namespace cate
