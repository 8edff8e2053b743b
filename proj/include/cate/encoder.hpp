#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cate/cell.hpp"
#include "cate/masks.hpp"
#include "cate/tensor.hpp"

namespace cate {

enum class EncodingDirection { Uni, Bi };

/// Hyperparameters of the architecture encoder stack.
struct EncoderConfig {
    std::size_t blocks = 4;        // single-architecture Transformer blocks (L)
    std::size_t cross_blocks = 4;  // cross-attention blocks over the joint pair (L_c)
    std::size_t heads = 4;
    std::size_t hidden = 32;        // embedding width d_e = hidden width d_h
    std::size_t cross_hidden = 32;  // d_c; equals hidden (uni) or 2*hidden (bi)
    std::size_t ff = 64;            // feed-forward width
    std::size_t vocab_size = 0;
    std::size_t max_nodes = 7;
    EncodingDirection direction = EncodingDirection::Uni;
    MaskKind mask = MaskKind::Indirect;
    /// Residual sum around each block output. Without it, every block maps
    /// all rows sharing an attendable set toward a common mixture, and the
    /// cross stack provably collapses token identity within a few blocks
    /// (attention logits shrink with the hidden magnitudes, so mixing tends
    /// to uniform); masked-operator training then cannot attribute
    /// predictions to positions.
    bool residual = true;

    void validate() const;  // throws std::invalid_argument on inconsistency
    std::size_t head_width() const { return hidden / heads; }
    std::size_t encoding_width() const { return direction == EncodingDirection::Bi ? 2 * hidden : hidden; }

    /// Reference full-scale configuration: 12 single blocks, 24 cross blocks,
    /// 8 heads, width 64 everywhere.
    static EncoderConfig full_scale(std::size_t vocab_size, std::size_t max_nodes);
    /// Desk-scale default: 4 blocks, 4 cross blocks, 4 heads, width 32, ff 64.
    static EncoderConfig desk_scale(std::size_t vocab_size, std::size_t max_nodes);

    bool operator==(const EncoderConfig&) const = default;
};

/// All trainable parameters of the encoder plus their training context (one
/// tape). Move-only; a frozen instance supports concurrent forward passes as
/// long as nothing records on the tape.
class EncoderWeights {
public:
    EncoderWeights(EncoderConfig config, OpVocab vocab, std::uint64_t seed);

    EncoderWeights(EncoderWeights&&) = default;
    EncoderWeights& operator=(EncoderWeights&&) = default;

    const EncoderConfig& config() const { return config_; }
    const OpVocab& vocab() const { return vocab_; }
    Tape& tape() const { return *tape_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::size_t parameter_count() const;
    const Tensor& tensor(const std::string& name) const;

    /// Deep copy of all parameter values (used for checkpointing).
    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& snapshot);

    struct HeadWeights {
        Tensor wq, wk, wv;
    };
    struct BlockWeights {
        std::vector<HeadWeights> heads;
        Tensor w1, b1, w2, b2;
    };

    const std::vector<BlockWeights>& encoder_blocks() const { return blocks_; }
    const std::vector<BlockWeights>& cross_attention_blocks() const { return cross_blocks_; }
    const Tensor& embedding() const { return embedding_; }
    const Tensor& segment_embedding(std::size_t s) const { return segment_[s]; }
    const Tensor& mlm_w() const { return mlm_w_; }
    const Tensor& mlm_b() const { return mlm_b_; }

private:
    Tensor register_param(const std::string& name, std::vector<std::size_t> shape, DecayMode decay, Rng& rng);

    EncoderConfig config_;
    OpVocab vocab_;
    std::unique_ptr<Tape> tape_;
    std::vector<Param> params_;
    std::vector<BlockWeights> blocks_, cross_blocks_;
    Tensor embedding_, segment_[2], mlm_w_, mlm_b_;
};

/// One (possibly corrupted) architecture pair, padded to a common node count,
/// plus the masked-operator prediction problem attached to it: `positions`
/// index the joint 2n sequence (x nodes first), `targets` hold the original
/// operator ids at those positions.
struct PairExample {
    std::size_t n = 0;
    std::vector<std::size_t> ops_x, ops_y;
    std::vector<std::uint8_t> adj_x, adj_y;
    std::vector<std::uint8_t> pad_x, pad_y;
    std::vector<std::size_t> positions;
    std::vector<std::size_t> targets;
};

/// Hidden states (n x hidden) of one padded architecture after the L masked
/// blocks. Records on the tape when it is recording.
Tensor encoder_hidden(const EncoderWeights& w, const std::size_t* ops, const std::uint8_t* adjacency,
                      const std::uint8_t* pad, std::size_t n, MaskKind kind);

/// Hidden states after every block (embedding excluded): result[l] is the
/// output of block l, so result.back() equals encoder_hidden.
std::vector<Tensor> encoder_hidden_layers(const EncoderWeights& w, const std::size_t* ops,
                                          const std::uint8_t* adjacency, const std::uint8_t* pad,
                                          std::size_t n, MaskKind kind);

/// Joint pair representation (2n x d_c): per-segment hidden states (direction
/// bi concatenates original and reversed-DAG states per node), plus segment
/// embeddings, contextualized by the L_c cross-attention blocks.
Tensor joint_hidden(const EncoderWeights& w, const PairExample& ex, MaskKind kind);

struct MlmResult {
    Tensor loss;          // mean cross-entropy over the corrupted positions
    Tensor logits;        // |positions| x vocab
    std::size_t count = 0;  // number of corrupted positions
};

/// Masked-operator prediction loss for one corrupted pair.
MlmResult mlm_forward_loss(const EncoderWeights& w, const PairExample& ex, MaskKind kind);

/// Architecture encodings for a padded batch; forward-only, never records.
/// Uni: hidden state of the output node, width hidden. Bi: concatenation of
/// the output-node state of the DAG and the input-node state of the reversed
/// DAG, width 2*hidden.
std::vector<std::vector<double>> encode_architecture(const EncoderWeights& w, const CellBatch& batch,
                                                     MaskKind kind, EncodingDirection direction);

/// Convenience overload using the weights' configured mask and direction.
std::vector<std::vector<double>> encode_architecture(const EncoderWeights& w, const CellBatch& batch);

// ---- Checkpointing -------------------------------------------------------------

/// Self-describing binary container: magic + version, a JSON header carrying
/// the config, vocabulary and tensor manifest, then raw little-endian 64-bit
/// tensor data. Round-trips are bit-exact. Loading rejects unknown versions
/// and malformed files.
void save_checkpoint(const std::string& path, const EncoderWeights& weights);
EncoderWeights load_checkpoint(const std::string& path);

}  // namespace cate
