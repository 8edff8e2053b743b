#include "cate/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cate {

// ---- EncoderConfig ---------------------------------------------------------------

void EncoderConfig::validate() const {
    if (blocks < 1 || cross_blocks < 1)
        throw std::invalid_argument("encoder config: blocks and cross_blocks must be >= 1");
    if (heads < 1 || hidden % heads != 0)
        throw std::invalid_argument("encoder config: hidden width must be divisible by the head count");
    const std::size_t expected_dc = direction == EncodingDirection::Bi ? 2 * hidden : hidden;
    if (cross_hidden != expected_dc)
        throw std::invalid_argument("encoder config: cross_hidden must be " + std::to_string(expected_dc) +
                                    " for this direction (got " + std::to_string(cross_hidden) + ")");
    if (cross_hidden % heads != 0)
        throw std::invalid_argument("encoder config: cross_hidden must be divisible by the head count");
    if (vocab_size == 0) throw std::invalid_argument("encoder config: vocab_size must be set");
    if (max_nodes < 2) throw std::invalid_argument("encoder config: max_nodes must be >= 2");
    if (ff < 1) throw std::invalid_argument("encoder config: ff width must be >= 1");
}

EncoderConfig EncoderConfig::full_scale(std::size_t vocab_size, std::size_t max_nodes) {
    EncoderConfig c;
    c.blocks = 12;
    c.cross_blocks = 24;
    c.heads = 8;
    c.hidden = 64;
    c.cross_hidden = 64;
    c.ff = 64;
    c.vocab_size = vocab_size;
    c.max_nodes = max_nodes;
    return c;
}

EncoderConfig EncoderConfig::desk_scale(std::size_t vocab_size, std::size_t max_nodes) {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    c.max_nodes = max_nodes;
    return c;
}

// ---- EncoderWeights -----------------------------------------------------------------

Tensor EncoderWeights::register_param(const std::string& name, std::vector<std::size_t> shape, DecayMode decay,
                                      Rng& rng) {
    std::size_t numel = 1;
    for (const auto d : shape) numel *= d;
    std::vector<double> data(numel);
    if (shape.size() == 2) {
        // Scaled-uniform (Glorot) init for matrices; biases enter as 1-D zeros.
        const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
        for (auto& v : data) v = rng.uniform(-limit, limit);
    } else {
        for (auto& v : data) v = 0.0;
    }
    Tensor t = tape_->parameter(std::move(shape), std::move(data));
    params_.push_back({name, t, decay});
    return t;
}

EncoderWeights::EncoderWeights(EncoderConfig config, OpVocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), tape_(std::make_unique<Tape>()) {
    config_.validate();
    if (vocab_.size() != config_.vocab_size)
        throw std::invalid_argument("encoder weights: vocab size " + std::to_string(vocab_.size()) +
                                    " does not match config vocab_size " + std::to_string(config_.vocab_size));
    Rng rng(seed);
    embedding_ = register_param("embedding", {config_.vocab_size, config_.hidden}, DecayMode::Regular, rng);

    auto make_blocks = [&](const std::string& prefix, std::size_t count, std::size_t width) {
        std::vector<BlockWeights> blocks;
        blocks.reserve(count);
        for (std::size_t l = 0; l < count; ++l) {
            BlockWeights b;
            const std::size_t hw = width / config_.heads;
            for (std::size_t h = 0; h < config_.heads; ++h) {
                const std::string base = prefix + "." + std::to_string(l) + ".head" + std::to_string(h);
                HeadWeights head;
                head.wq = register_param(base + ".wq", {width, hw}, DecayMode::Regular, rng);
                head.wk = register_param(base + ".wk", {width, hw}, DecayMode::Regular, rng);
                head.wv = register_param(base + ".wv", {width, hw}, DecayMode::Regular, rng);
                b.heads.push_back(std::move(head));
            }
            const std::string base = prefix + "." + std::to_string(l) + ".ff";
            b.w1 = register_param(base + ".w1", {width, config_.ff}, DecayMode::Regular, rng);
            b.b1 = register_param(base + ".b1", {config_.ff}, DecayMode::None, rng);
            b.w2 = register_param(base + ".w2", {config_.ff, width}, DecayMode::Regular, rng);
            b.b2 = register_param(base + ".b2", {width}, DecayMode::None, rng);
            blocks.push_back(std::move(b));
        }
        return blocks;
    };
    blocks_ = make_blocks("enc", config_.blocks, config_.hidden);
    cross_blocks_ = make_blocks("cross", config_.cross_blocks, config_.cross_hidden);

    for (std::size_t s = 0; s < 2; ++s) {
        std::vector<double> data(config_.cross_hidden);
        for (auto& v : data) v = rng.uniform(-0.1, 0.1);
        segment_[s] = tape_->parameter({config_.cross_hidden}, std::move(data));
        params_.push_back({"segment." + std::to_string(s), segment_[s], DecayMode::Regular});
    }
    mlm_w_ = register_param("mlm.w", {config_.cross_hidden, config_.vocab_size}, DecayMode::Regular, rng);
    mlm_b_ = register_param("mlm.b", {config_.vocab_size}, DecayMode::None, rng);
}

std::size_t EncoderWeights::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.numel();
    return total;
}

const Tensor& EncoderWeights::tensor(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.value;
    }
    throw std::invalid_argument("encoder weights: unknown tensor '" + name + "'");
}

std::vector<std::vector<double>> EncoderWeights::snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value.data());
    return out;
}

void EncoderWeights::restore(const std::vector<std::vector<double>>& snapshot) {
    if (snapshot.size() != params_.size())
        throw std::invalid_argument("encoder weights: snapshot parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (snapshot[i].size() != params_[i].value.numel())
            throw std::invalid_argument("encoder weights: snapshot shape mismatch for '" + params_[i].name + "'");
        params_[i].value.data() = snapshot[i];
    }
}

// ---- Forward passes --------------------------------------------------------------------

namespace {

Tensor block_forward(const Tensor& h, const AttentionMask& mask, const EncoderWeights::BlockWeights& block,
                     double scale_denom, bool residual) {
    Tensor concat;
    for (std::size_t k = 0; k < block.heads.size(); ++k) {
        const auto& head = block.heads[k];
        Tensor q = matmul(h, head.wq);
        Tensor key = matmul(h, head.wk);
        Tensor v = matmul(h, head.wv);
        Tensor scores = scale(matmul_nt(q, key), 1.0 / scale_denom);
        Tensor probs = masked_softmax(scores, mask);
        Tensor out = matmul(probs, v);
        concat = k == 0 ? out : concat_cols(concat, out);
    }
    Tensor ff = relu(add_rowvec(matmul(concat, block.w1), block.b1));
    Tensor out = add_rowvec(matmul(ff, block.w2), block.b2);
    return residual ? add(h, out) : out;
}

void check_sequence(const EncoderWeights& w, const std::size_t* ops, const std::uint8_t* pad, std::size_t n) {
    bool seen_pad = false;
    std::size_t real = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (ops[i] >= w.vocab().size())
            throw std::invalid_argument("encoder: op id " + std::to_string(ops[i]) + " out of vocabulary");
        if (pad[i]) {
            if (seen_pad) throw std::invalid_argument("encoder: pad mask is not a contiguous suffix");
            ++real;
        } else {
            seen_pad = true;
            if (ops[i] != w.vocab().pad_id())
                throw std::invalid_argument("encoder: padded position carries a non-[pad] op");
        }
    }
    if (real == 0) throw std::invalid_argument("encoder: sequence with no real node");
}

std::size_t real_count(const std::uint8_t* pad, std::size_t n) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) c += pad[i] != 0;
    return c;
}

struct ReversedView {
    std::vector<std::size_t> ops;
    std::vector<std::uint8_t> adj;
    std::vector<std::uint8_t> pad;
};

// Reverse all edges while keeping the matrix upper-triangular: real node i
// moves to position real-1-i, pads stay in place.
ReversedView reverse_sequence(const std::size_t* ops, const std::uint8_t* adjacency, const std::uint8_t* pad,
                              std::size_t n) {
    ReversedView r;
    r.ops.assign(n, 0);
    r.adj.assign(n * n, 0);
    r.pad.assign(pad, pad + n);
    const std::size_t real = real_count(pad, n);
    auto map = [&](std::size_t i) { return i < real ? real - 1 - i : i; };
    for (std::size_t i = 0; i < n; ++i) r.ops[i] = ops[map(i)];
    for (std::size_t i = 0; i < real; ++i) {
        for (std::size_t j = 0; j < real; ++j) {
            if (adjacency[map(j) * n + map(i)]) r.adj[i * n + j] = 1;
        }
    }
    return r;
}

}  // namespace

std::vector<Tensor> encoder_hidden_layers(const EncoderWeights& w, const std::size_t* ops,
                                          const std::uint8_t* adjacency, const std::uint8_t* pad,
                                          std::size_t n, MaskKind kind) {
    check_sequence(w, ops, pad, n);
    const AttentionMask mask =
        build_attention_mask(std::vector<std::uint8_t>(adjacency, adjacency + n * n), n, kind,
                             std::vector<std::uint8_t>(pad, pad + n));
    Tensor h = gather_rows(w.embedding(), std::vector<std::size_t>(ops, ops + n));
    const double denom = std::sqrt(static_cast<double>(w.config().hidden));
    std::vector<Tensor> layers;
    layers.reserve(w.encoder_blocks().size());
    for (const auto& block : w.encoder_blocks()) {
        h = block_forward(h, mask, block, denom, w.config().residual);
        layers.push_back(h);
    }
    return layers;
}

Tensor encoder_hidden(const EncoderWeights& w, const std::size_t* ops, const std::uint8_t* adjacency,
                      const std::uint8_t* pad, std::size_t n, MaskKind kind) {
    return encoder_hidden_layers(w, ops, adjacency, pad, n, kind).back();
}

namespace {

// Per-segment features entering the cross-attention stack: the plain hidden
// states (uni), or per-node concatenation of original and reversed-DAG hidden
// states (bi), aligning reversed positions back to their original nodes.
Tensor segment_features(const EncoderWeights& w, const std::size_t* ops, const std::uint8_t* adj,
                        const std::uint8_t* pad, std::size_t n, MaskKind kind) {
    Tensor h = encoder_hidden(w, ops, adj, pad, n, kind);
    if (w.config().direction == EncodingDirection::Uni) return h;
    const ReversedView rev = reverse_sequence(ops, adj, pad, n);
    Tensor hr = encoder_hidden(w, rev.ops.data(), rev.adj.data(), rev.pad.data(), n, kind);
    const std::size_t real = real_count(pad, n);
    std::vector<std::size_t> align(n);
    for (std::size_t i = 0; i < n; ++i) align[i] = i < real ? real - 1 - i : i;
    return concat_cols(h, gather_rows(hr, align));
}

}  // namespace

Tensor joint_hidden(const EncoderWeights& w, const PairExample& ex, MaskKind kind) {
    const std::size_t n = ex.n;
    Tensor hx = segment_features(w, ex.ops_x.data(), ex.adj_x.data(), ex.pad_x.data(), n, kind);
    Tensor hy = segment_features(w, ex.ops_y.data(), ex.adj_y.data(), ex.pad_y.data(), n, kind);
    Tensor joint = concat_rows(add_rowvec(hx, w.segment_embedding(0)), add_rowvec(hy, w.segment_embedding(1)));
    const AttentionMask cross = build_cross_mask(ex.pad_x, ex.pad_y);
    const double denom = std::sqrt(static_cast<double>(w.config().cross_hidden));
    for (const auto& block : w.cross_attention_blocks())
        joint = block_forward(joint, cross, block, denom, w.config().residual);
    return joint;
}

MlmResult mlm_forward_loss(const EncoderWeights& w, const PairExample& ex, MaskKind kind) {
    if (ex.positions.empty()) throw std::invalid_argument("mlm_forward_loss: zero corrupted positions");
    if (ex.positions.size() != ex.targets.size())
        throw std::invalid_argument("mlm_forward_loss: positions/targets size mismatch");
    Tensor joint = joint_hidden(w, ex, kind);
    Tensor selected = gather_rows(joint, ex.positions);
    Tensor logits = add_rowvec(matmul(selected, w.mlm_w()), w.mlm_b());
    MlmResult result;
    result.loss = cross_entropy_loss(logits, ex.targets, {}, Reduction::Mean);
    result.logits = logits;
    result.count = ex.positions.size();
    return result;
}

std::vector<std::vector<double>> encode_architecture(const EncoderWeights& w, const CellBatch& batch,
                                                     MaskKind kind, EncodingDirection direction) {
    Tape::NoGrad pause(w.tape());
    std::vector<std::vector<double>> out;
    out.reserve(batch.batch);
    const std::size_t n = batch.n_max;
    const std::size_t d = w.config().hidden;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        const std::size_t* ops = batch.ops_row(b);
        const std::uint8_t* adj = batch.adj_row(b);
        const std::uint8_t* pad = batch.pad_row(b);
        const std::size_t real = real_count(pad, n);
        Tensor h = encoder_hidden(w, ops, adj, pad, n, kind);
        std::vector<double> enc(&h.data()[(real - 1) * d], &h.data()[(real - 1) * d] + d);
        if (direction == EncodingDirection::Bi) {
            const ReversedView rev = reverse_sequence(ops, adj, pad, n);
            Tensor hr = encoder_hidden(w, rev.ops.data(), rev.adj.data(), rev.pad.data(), n, kind);
            // Input node of the DAG sits at the last real position of the
            // reversed one.
            enc.insert(enc.end(), &hr.data()[(real - 1) * d], &hr.data()[(real - 1) * d] + d);
        }
        out.push_back(std::move(enc));
    }
    return out;
}

std::vector<std::vector<double>> encode_architecture(const EncoderWeights& w, const CellBatch& batch) {
    return encode_architecture(w, batch, w.config().mask, w.config().direction);
}

// ---- Checkpointing ------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'E', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

nlohmann::ordered_json vocab_to_json(const OpVocab& vocab) {
    nlohmann::ordered_json j;
    std::vector<std::string> inputs;
    for (std::size_t i = 0; i < vocab.num_inputs(); ++i) inputs.push_back(vocab.label(i));
    j["inputs"] = inputs;
    nlohmann::ordered_json inter = nlohmann::ordered_json::array();
    for (std::size_t i = vocab.num_inputs(); i < vocab.output_id(); ++i) {
        inter.push_back({{"label", vocab.label(i)},
                         {"param_cost", vocab.param_cost(i)},
                         {"flops_cost", vocab.flops_cost(i)}});
    }
    j["intermediate"] = inter;
    j["output"] = vocab.label(vocab.output_id());
    return j;
}

OpVocab vocab_from_json(const nlohmann::json& j) {
    std::vector<std::string> inputs = j.at("inputs").get<std::vector<std::string>>();
    std::vector<OpVocab::Op> inter;
    for (const auto& op : j.at("intermediate")) {
        inter.push_back({op.at("label").get<std::string>(), op.at("param_cost").get<double>(),
                         op.at("flops_cost").get<double>()});
    }
    return OpVocab(std::move(inputs), std::move(inter), j.at("output").get<std::string>());
}

nlohmann::ordered_json config_to_json(const EncoderConfig& c) {
    nlohmann::ordered_json j;
    j["blocks"] = c.blocks;
    j["cross_blocks"] = c.cross_blocks;
    j["heads"] = c.heads;
    j["hidden"] = c.hidden;
    j["cross_hidden"] = c.cross_hidden;
    j["ff"] = c.ff;
    j["vocab_size"] = c.vocab_size;
    j["max_nodes"] = c.max_nodes;
    j["direction"] = c.direction == EncodingDirection::Bi ? "bi" : "uni";
    j["mask"] = c.mask == MaskKind::Direct ? "direct" : "indirect";
    j["residual"] = c.residual;
    return j;
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.blocks = j.at("blocks").get<std::size_t>();
    c.cross_blocks = j.at("cross_blocks").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.cross_hidden = j.at("cross_hidden").get<std::size_t>();
    c.ff = j.at("ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_nodes = j.at("max_nodes").get<std::size_t>();
    const std::string dir = j.at("direction").get<std::string>();
    if (dir != "uni" && dir != "bi") throw std::runtime_error("checkpoint: unknown direction '" + dir + "'");
    c.direction = dir == "bi" ? EncodingDirection::Bi : EncodingDirection::Uni;
    const std::string mask = j.at("mask").get<std::string>();
    if (mask != "direct" && mask != "indirect") throw std::runtime_error("checkpoint: unknown mask '" + mask + "'");
    c.mask = mask == "direct" ? MaskKind::Direct : MaskKind::Indirect;
    c.residual = j.at("residual").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderWeights& weights) {
    nlohmann::ordered_json header;
    header["version"] = kVersion;
    header["config"] = config_to_json(weights.config());
    header["vocab"] = vocab_to_json(weights.vocab());
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    for (const auto& p : weights.params()) {
        manifest.push_back({{"name", p.name},
                            {"shape", p.value.shape()},
                            {"decay", p.decay == DecayMode::Regular ? "regular" : "none"}});
    }
    header["tensors"] = manifest;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& p : weights.params()) {
        out.write(reinterpret_cast<const char*>(p.value.data().data()),
                  static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

EncoderWeights load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint file");
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len == 0 || header_len > (1ULL << 24))
        throw std::runtime_error("load_checkpoint: corrupt header length");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("load_checkpoint: corrupt header: ") + e.what());
    }
    if (header.at("version").get<std::uint32_t>() != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported checkpoint version");

    EncoderConfig config = config_from_json(header.at("config"));
    OpVocab vocab = vocab_from_json(header.at("vocab"));
    EncoderWeights weights(config, std::move(vocab), /*seed=*/0);

    const auto& manifest = header.at("tensors");
    if (manifest.size() != weights.params().size())
        throw std::runtime_error("load_checkpoint: tensor manifest does not match the configuration");
    for (std::size_t i = 0; i < weights.params().size(); ++i) {
        auto& p = weights.params()[i];
        const auto& entry = manifest.at(i);
        if (entry.at("name").get<std::string>() != p.name ||
            entry.at("shape").get<std::vector<std::size_t>>() != p.value.shape())
            throw std::runtime_error("load_checkpoint: manifest mismatch at tensor '" + p.name + "'");
        in.read(reinterpret_cast<char*>(p.value.data().data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data at '" + p.name + "'");
    }
    char extra;
    if (in.read(&extra, 1)) throw std::runtime_error("load_checkpoint: trailing bytes after tensor data");
    return weights;
}

}  // namespace cate
