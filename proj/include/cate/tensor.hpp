#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cate/rng.hpp"

namespace cate {

class Tape;

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, on first accumulation
    Tape* tape = nullptr;      // non-null while the tensor participates in a tape

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

/// Dense 64-bit tensor with value semantics over a shared node.
///
/// A tensor is tracked when it was created through a recording Tape (either
/// as a parameter or as the result of a primitive applied to tracked inputs).
/// Tracked tensors accumulate gradients during Tape::backward. Tensors must
/// not outlive the tape that tracks them; a tape plus its parameters form one
/// single-writer training context.
class Tensor {
public:
    Tensor() = default;

    /// Untracked constant tensor.
    static Tensor constant(std::vector<std::size_t> shape, std::vector<double> data);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& data() { return node_->value; }
    double at(std::size_t i, std::size_t j) const;
    double scalar() const;  // value of a single-element tensor

    bool tracked() const { return node_ && node_->tape != nullptr; }
    /// Gradient buffer (zeros if backward has not touched this tensor yet).
    const std::vector<double>& grad() const;
    void zero_grad();

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    friend class Tape;
    friend Tensor make_result(std::vector<std::size_t>, std::vector<double>, Tape*);

    std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of primitive applications for reverse-mode differentiation.
///
/// Entries are appended in forward order and replayed in exact reverse order
/// by backward(). clear() drops all recorded applications (parameters keep
/// their values and gradients). One tape per training context; not shareable
/// across threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tracked leaf tensor (a trainable parameter).
    Tensor parameter(std::vector<std::size_t> shape, std::vector<double> data);

    bool recording() const { return recording_; }
    void record(std::function<void()> backward_step) { entries_.push_back(std::move(backward_step)); }
    std::size_t size() const { return entries_.size(); }

    /// Reverse sweep from a scalar loss. Seeds d(loss)/d(loss) = 1.
    void backward(const Tensor& loss);
    void clear() { entries_.clear(); }

    /// RAII guard that suspends recording (forward-only evaluation).
    class NoGrad {
    public:
        explicit NoGrad(Tape& t) : tape_(t), prev_(t.recording_) { t.recording_ = false; }
        ~NoGrad() { tape_.recording_ = prev_; }

    private:
        Tape& tape_;
        bool prev_;
    };

private:
    std::vector<std::function<void()>> entries_;
    bool recording_ = true;
};

/// Attend/forbid matrix for masked attention. allow[i*n_key + j] != 0 means
/// query i may attend key j; forbidden entries map to the -1e9 sentinel that
/// stands in for -inf in the pre-softmax scores.
struct AttentionMask {
    enum class Kind { Direct, Indirect, Cross };

    std::size_t n_query = 0;
    std::size_t n_key = 0;
    std::vector<std::uint8_t> allow;
    Kind kind = Kind::Direct;

    bool allowed(std::size_t i, std::size_t j) const { return allow[i * n_key + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { allow[i * n_key + j] = v ? 1 : 0; }
    static AttentionMask all_allowed(std::size_t n_query, std::size_t n_key, Kind kind);
};

// ---- Primitives -----------------------------------------------------------
// Each primitive computes its forward value, and when any input is tracked on
// a recording tape, registers the matching reverse step. Shape violations
// throw std::invalid_argument naming the primitive and the offending shapes.

Tensor matmul(const Tensor& a, const Tensor& b);          // (m,k)x(k,n) -> (m,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);       // (m,k)x(n,k)^T -> (m,n)
Tensor add(const Tensor& a, const Tensor& b);             // elementwise, equal shapes
Tensor add_rowvec(const Tensor& a, const Tensor& v);      // (m,n)+(n,) broadcast over rows
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor concat_rows(const Tensor& a, const Tensor& b);     // (m1,n)+(m2,n) -> (m1+m2,n)
Tensor concat_cols(const Tensor& a, const Tensor& b);     // (m,n1)+(m,n2) -> (m,n1+n2)
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor sum(const Tensor& a);                              // scalar

/// Row-wise softmax with an attention mask. Every mask row must have at least
/// one attendable entry; forbidden entries of the output are exactly zero.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask);

enum class Reduction { Mean, Sum };

/// Mean (or sum) negative log-likelihood over the selected rows of logits.
/// `selected` empty means all rows. Throws if the selection is empty.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<std::size_t>& targets,
                          const std::vector<std::uint8_t>& selected, Reduction reduction = Reduction::Mean);

/// Mean squared error between a (m,1) or (m,) prediction tensor and targets.
Tensor mse_loss(const Tensor& pred, const std::vector<double>& targets);

// ---- Parameters and optimization -------------------------------------------

/// Weight-decay grouping; "none" reproduces plain Adam on that parameter.
enum class DecayMode { Regular, None };

struct Param {
    std::string name;
    Tensor value;
    DecayMode decay = DecayMode::Regular;
};

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay applied only to DecayMode::Regular
/// parameters. Moments are keyed by position in the parameter vector, which
/// must stay stable across steps.
class AdamW {
public:
    explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

    const AdamWOptions& options() const { return opts_; }
    std::size_t step_count() const { return step_; }

    void step(std::vector<Param>& params);
    void zero_grad(std::vector<Param>& params);

private:
    AdamWOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t step_ = 0;
};

// ---- Gradient verification --------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

/// Runs backward on make_loss() and compares sampled coordinates of every
/// parameter's gradient against central finite differences of the forward
/// value. `coords_per_tensor` coordinates are sampled per parameter (all of
/// them when the tensor is at most that size). Throws on NaN/inf gradients,
/// naming the offending parameter.
GradCheckReport check_gradients(Tape& tape, const std::function<Tensor()>& make_loss,
                                std::vector<Param>& params, double epsilon, std::size_t coords_per_tensor,
                                Rng& rng);

/// Backward pass plus a finiteness audit of every parameter gradient.
void backward_and_check(Tape& tape, const Tensor& loss, const std::vector<Param>& params);

}  // namespace cate
