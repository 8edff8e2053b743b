#include "cate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cate {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

[[noreturn]] void shape_error(const char* primitive, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(primitive) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

std::shared_ptr<detail::TensorNode> make_node(std::vector<std::size_t> shape, std::vector<double> data,
                                              Tape* tape) {
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->tape = tape;
    return n;
}

/// Tape that should record the result of a primitive, or nullptr.
Tape* result_tape(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->defined() && t->tracked() && t->node()->tape->recording()) return t->node()->tape;
    }
    return nullptr;
}

constexpr double kForbidSentinel = -1e9;

}  // namespace

Tensor make_result(std::vector<std::size_t> shape, std::vector<double> data, Tape* tape) {
    Tensor t;
    t.node_ = make_node(std::move(shape), std::move(data), tape);
    return t;
}

Tensor Tensor::constant(std::vector<std::size_t> shape, std::vector<double> data) {
    return make_result(std::move(shape), std::move(data), nullptr);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return constant(std::move(shape), std::move(d));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    std::vector<double> d(shape_numel(shape), v);
    return constant(std::move(shape), std::move(d));
}

std::size_t Tensor::rows() const {
    if (node_->shape.size() != 2) throw std::invalid_argument("tensor: rows() on non-2D tensor");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (node_->shape.size() != 2) throw std::invalid_argument("tensor: cols() on non-2D tensor");
    return node_->shape[1];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }

double Tensor::scalar() const {
    if (numel() != 1) throw std::invalid_argument("tensor: scalar() on tensor with numel != 1");
    return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tape::parameter(std::vector<std::size_t> shape, std::vector<double> data) {
    return make_result(std::move(shape), std::move(data), this);
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    if (!loss.tracked()) {
        throw std::invalid_argument("backward: loss was not produced under grad tracking");
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

AttentionMask AttentionMask::all_allowed(std::size_t n_query, std::size_t n_key, Kind kind) {
    AttentionMask m;
    m.n_query = n_query;
    m.n_key = n_key;
    m.kind = kind;
    m.allow.assign(n_query * n_key, 1);
    return m;
}

// ---- Primitives -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) shape_error("matmul", a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    Tape* tape = result_tape({&a, &b});
    Tensor r = make_result({m, n}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), bn = b.node(), rn = r.node(), m, k, n]() {
            an->ensure_grad();
            bn->ensure_grad();
            const auto& g = rn->grad;
            // dA += G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = &g[i * n];
                    const double* brow = &bn->value[p * n];
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    an->grad[i * k + p] += acc;
                }
            }
            // dB += A^T * G
            for (std::size_t p = 0; p < k; ++p) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double aip = an->value[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = &g[i * n];
                    double* brow = &bn->grad[p * n];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
                }
            }
        });
    }
    return r;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols()) shape_error("matmul_nt", a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = &av[i * k];
            const double* brow = &bv[j * k];
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[i * n + j] = acc;
        }
    }
    Tape* tape = result_tape({&a, &b});
    Tensor r = make_result({m, n}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), bn = b.node(), rn = r.node(), m, k, n]() {
            an->ensure_grad();
            bn->ensure_grad();
            const auto& g = rn->grad;
            // dA += G * B ; dB += G^T * A
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    const double* brow = &bn->value[j * k];
                    const double* arow = &an->value[i * k];
                    double* darow = &an->grad[i * k];
                    double* dbrow = &bn->grad[j * k];
                    for (std::size_t p = 0; p < k; ++p) {
                        darow[p] += gij * brow[p];
                        dbrow[p] += gij * arow[p];
                    }
                }
            }
        });
    }
    return r;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tape* tape = result_tape({&a, &b});
    Tensor r = make_result(a.shape(), std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), bn = b.node(), rn = r.node()]() {
            an->ensure_grad();
            bn->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                an->grad[i] += rn->grad[i];
                bn->grad[i] += rn->grad[i];
            }
        });
    }
    return r;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.shape().size() != 2 || v.numel() != a.cols()) shape_error("add_rowvec", a, v);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.data());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v.data()[j];
    Tape* tape = result_tape({&a, &v});
    Tensor r = make_result({m, n}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), vn = v.node(), rn = r.node(), m, n]() {
            an->ensure_grad();
            vn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = rn->grad[i * n + j];
                    an->grad[i * n + j] += g;
                    vn->grad[j] += g;
                }
            }
        });
    }
    return r;
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    Tape* tape = result_tape({&a});
    Tensor r = make_result(a.shape(), std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), rn = r.node(), c]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += c * rn->grad[i];
        });
    }
    return r;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    Tape* tape = result_tape({&a});
    Tensor r = make_result(a.shape(), std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), rn = r.node()]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                if (an->value[i] > 0.0) an->grad[i] += rn->grad[i];
            }
        });
    }
    return r;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols()) shape_error("concat_rows", a, b);
    const std::size_t n = a.cols(), m1 = a.rows(), m2 = b.rows();
    std::vector<double> out;
    out.reserve((m1 + m2) * n);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Tape* tape = result_tape({&a, &b});
    Tensor r = make_result({m1 + m2, n}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), bn = b.node(), rn = r.node(), m1, n]() {
            an->ensure_grad();
            bn->ensure_grad();
            const std::size_t split = m1 * n;
            for (std::size_t i = 0; i < split; ++i) an->grad[i] += rn->grad[i];
            for (std::size_t i = split; i < rn->grad.size(); ++i) bn->grad[i - split] += rn->grad[i];
        });
    }
    return r;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.rows() != b.rows()) shape_error("concat_cols", a, b);
    const std::size_t m = a.rows(), n1 = a.cols(), n2 = b.cols();
    std::vector<double> out(m * (n1 + n2));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(&a.data()[i * n1], n1, &out[i * (n1 + n2)]);
        std::copy_n(&b.data()[i * n2], n2, &out[i * (n1 + n2) + n1]);
    }
    Tape* tape = result_tape({&a, &b});
    Tensor r = make_result({m, n1 + n2}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), bn = b.node(), rn = r.node(), m, n1, n2]() {
            an->ensure_grad();
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n1; ++j) an->grad[i * n1 + j] += rn->grad[i * (n1 + n2) + j];
                for (std::size_t j = 0; j < n2; ++j) bn->grad[i * n2 + j] += rn->grad[i * (n1 + n2) + n1 + j];
            }
        });
    }
    return r;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    if (a.shape().size() != 2) throw std::invalid_argument("gather_rows: input must be 2-D");
    const std::size_t n = a.cols();
    for (const auto i : idx) {
        if (i >= a.rows())
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range for " +
                                        std::to_string(a.rows()) + " rows");
    }
    std::vector<double> out(idx.size() * n);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(&a.data()[idx[r] * n], n, &out[r * n]);
    Tape* tape = result_tape({&a});
    Tensor r = make_result({idx.size(), n}, std::move(out), tape);
    if (tape) {
        tape->record([an = a.node(), rn = r.node(), idx, n]() {
            an->ensure_grad();
            for (std::size_t r2 = 0; r2 < idx.size(); ++r2) {
                for (std::size_t j = 0; j < n; ++j) an->grad[idx[r2] * n + j] += rn->grad[r2 * n + j];
            }
        });
    }
    return r;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (const double v : a.data()) s += v;
    Tape* tape = result_tape({&a});
    Tensor r = make_result({1}, {s}, tape);
    if (tape) {
        tape->record([an = a.node(), rn = r.node()]() {
            an->ensure_grad();
            const double g = rn->grad[0];
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        });
    }
    return r;
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
    if (scores.shape().size() != 2 || scores.rows() != mask.n_query || scores.cols() != mask.n_key) {
        throw std::invalid_argument("masked_softmax: scores " + shape_str(scores.shape()) +
                                    " do not match mask (" + std::to_string(mask.n_query) + "," +
                                    std::to_string(mask.n_key) + ")");
    }
    const std::size_t m = mask.n_query, n = mask.n_key;
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        // Sentinel-shifted scores; rows with no attendable entry are malformed.
        double rowmax = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double z = scores.at(i, j) + (mask.allowed(i, j) ? 0.0 : kForbidSentinel);
            if (z > rowmax) rowmax = z;
            any = any || mask.allowed(i, j);
        }
        if (!any) {
            throw std::invalid_argument("masked_softmax: fully forbidden row " + std::to_string(i) +
                                        " (malformed mask)");
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double z = scores.at(i, j) + (mask.allowed(i, j) ? 0.0 : kForbidSentinel);
            const double e = std::exp(z - rowmax);
            out[i * n + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] /= denom;
            if (!mask.allowed(i, j)) out[i * n + j] = 0.0;  // exact-zero posterior
        }
    }
    Tape* tape = result_tape({&scores});
    Tensor r = make_result({m, n}, std::move(out), tape);
    if (tape) {
        tape->record([sn = scores.node(), rn = r.node(), m, n]() {
            sn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* p = &rn->value[i * n];
                const double* g = &rn->grad[i * n];
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * p[j];
                for (std::size_t j = 0; j < n; ++j) sn->grad[i * n + j] += p[j] * (g[j] - dot);
            }
        });
    }
    return r;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<std::size_t>& targets,
                          const std::vector<std::uint8_t>& selected, Reduction reduction) {
    if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy_loss: logits must be 2-D");
    const std::size_t m = logits.rows(), v = logits.cols();
    if (targets.size() != m)
        throw std::invalid_argument("cross_entropy_loss: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(m) + " rows");
    if (!selected.empty() && selected.size() != m)
        throw std::invalid_argument("cross_entropy_loss: selection size mismatch");
    std::vector<std::size_t> rows;
    rows.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (selected.empty() || selected[i]) rows.push_back(i);
    }
    if (rows.empty()) throw std::invalid_argument("cross_entropy_loss: empty position selection");
    for (const auto i : rows) {
        if (targets[i] >= v)
            throw std::invalid_argument("cross_entropy_loss: target " + std::to_string(targets[i]) +
                                        " out of vocab " + std::to_string(v));
    }

    double total = 0.0;
    for (const auto i : rows) {
        const double* row = &logits.data()[i * v];
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
        total += (mx + std::log(lse)) - row[targets[i]];
    }
    const double denom = reduction == Reduction::Mean ? static_cast<double>(rows.size()) : 1.0;
    Tape* tape = result_tape({&logits});
    Tensor r = make_result({1}, {total / denom}, tape);
    if (tape) {
        tape->record([ln = logits.node(), rn = r.node(), rows, targets, v, denom]() {
            ln->ensure_grad();
            const double g = rn->grad[0] / denom;
            for (const auto i : rows) {
                const double* row = &ln->value[i * v];
                double mx = row[0];
                for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                double lse = 0.0;
                for (std::size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
                for (std::size_t j = 0; j < v; ++j) {
                    const double p = std::exp(row[j] - mx) / lse;
                    ln->grad[i * v + j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return r;
}

Tensor mse_loss(const Tensor& pred, const std::vector<double>& targets) {
    if (pred.numel() != targets.size())
        throw std::invalid_argument("mse_loss: " + std::to_string(pred.numel()) + " predictions vs " +
                                    std::to_string(targets.size()) + " targets");
    if (targets.empty()) throw std::invalid_argument("mse_loss: empty targets");
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double d = pred.data()[i] - targets[i];
        total += d * d;
    }
    const double denom = static_cast<double>(targets.size());
    Tape* tape = result_tape({&pred});
    Tensor r = make_result({1}, {total / denom}, tape);
    if (tape) {
        tape->record([pn = pred.node(), rn = r.node(), targets, denom]() {
            pn->ensure_grad();
            const double g = rn->grad[0];
            for (std::size_t i = 0; i < targets.size(); ++i) {
                pn->grad[i] += g * 2.0 * (pn->value[i] - targets[i]) / denom;
            }
        });
    }
    return r;
}

// ---- AdamW ------------------------------------------------------------------

void AdamW::step(std::vector<Param>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].value.numel(), 0.0);
            v_[i].assign(params[i].value.numel(), 0.0);
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("AdamW::step: parameter group size changed");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto node = p.value.node();
        node->ensure_grad();
        if (node->grad.size() != m_[i].size())
            throw std::invalid_argument("AdamW::step: gradient shape mismatch for parameter '" + p.name + "'");
        const double wd = p.decay == DecayMode::Regular ? opts_.weight_decay : 0.0;
        for (std::size_t j = 0; j < m_[i].size(); ++j) {
            const double g = node->grad[j];
            m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g;
            v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            node->value[j] -= opts_.learning_rate * (mhat / (std::sqrt(vhat) + opts_.epsilon) + wd * node->value[j]);
        }
    }
}

void AdamW::zero_grad(std::vector<Param>& params) {
    for (auto& p : params) p.value.zero_grad();
}

// ---- Gradient verification ---------------------------------------------------

void backward_and_check(Tape& tape, const Tensor& loss, const std::vector<Param>& params) {
    tape.backward(loss);
    for (const auto& p : params) {
        for (const double g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("backward_and_check: non-finite gradient in parameter '" + p.name + "'");
            }
        }
    }
}

GradCheckReport check_gradients(Tape& tape, const std::function<Tensor()>& make_loss,
                                std::vector<Param>& params, double epsilon, std::size_t coords_per_tensor,
                                Rng& rng) {
    for (auto& p : params) p.value.zero_grad();
    tape.clear();
    Tensor loss = make_loss();
    backward_and_check(tape, loss, params);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.value.grad());
    tape.clear();

    GradCheckReport report;
    Tape::NoGrad pause(tape);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].value;
        const std::size_t n = value.numel();
        std::vector<std::size_t> coords;
        if (n <= coords_per_tensor) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            coords = rng.sample_distinct(n, coords_per_tensor);
        }
        for (const auto c : coords) {
            const double saved = value.data()[c];
            value.data()[c] = saved + epsilon;
            const double up = make_loss().scalar();
            value.data()[c] = saved - epsilon;
            const double down = make_loss().scalar();
            value.data()[c] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi][c];
            // Floor keeps finite-difference roundoff (~1e-10 absolute at
            // eps=1e-5 on O(1) losses) from registering as relative error.
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].name;
                report.worst_index = c;
            }
        }
    }
    return report;
}

}  // namespace cate
