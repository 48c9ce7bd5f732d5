#pragma once

// Reverse-mode differentiation over dense Eigen matrices. Sequences of tokens
// are stored one token per row.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/errors.hpp"

namespace delayprop::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Trainable tensor with its accumulated gradient.
template <typename S>
struct Parameter {
    std::string name;
    Matrix<S> value;
    Matrix<S> grad;

    Parameter() = default;
    Parameter(std::string n, Matrix<S> v) : name(std::move(n)), value(std::move(v)), grad(Matrix<S>::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
using ParamList = std::vector<Parameter<S>*>;

/// Glorot-uniform initial weights.
template <typename S, typename Rng>
Matrix<S> glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix<S> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<S>(u(rng));
    }
    return m;
}

template <typename S>
class Tape;

/// Handle to a node on a tape.
template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    std::size_t id = 0;

    const Matrix<S>& value() const { return tape->value(*this); }
    const Matrix<S>& grad() const { return tape->grad(*this); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

template <typename S>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Var<S> constant(Matrix<S> m) { return push(std::move(m), false, nullptr); }
    Var<S> variable(Matrix<S> m) { return push(std::move(m), true, nullptr); }
    Var<S> param(Parameter<S>& p) { return push(p.value, true, nullptr, &p); }

    /// Records an op result; `backward` is only stored when a parent needs it.
    Var<S> record(Matrix<S> m, std::initializer_list<Var<S>> parents, Backward backward) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
        return push(std::move(m), needs, needs ? std::move(backward) : nullptr);
    }
    Var<S> record(Matrix<S> m, const std::vector<Var<S>>& parents, Backward backward) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
        return push(std::move(m), needs, needs ? std::move(backward) : nullptr);
    }

    const Matrix<S>& value(Var<S> v) const { return nodes_[v.id].value; }
    const Matrix<S>& grad(Var<S> v) {
        auto& n = nodes_[v.id];
        if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool needs_grad(Var<S> v) const { return nodes_[v.id].needs_grad; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    const Matrix<S>& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix<S>& out_grad(std::size_t id) const { return nodes_[id].grad; }

    /// grad(id) += g, allocating on first use.
    template <typename Expr>
    void accumulate(std::size_t id, const Expr& g) {
        auto& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Back-propagates from a 1x1 node and adds leaf gradients into parameters.
    void backward(Var<S> loss) {
        if (value(loss).size() != 1) throw NumericError("backward needs a scalar loss");
        nodes_[loss.id].grad = Matrix<S>::Ones(1, 1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param) n.param->grad += n.grad;
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Matrix<S> value;
        Matrix<S> grad;
        bool needs_grad = false;
        Backward backward;
        Parameter<S>* param = nullptr;
    };

    Var<S> push(Matrix<S> m, bool needs, Backward backward, Parameter<S>* p = nullptr) {
        nodes_.push_back({std::move(m), Matrix<S>(), needs, std::move(backward), p});
        return {this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw DataError(std::string("shape mismatch in ") + what);
}

}  // namespace detail

// --- primitives -------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    detail::require(a.cols() == b.rows(), "matmul");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(a.value() * b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, t.out_grad(self));
        t.accumulate(ib, t.out_grad(self));
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, t.out_grad(self));
        t.accumulate(ib, -t.out_grad(self));
    });
}

/// Adds a 1 x n row to every row of a.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
    detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
    const std::size_t ia = a.id, ir = row.id;
    Matrix<S> out = a.value().rowwise() + row.value().row(0);
    return a.tape->record(std::move(out), {a, row}, [ia, ir](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, t.out_grad(self));
        t.accumulate(ir, t.out_grad(self).colwise().sum());
    });
}

template <typename S>
Var<S> cwise_mul(Var<S> a, Var<S> b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_mul");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
    const std::size_t ia = a.id;
    return a.tape->record(a.value() * s, {a}, [ia, s](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, t.out_grad(self) * s);
    });
}

template <typename S>
Var<S> transpose(Var<S> a) {
    const std::size_t ia = a.id;
    return a.tape->record(a.value().transpose(), {a}, [ia](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, t.out_grad(self).transpose());
    });
}

template <typename S>
Var<S> relu(Var<S> a) {
    const std::size_t ia = a.id;
    return a.tape->record(a.value().cwiseMax(S(0)), {a}, [ia](Tape<S>& t, std::size_t self) {
        const auto& x = t.value(ia);
        t.accumulate(ia, (x.array() > S(0)).select(t.out_grad(self), S(0)).matrix());
    });
}

/// Leaky ReLU with a learnable 1x1 slope.
template <typename S>
Var<S> prelu(Var<S> x, Var<S> slope) {
    detail::require(slope.rows() == 1 && slope.cols() == 1, "prelu");
    const std::size_t ix = x.id, is = slope.id;
    const S a = slope.value()(0, 0);
    Matrix<S> out = (x.value().array() > S(0)).select(x.value(), a * x.value());
    return x.tape->record(std::move(out), {x, slope}, [ix, is](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& v = t.value(ix);
        const S a = t.value(is)(0, 0);
        const auto pos = (v.array() > S(0));
        if (t.needs_grad(ix)) t.accumulate(ix, pos.select(g, a * g).matrix());
        if (t.needs_grad(is)) {
            Matrix<S> ds(1, 1);
            ds(0, 0) = pos.select(S(0), g.cwiseProduct(v)).sum();
            t.accumulate(is, ds);
        }
    });
}

template <typename S>
Matrix<S> softmax_rows_value(const Matrix<S>& x) {
    Matrix<S> out = x.colwise() - x.rowwise().maxCoeff();
    out = out.array().exp().matrix();
    out = out.array().colwise() / out.rowwise().sum().array();
    return out;
}

template <typename S>
Var<S> softmax_rows(Var<S> a) {
    const std::size_t ia = a.id;
    return a.tape->record(softmax_rows_value(a.value()), {a}, [ia](Tape<S>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& g = t.out_grad(self);
        const Matrix<S> inner = g.cwiseProduct(y).rowwise().sum();
        t.accumulate(ia, y.cwiseProduct((g.colwise() - inner.col(0))));
    });
}

/// Per-row normalization followed by a learned gain and shift (1 x n each).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> shift, S eps = S(1e-5)) {
    detail::require(gain.cols() == x.cols() && shift.cols() == x.cols(), "layer_norm");
    const Eigen::Index n = x.cols();
    const Matrix<S> mean = x.value().rowwise().mean();
    const Matrix<S> centred = x.value().colwise() - mean.col(0);
    const Matrix<S> inv_std =
        (centred.array().square().rowwise().sum() / S(n) + eps).rsqrt().matrix();
    const Matrix<S> xhat = centred.array().colwise() * inv_std.col(0).array();
    Matrix<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += shift.value().row(0);
    const std::size_t ix = x.id, ig = gain.id, ib = shift.id;
    auto saved = std::make_shared<std::pair<Matrix<S>, Matrix<S>>>(xhat, inv_std);
    return x.tape->record(std::move(out), {x, gain, shift}, [ix, ig, ib, saved, n](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& [xhat, inv_std] = *saved;
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.needs_grad(ix)) {
            const Matrix<S> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
            const Matrix<S> m1 = dxhat.rowwise().mean();
            const Matrix<S> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
            Matrix<S> dx = dxhat.colwise() - m1.col(0);
            dx -= (xhat.array().colwise() * m2.col(0).array()).matrix();
            dx = dx.array().colwise() * inv_std.col(0).array();
            t.accumulate(ix, dx);
        }
        (void)n;
    });
}

/// Inverted dropout; identity when `train` is false or p is 0.
template <typename S, typename Rng>
Var<S> dropout(Var<S> x, double p, Rng& rng, bool train) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
    if (!train || p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    Matrix<S> mask(x.rows(), x.cols());
    const S kept = S(1.0 / (1.0 - p));
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? kept : S(0);
    }
    return cwise_mul(x, x.tape->constant(std::move(mask)));
}

/// Rows of `table` picked by index (embedding lookup).
template <typename S>
Var<S> gather_rows(Var<S> table, const std::vector<int>& index) {
    Matrix<S> out(static_cast<Eigen::Index>(index.size()), table.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        detail::require(index[i] >= 0 && index[i] < table.rows(), "gather_rows");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(index[i]);
    }
    const std::size_t it = table.id;
    return table.tape->record(std::move(out), {table}, [it, index](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        Matrix<S> d = Matrix<S>::Zero(t.value(it).rows(), t.value(it).cols());
        for (std::size_t i = 0; i < index.size(); ++i) d.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(it, d);
    });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw DataError("concat_cols of nothing");
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        detail::require(p.rows() == parts.front().rows(), "concat_cols");
        cols += p.cols();
    }
    Tape<S>& tape = *parts.front().tape;
    Matrix<S> out(parts.front().rows(), cols);
    std::vector<std::pair<std::size_t, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        spans.push_back({p.id, at});
        at += p.cols();
    }
    return tape.record(std::move(out), parts, [spans](Tape<S>& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        for (const auto& [id, start] : spans) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
    detail::require(start >= 0 && start + count <= a.cols(), "slice_cols");
    const std::size_t ia = a.id;
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return a.tape->record(a.value().middleCols(start, count), {a}, [ia, start, count, rows, cols](Tape<S>& t, std::size_t self) {
        Matrix<S> d = Matrix<S>::Zero(rows, cols);
        d.middleCols(start, count) = t.out_grad(self);
        t.accumulate(ia, d);
    });
}

template <typename S>
Var<S> sum(Var<S> a) {
    Matrix<S> out(1, 1);
    out(0, 0) = a.value().sum();
    const std::size_t ia = a.id;
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape->record(std::move(out), {a}, [ia, r, c](Tape<S>& t, std::size_t self) {
        t.accumulate(ia, Matrix<S>::Constant(r, c, t.out_grad(self)(0, 0)));
    });
}

template <typename S>
Var<S> mean(Var<S> a) {
    return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

/// Mean absolute error over entries where mask is non-zero (0 if none).
template <typename S>
Var<S> masked_l1(Var<S> pred, const Matrix<S>& target, const Matrix<S>& mask) {
    detail::require(pred.rows() == target.rows() && pred.cols() == target.cols() && mask.rows() == target.rows() &&
                        mask.cols() == target.cols(),
                    "masked_l1");
    const S count = std::max(mask.sum(), S(1));
    const Matrix<S> diff = pred.value() - target;
    Matrix<S> out(1, 1);
    out(0, 0) = diff.cwiseAbs().cwiseProduct(mask).sum() / count;
    const std::size_t ip = pred.id;
    Matrix<S> dsign = diff.unaryExpr([](S v) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); }).cwiseProduct(mask) / count;
    return pred.tape->record(std::move(out), {pred}, [ip, dsign = std::move(dsign)](Tape<S>& t, std::size_t self) {
        t.accumulate(ip, dsign * t.out_grad(self)(0, 0));
    });
}

template <typename S>
Var<S> mse(Var<S> pred, const Matrix<S>& target) {
    detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse");
    const Matrix<S> diff = pred.value() - target;
    Matrix<S> out(1, 1);
    out(0, 0) = diff.squaredNorm() / static_cast<S>(diff.size());
    const std::size_t ip = pred.id;
    Matrix<S> d = diff * (S(2) / static_cast<S>(diff.size()));
    return pred.tape->record(std::move(out), {pred}, [ip, d = std::move(d)](Tape<S>& t, std::size_t self) {
        t.accumulate(ip, d * t.out_grad(self)(0, 0));
    });
}

/// Mean softmax cross-entropy of each row against its label.
template <typename S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
    detail::require(static_cast<Eigen::Index>(labels.size()) == logits.rows(), "cross_entropy");
    const Matrix<S> p = softmax_rows_value(logits.value());
    const S n = static_cast<S>(labels.size());
    Matrix<S> out(1, 1);
    out(0, 0) = 0;
    Matrix<S> d = p / n;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        detail::require(labels[i] >= 0 && labels[i] < logits.cols(), "cross_entropy label");
        const auto r = static_cast<Eigen::Index>(i);
        out(0, 0) -= std::log(std::max(p(r, labels[i]), std::numeric_limits<S>::min())) / n;
        d(r, labels[i]) -= S(1) / n;
    }
    const std::size_t il = logits.id;
    return logits.tape->record(std::move(out), {logits}, [il, d = std::move(d)](Tape<S>& t, std::size_t self) {
        t.accumulate(il, d * t.out_grad(self)(0, 0));
    });
}

template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S> Var<S> operator*(Var<S> a, Var<S> b) { return matmul(a, b); }
template <typename S> Var<S> operator*(S s, Var<S> a) { return scale(a, s); }

// --- layers -----------------------------------------------------------------

template <typename S>
struct Linear {
    Parameter<S> weight;  // in x out
    Parameter<S> bias;    // 1 x out

    Linear() = default;
    template <typename Rng>
    Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
        : weight(name + ".weight", glorot<S>(in, out, rng)), bias(name + ".bias", Matrix<S>::Zero(1, out)) {}

    Var<S> operator()(Tape<S>& t, Var<S> x) { return add_row(matmul(x, t.param(weight)), t.param(bias)); }
    void collect(ParamList<S>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <typename S>
struct PReLU {
    Parameter<S> slope;

    PReLU() = default;
    explicit PReLU(const std::string& name, S init = S(0.25)) : slope(name + ".slope", Matrix<S>::Constant(1, 1, init)) {}

    Var<S> operator()(Tape<S>& t, Var<S> x) { return prelu(x, t.param(slope)); }
    void collect(ParamList<S>& out) { out.push_back(&slope); }
};

template <typename S>
struct LayerNorm {
    Parameter<S> gain;
    Parameter<S> shift;

    LayerNorm() = default;
    LayerNorm(const std::string& name, Eigen::Index dim)
        : gain(name + ".gain", Matrix<S>::Ones(1, dim)), shift(name + ".shift", Matrix<S>::Zero(1, dim)) {}

    Var<S> operator()(Tape<S>& t, Var<S> x) { return layer_norm(x, t.param(gain), t.param(shift)); }
    void collect(ParamList<S>& out) { out.push_back(&gain); out.push_back(&shift); }
};

/// Output of self-attention: projected outputs and one weight matrix per head
/// (row i holds the distribution of token i over all tokens).
template <typename S>
struct AttentionResult {
    Var<S> output;
    std::vector<Matrix<S>> weights;
};

/// Multi-head self-attention without positional information.
template <typename S>
struct MultiHeadAttention {
    int heads = 1;
    Eigen::Index d_model = 0;
    Eigen::Index d_head = 0;
    bool scaled = true;  // divide scores by sqrt(d_head)
    std::vector<Parameter<S>> query, key, value;
    Linear<S> out;

    MultiHeadAttention() = default;
    template <typename Rng>
    MultiHeadAttention(const std::string& name, Eigen::Index model_dim, int n_heads, Rng& rng, bool scale_scores = true)
        : heads(n_heads), d_model(model_dim), scaled(scale_scores) {
        if (n_heads < 1 || model_dim % n_heads != 0) throw ConfigError("d_model must be a positive multiple of the head count");
        d_head = model_dim / n_heads;
        for (int h = 0; h < heads; ++h) {
            const auto p = name + ".head" + std::to_string(h);
            query.emplace_back(p + ".query", glorot<S>(d_model, d_head, rng));
            key.emplace_back(p + ".key", glorot<S>(d_model, d_head, rng));
            value.emplace_back(p + ".value", glorot<S>(d_model, d_head, rng));
        }
        out = Linear<S>(name + ".out", d_model, d_model, rng);
    }

    AttentionResult<S> operator()(Tape<S>& t, Var<S> x) {
        if (x.rows() < 1) throw DataError("self-attention needs at least one token");
        detail::require(x.cols() == d_model, "self_attention");
        AttentionResult<S> result;
        std::vector<Var<S>> per_head;
        const S factor = scaled ? S(1) / std::sqrt(static_cast<S>(d_head)) : S(1);
        for (int h = 0; h < heads; ++h) {
            const auto q = matmul(x, t.param(query[h]));
            const auto k = matmul(x, t.param(key[h]));
            const auto v = matmul(x, t.param(value[h]));
            const auto w = softmax_rows(scale(matmul(q, transpose(k)), factor));
            result.weights.push_back(w.value());
            per_head.push_back(matmul(w, v));
        }
        result.output = out(t, heads == 1 ? per_head.front() : concat_cols(per_head));
        return result;
    }

    void collect(ParamList<S>& list) {
        for (int h = 0; h < heads; ++h) {
            list.push_back(&query[h]);
            list.push_back(&key[h]);
            list.push_back(&value[h]);
        }
        out.collect(list);
    }
};

/// Post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
template <typename S>
struct EncoderLayer {
    MultiHeadAttention<S> attention;
    LayerNorm<S> norm1, norm2;
    Linear<S> ff1, ff2;
    double dropout_p = 0.1;

    EncoderLayer() = default;
    template <typename Rng>
    EncoderLayer(const std::string& name, Eigen::Index d_model, int heads, Eigen::Index d_ff, double p, Rng& rng)
        : attention(name + ".attention", d_model, heads, rng),
          norm1(name + ".norm1", d_model),
          norm2(name + ".norm2", d_model),
          ff1(name + ".ff1", d_model, d_ff, rng),
          ff2(name + ".ff2", d_ff, d_model, rng),
          dropout_p(p) {}

    template <typename Rng>
    Var<S> operator()(Tape<S>& t, Var<S> x, Rng& rng, bool train, std::vector<Matrix<S>>* weights = nullptr) {
        auto att = attention(t, x);
        if (weights) *weights = std::move(att.weights);
        x = norm1(t, x + dropout(att.output, dropout_p, rng, train));
        const auto ff = ff2(t, relu(ff1(t, x)));
        return norm2(t, x + dropout(ff, dropout_p, rng, train));
    }

    void collect(ParamList<S>& list) {
        attention.collect(list);
        norm1.collect(list);
        norm2.collect(list);
        ff1.collect(list);
        ff2.collect(list);
    }
};

template <typename S>
struct Encoder {
    std::vector<EncoderLayer<S>> layers;

    Encoder() = default;
    template <typename Rng>
    Encoder(const std::string& name, int depth, Eigen::Index d_model, int heads, Eigen::Index d_ff, double p, Rng& rng) {
        for (int l = 0; l < depth; ++l) layers.emplace_back(name + ".layer" + std::to_string(l), d_model, heads, d_ff, p, rng);
    }

    /// `weights`, when given, receives per layer the per-head attention maps.
    template <typename Rng>
    Var<S> operator()(Tape<S>& t, Var<S> x, Rng& rng, bool train,
                      std::vector<std::vector<Matrix<S>>>* weights = nullptr) {
        if (weights) weights->assign(layers.size(), {});
        for (std::size_t l = 0; l < layers.size(); ++l) x = layers[l](t, x, rng, train, weights ? &(*weights)[l] : nullptr);
        return x;
    }

    void collect(ParamList<S>& list) {
        for (auto& l : layers) l.collect(list);
    }
};

// --- optimisation -----------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
class Adam {
public:
    Adam(ParamList<S> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto* p : params_) {
            m_.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    /// One bias-corrected update from the accumulated gradients.
    void step() {
        ++t_;
        const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
        const S c1 = S(1) - std::pow(b1, S(t_));
        const S c2 = S(1) - std::pow(b2, S(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
            v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseAbs2();
            const auto m_hat = m_[i].array() / c1;
            const auto v_hat = v_[i].array() / c2;
            p.value.array() -= S(cfg_.lr) * m_hat / (v_hat.sqrt() + S(cfg_.eps));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    AdamConfig& config() { return cfg_; }
    std::int64_t steps() const { return t_; }

private:
    ParamList<S> params_;
    AdamConfig cfg_;
    std::vector<Matrix<S>> m_, v_;
    std::int64_t t_ = 0;
};

// --- gradient checking ------------------------------------------------------

namespace detail {

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value during ") + what);
}

}  // namespace detail

/// Largest relative error between reverse-mode and central-difference
/// gradients of f at x (step h).
inline double grad_check(const std::function<Var<double>(Tape<double>&, Var<double>)>& f, const Matrix<double>& x,
                         double h = 1e-5) {
    Tape<double> tape;
    const auto input = tape.variable(x);
    const auto loss = f(tape, input);
    detail::require_finite(loss.value()(0, 0), "grad_check");
    tape.backward(loss);
    const Matrix<double> analytic = tape.grad(input);
    double worst = 0.0;
    Matrix<double> probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = probe(i);
        auto eval = [&](double at) {
            probe(i) = at;
            Tape<double> t;
            const double v = f(t, t.constant(probe)).value()(0, 0);
            detail::require_finite(v, "grad_check");
            return v;
        };
        const double numeric = (eval(saved + h) - eval(saved - h)) / (2 * h);
        probe(i) = saved;
        worst = std::max(worst, detail::relative_error(analytic(i), numeric));
    }
    return worst;
}

/// Same check over every coordinate of a parameter list; `loss` builds the
/// scalar on a fresh tape from the current parameter values.
inline double grad_check_params(const std::function<Var<double>(Tape<double>&)>& loss, const ParamList<double>& params,
                                double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<double> tape;
        const auto l = loss(tape);
        detail::require_finite(l.value()(0, 0), "grad_check");
        tape.backward(l);
    }
    double worst = 0.0;
    for (auto* p : params) {
        const Matrix<double> analytic = p->grad;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = p->value(i);
            auto eval = [&](double at) {
                p->value(i) = at;
                Tape<double> t;
                const double v = loss(t).value()(0, 0);
                detail::require_finite(v, "grad_check");
                return v;
            };
            const double numeric = (eval(saved + h) - eval(saved - h)) / (2 * h);
            p->value(i) = saved;
            worst = std::max(worst, detail::relative_error(analytic(i), numeric));
        }
    }
    return worst;
}

// --- checkpoints ------------------------------------------------------------

/// Writes named tensors as a JSON header (shapes, offsets, `meta`) followed by
/// little-endian float64 data in column-major order.
void save_checkpoint(const std::string& path, const ParamList<double>& params, const nlohmann::json& meta);

/// Loads tensors by name into `params`; shapes must match. Returns `meta`.
nlohmann::json load_checkpoint(const std::string& path, const ParamList<double>& params);

}  // namespace delayprop::nn
