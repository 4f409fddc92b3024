#pragma once

// Define-by-run reverse-mode autodiff. A tape is built fresh for every
// forward pass: each op appends a node holding its output value and a
// closure that scatters adjoints back to its parents. Creation order is
// topological order, so backward is a single reverse sweep.
//
// Tapes are single-writer: one tape per thread, no sharing. Parameters enter
// a tape by value, so the optimizer can update the originals while older
// tapes stay self-consistent.

#include <cmath>
#include <functional>
#include <limits>

#include "scai/kernels.hpp"
#include "scai/tensor.hpp"

namespace scai {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <class T>
class TapeT {
public:
    // --- graph construction ---

    Var input(TensorT<T> value, bool requires_grad) {
        return push(std::move(value), requires_grad, {});
    }

    Var constant(TensorT<T> value) { return push(std::move(value), false, {}); }

    Var add(Var a, Var b) { return binary_elementwise(a, b, /*sub=*/false); }
    Var sub(Var a, Var b) { return binary_elementwise(a, b, /*sub=*/true); }

    Var scale(Var a, T s) {
        TensorT<T> out = value(a);
        for (auto& v : out.data) v *= s;
        Var r = push(std::move(out), needs_grad(a), {a});
        if (needs_grad(a)) {
            set_backward(r, [a, s](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                TensorT<T>& ga = t.grad_buf(a);
                for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
            });
        }
        return r;
    }

    Var relu(Var a) {
        TensorT<T> out = value(a);
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
        Var r = push(std::move(out), needs_grad(a), {a});
        if (needs_grad(a)) {
            // Subgradient at exactly zero is zero.
            set_backward(r, [a](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                const TensorT<T>& x = t.value(a);
                TensorT<T>& ga = t.grad_buf(a);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (x.data[i] > T(0)) ga.data[i] += g.data[i];
            });
        }
        return r;
    }

    Var conv2d(Var in, Var weight, Var bias, int dilation = 1) {
        TensorT<T> out;
        conv2d_forward(value(in), value(weight), value(bias), dilation, out);
        const bool rg = needs_grad(in) || needs_grad(weight) || needs_grad(bias);
        Var r = push(std::move(out), rg, {in, weight, bias});
        if (rg) {
            set_backward(r, [in, weight, bias, dilation](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                if (t.needs_grad(in)) {
                    TensorT<T> gi;
                    conv2d_backward_input(g, t.value(weight), dilation, gi);
                    accumulate(t.grad_buf(in), gi);
                }
                if (t.needs_grad(weight) || t.needs_grad(bias)) {
                    TensorT<T> gw, gb;
                    conv2d_backward_weight(t.value(in), g, t.value(weight).shape[2], dilation, gw, gb);
                    if (t.needs_grad(weight)) accumulate(t.grad_buf(weight), gw);
                    if (t.needs_grad(bias)) accumulate(t.grad_buf(bias), gb);
                }
            });
        }
        return r;
    }

    Var dense(Var x, Var weight, Var bias) {
        TensorT<T> out;
        dense_forward(value(x), value(weight), value(bias), out);
        const bool rg = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
        Var r = push(std::move(out), rg, {x, weight, bias});
        if (rg) {
            set_backward(r, [x, weight, bias](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                TensorT<T> gx, gw, gb;
                dense_backward(t.value(x), t.value(weight), g, gx, gw, gb);
                if (t.needs_grad(x)) accumulate(t.grad_buf(x), gx);
                if (t.needs_grad(weight)) accumulate(t.grad_buf(weight), gw);
                if (t.needs_grad(bias)) accumulate(t.grad_buf(bias), gb);
            });
        }
        return r;
    }

    // Stacks [C_i,H,W] inputs along the channel axis.
    Var concat_channels(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
        int ctotal = 0;
        const Shape& s0 = value(parts[0]).shape;
        if (s0.size() != 3) throw std::invalid_argument("concat_channels: inputs must be [C,H,W]");
        bool rg = false;
        for (Var p : parts) {
            const Shape& s = value(p).shape;
            if (s.size() != 3 || s[1] != s0[1] || s[2] != s0[2])
                throw std::invalid_argument("concat_channels: spatial shape mismatch");
            ctotal += s[0];
            rg = rg || needs_grad(p);
        }
        TensorT<T> out({ctotal, s0[1], s0[2]});
        std::size_t off = 0;
        for (Var p : parts) {
            const TensorT<T>& v = value(p);
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
            off += v.numel();
        }
        Var r = push(std::move(out), rg, parts);
        if (rg) {
            auto ps = parts;
            set_backward(r, [ps](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                std::size_t off = 0;
                for (Var p : ps) {
                    const std::size_t n = t.value(p).numel();
                    if (t.needs_grad(p)) {
                        TensorT<T>& gp = t.grad_buf(p);
                        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
                    }
                    off += n;
                }
            });
        }
        return r;
    }

    Var sum(Var a) { return reduce(a, /*mean=*/false); }
    Var mean(Var a) { return reduce(a, /*mean=*/true); }

    // Euclidean norm over all elements: sqrt(sum x^2). Gradient at the origin
    // is defined as zero.
    Var l2norm(Var a) {
        const TensorT<T>& x = value(a);
        T acc = T(0);
        for (T v : x.data) acc += v * v;
        const T norm = std::sqrt(acc);
        Var r = push(TensorT<T>::scalar(norm), needs_grad(a), {a});
        if (needs_grad(a)) {
            set_backward(r, [a, norm](TapeT& t, int self) {
                if (norm == T(0)) return;
                const T g = t.node(self).grad.data[0];
                const TensorT<T>& x = t.value(a);
                TensorT<T>& ga = t.grad_buf(a);
                const T inv = g / norm;
                for (std::size_t i = 0; i < x.numel(); ++i) ga.data[i] += inv * x.data[i];
            });
        }
        return r;
    }

    // --- execution ---

    // Reverse sweep from a scalar loss. Adjoint buffers are reset first, so
    // repeated calls on one tape (e.g. two losses sharing a graph) work.
    void backward(Var loss) {
        if (nodes_.empty()) throw std::logic_error("backward: empty tape");
        check_var(loss);
        if (!node(loss.id).value.is_scalar())
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(node(loss.id).value.shape));
        for (auto& n : nodes_) {
            n.grad.shape = n.value.shape;
            n.grad.data.assign(n.value.numel(), T(0));
        }
        node(loss.id).grad.data[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward_fn) continue;
            bool nonzero = false;
            for (T v : n.grad.data)
                if (v != T(0)) { nonzero = true; break; }
            if (nonzero) n.backward_fn(*this, i);
        }
        ran_backward_ = true;
    }

    // Gradient of the last backward() w.r.t. an input var. Inputs that were
    // never reached keep their zero-filled buffer.
    const TensorT<T>& grad(Var v) {
        check_var(v);
        if (!ran_backward_) throw std::logic_error("grad: backward() has not run");
        if (!node(v.id).requires_grad)
            throw std::invalid_argument("grad: var does not require gradients");
        return node(v.id).grad;
    }

    const TensorT<T>& value(Var v) const {
        check_var(v);
        return nodes_[v.id].value;
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        ran_backward_ = false;
    }

    bool needs_grad(Var v) const {
        check_var(v);
        return nodes_[v.id].requires_grad;
    }

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        bool requires_grad = false;
        std::function<void(TapeT&, int)> backward_fn;
    };

    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }
    Node& node(Var v) { return nodes_[v.id]; }

    TensorT<T>& grad_buf(Var v) { return nodes_[v.id].grad; }

    void check_var(Var v) const {
        if (v.id < 0 || v.id >= int(nodes_.size()))
            throw std::invalid_argument("invalid tape var");
    }

    Var push(TensorT<T> value, bool requires_grad, const std::vector<Var>& parents) {
        for (Var p : parents) check_var(p);
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{int(nodes_.size()) - 1};
    }

    void set_backward(Var v, std::function<void(TapeT&, int)> fn) {
        node(v).backward_fn = std::move(fn);
    }

    static void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
        for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
    }

    Var binary_elementwise(Var a, Var b, bool is_sub) {
        check_same_shape(value(a), value(b), is_sub ? "sub" : "add");
        TensorT<T> out = value(a);
        const TensorT<T>& vb = value(b);
        if (is_sub)
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
        else
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        const bool rg = needs_grad(a) || needs_grad(b);
        Var r = push(std::move(out), rg, {a, b});
        if (rg) {
            set_backward(r, [a, b, is_sub](TapeT& t, int self) {
                const TensorT<T>& g = t.node(self).grad;
                if (t.needs_grad(a)) accumulate(t.grad_buf(a), g);
                if (t.needs_grad(b)) {
                    TensorT<T>& gb = t.grad_buf(b);
                    if (is_sub)
                        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
                    else
                        accumulate(gb, g);
                }
            });
        }
        return r;
    }

    Var reduce(Var a, bool is_mean) {
        const TensorT<T>& x = value(a);
        T acc = T(0);
        for (T v : x.data) acc += v;
        const T denom = is_mean ? T(x.numel()) : T(1);
        Var r = push(TensorT<T>::scalar(acc / denom), needs_grad(a), {a});
        if (needs_grad(a)) {
            set_backward(r, [a, denom](TapeT& t, int self) {
                const T g = t.node(self).grad.data[0] / denom;
                TensorT<T>& ga = t.grad_buf(a);
                for (auto& v : ga.data) v += g;
            });
        }
        return r;
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

// Compares tape gradients against central finite differences. `build` must
// construct the same scalar loss from whatever parameter values it is given;
// it runs once on the tape for analytic gradients and 2*numel more times for
// the numeric ones. Returns the worst relative error over all coordinates,
// where a coordinate's error is |a - n| / max(|a|, |n|, floor) so that
// exactly-zero pairs report 0.
template <class T>
T finite_diff_check(const std::function<Var(TapeT<T>&, const std::vector<Var>&)>& build,
                    std::vector<TensorT<T>> point, T eps, T floor = T(1e-6)) {
    if (eps <= T(0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");
    TapeT<T> tape;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const auto& p : point) vars.push_back(tape.input(p, true));
    const Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<TensorT<T>> analytic;
    analytic.reserve(point.size());
    for (Var v : vars) analytic.push_back(tape.grad(v));

    auto eval = [&](const std::vector<TensorT<T>>& at) {
        TapeT<T> t;
        std::vector<Var> vs;
        vs.reserve(at.size());
        for (const auto& p : at) vs.push_back(t.input(p, false));
        const Var l = build(t, vs);
        if (!t.value(l).is_scalar())
            throw std::invalid_argument("finite_diff_check: fn must produce a scalar");
        return t.value(l).data[0];
    };

    T worst = T(0);
    for (std::size_t pi = 0; pi < point.size(); ++pi) {
        for (std::size_t i = 0; i < point[pi].numel(); ++i) {
            const T orig = point[pi].data[i];
            point[pi].data[i] = orig + eps;
            const T fp = eval(point);
            point[pi].data[i] = orig - eps;
            const T fm = eval(point);
            point[pi].data[i] = orig;
            const T numeric = (fp - fm) / (T(2) * eps);
            const T a = analytic[pi].data[i];
            const T scale = std::max({std::abs(a), std::abs(numeric), floor});
            const T err = std::abs(a - numeric) / scale;
            if (err > worst) worst = err;
        }
    }
    return worst;
}

}  // namespace scai
