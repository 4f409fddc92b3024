#pragma once

// Raw math kernels shared by the plain (no-grad) and taped forward paths.
// Convolutions are stride-1 same-padding with square odd kernels and an
// optional dilation; dilation widens the receptive field without changing
// the per-pixel cost, which the refinement networks need to relate joints
// that sit well apart on the map.
//
// Inner loops run over the contiguous x axis so the compiler can vectorize
// them; this is the hot path of the whole project.

#include "scai/tensor.hpp"

namespace scai {

struct Conv2dDims {
    int cin, cout, k, h, w, dil;
};

template <class T>
Conv2dDims conv2d_dims(const TensorT<T>& in, const TensorT<T>& weight, const TensorT<T>& bias,
                       int dilation) {
    if (in.shape.size() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (weight.shape.size() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin,K,K]");
    if (weight.shape[2] != weight.shape[3]) throw std::invalid_argument("conv2d: kernel must be square");
    if (weight.shape[2] % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    if (weight.shape[1] != in.shape[0])
        throw std::invalid_argument("conv2d: input channels " + std::to_string(in.shape[0]) +
                                    " do not match weight " + std::to_string(weight.shape[1]));
    if (bias.shape.size() != 1 || bias.shape[0] != weight.shape[0])
        throw std::invalid_argument("conv2d: bias must be [Cout]");
    if (dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
    return {in.shape[0], weight.shape[0], weight.shape[2], in.shape[1], in.shape[2], dilation};
}

// out[co,y,x] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * in[ci, y+dil*(ky-r), x+dil*(kx-r)]
template <class T>
void conv2d_forward(const TensorT<T>& in, const TensorT<T>& weight, const TensorT<T>& bias,
                    int dilation, TensorT<T>& out) {
    const Conv2dDims d = conv2d_dims(in, weight, bias, dilation);
    out.shape = {d.cout, d.h, d.w};
    out.data.assign(std::size_t(d.cout) * d.h * d.w, T(0));
    const int r = d.k / 2;
    for (int co = 0; co < d.cout; ++co) {
        T* ob = &out.data[std::size_t(co) * d.h * d.w];
        const T bv = bias.data[co];
        for (std::size_t i = 0, n = std::size_t(d.h) * d.w; i < n; ++i) ob[i] = bv;
        for (int ci = 0; ci < d.cin; ++ci) {
            const T* ib = &in.data[std::size_t(ci) * d.h * d.w];
            const T* wb = &weight.data[((std::size_t(co) * d.cin + ci) * d.k) * d.k];
            for (int ky = 0; ky < d.k; ++ky) {
                const int dy = d.dil * (ky - r);
                const int y0 = std::max(0, -dy), y1 = std::min(d.h, d.h - dy);
                for (int kx = 0; kx < d.k; ++kx) {
                    const int dx = d.dil * (kx - r);
                    const int x0 = std::max(0, -dx), x1 = std::min(d.w, d.w - dx);
                    if (x0 >= x1) continue;
                    const T wv = wb[ky * d.k + kx];
                    for (int y = y0; y < y1; ++y) {
                        T* orow = ob + std::size_t(y) * d.w;
                        const T* irow = ib + std::size_t(y + dy) * d.w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

// Gradient w.r.t. the input: correlation of g_out with the flipped kernel.
template <class T>
void conv2d_backward_input(const TensorT<T>& g_out, const TensorT<T>& weight, int dilation,
                           TensorT<T>& g_in) {
    const int cout = weight.shape[0], cin = weight.shape[1], k = weight.shape[2];
    const int h = g_out.shape[1], w = g_out.shape[2];
    const int r = k / 2;
    g_in.shape = {cin, h, w};
    g_in.data.assign(std::size_t(cin) * h * w, T(0));
    for (int ci = 0; ci < cin; ++ci) {
        T* gb = &g_in.data[std::size_t(ci) * h * w];
        for (int co = 0; co < cout; ++co) {
            const T* ob = &g_out.data[std::size_t(co) * h * w];
            const T* wb = &weight.data[((std::size_t(co) * cin + ci) * k) * k];
            for (int ky = 0; ky < k; ++ky) {
                const int dy = dilation * (ky - r);
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = dilation * (kx - r);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    if (x0 >= x1) continue;
                    const T wv = wb[ky * k + kx];
                    // in[y+dy, x+dx] contributed to out[y, x]:
                    // g_in[y+dy, x+dx] += w * g_out[y, x]
                    for (int y = y0; y < y1; ++y) {
                        T* grow = gb + std::size_t(y + dy) * w + dx;
                        const T* orow = ob + std::size_t(y) * w;
                        for (int x = x0; x < x1; ++x) grow[x] += wv * orow[x];
                    }
                }
            }
        }
    }
}

namespace detail {

// k=3 fast path: one pass per (ky, row) accumulates all three kx taps, so
// each row pair is read once instead of three times. Lanes are independent
// accumulators (vectorizable without reassociation) summed in a fixed order.
template <class T>
void conv2d_bw_weight_k3(const T* ib, const T* ob, T* wb, int h, int w, int d) {
    constexpr int kLanes = 16;
    for (int ky = 0; ky < 3; ++ky) {
        const int dy = d * (ky - 1);
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        T l0[kLanes] = {}, l1[kLanes] = {}, l2[kLanes] = {};
        T t0 = T(0), t1 = T(0), t2 = T(0);
        const int b1 = (w / kLanes) * kLanes;
        const int b0 = d + ((w - d) / kLanes) * kLanes;
        const int b2 = ((w - d) / kLanes) * kLanes;
        for (int y = y0; y < y1; ++y) {
            const T* orow = ob + std::size_t(y) * w;
            const T* irow = ib + std::size_t(y + dy) * w;
            for (int x = 0; x < b1; x += kLanes)
                for (int v = 0; v < kLanes; ++v) l1[v] += orow[x + v] * irow[x + v];
            for (int x = b1; x < w; ++x) t1 += orow[x] * irow[x];
            for (int x = d; x < b0; x += kLanes)
                for (int v = 0; v < kLanes; ++v) l0[v] += orow[x + v] * irow[x + v - d];
            for (int x = b0; x < w; ++x) t0 += orow[x] * irow[x - d];
            for (int x = 0; x < b2; x += kLanes)
                for (int v = 0; v < kLanes; ++v) l2[v] += orow[x + v] * irow[x + v + d];
            for (int x = b2; x < w - d; ++x) t2 += orow[x] * irow[x + d];
        }
        for (int v = 0; v < kLanes; ++v) {
            t0 += l0[v];
            t1 += l1[v];
            t2 += l2[v];
        }
        wb[ky * 3 + 0] += t0;
        wb[ky * 3 + 1] += t1;
        wb[ky * 3 + 2] += t2;
    }
}

}  // namespace detail

template <class T>
void conv2d_backward_weight(const TensorT<T>& in, const TensorT<T>& g_out, int k, int dilation,
                            TensorT<T>& g_weight, TensorT<T>& g_bias) {
    const int cin = in.shape[0], h = in.shape[1], w = in.shape[2];
    const int cout = g_out.shape[0];
    const int r = k / 2;
    g_weight.shape = {cout, cin, k, k};
    g_weight.data.assign(std::size_t(cout) * cin * k * k, T(0));
    g_bias.shape = {cout};
    g_bias.data.assign(std::size_t(cout), T(0));
    for (int co = 0; co < cout; ++co) {
        const T* ob = &g_out.data[std::size_t(co) * h * w];
        T acc_b = T(0);
        for (std::size_t i = 0, n = std::size_t(h) * w; i < n; ++i) acc_b += ob[i];
        g_bias.data[co] = acc_b;
        for (int ci = 0; ci < cin; ++ci) {
            const T* ib = &in.data[std::size_t(ci) * h * w];
            T* wb = &g_weight.data[((std::size_t(co) * cin + ci) * k) * k];
            if (k == 3 && dilation < w) {
                detail::conv2d_bw_weight_k3(ib, ob, wb, h, w, dilation);
                continue;
            }
            for (int ky = 0; ky < k; ++ky) {
                const int dy = dilation * (ky - r);
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = dilation * (kx - r);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    if (x0 >= x1) continue;
                    // Blocked accumulators: lanes stay independent so the
                    // loop vectorizes without FP reassociation, and the
                    // summation order is fixed, keeping results bit-stable.
                    constexpr int kLanes = 16;
                    T lanes[kLanes] = {};
                    T tail = T(0);
                    const int blocked = x0 + ((x1 - x0) / kLanes) * kLanes;
                    for (int y = y0; y < y1; ++y) {
                        const T* orow = ob + std::size_t(y) * w;
                        const T* irow = ib + std::size_t(y + dy) * w + dx;
                        for (int x = x0; x < blocked; x += kLanes)
                            for (int v = 0; v < kLanes; ++v) lanes[v] += orow[x + v] * irow[x + v];
                        for (int x = blocked; x < x1; ++x) tail += orow[x] * irow[x];
                    }
                    T acc = tail;
                    for (int v = 0; v < kLanes; ++v) acc += lanes[v];
                    wb[ky * k + kx] += acc;
                }
            }
        }
    }
}

// Dense layer on a flat vector: out[i] = bias[i] + sum_j w[i,j] * x[j].
template <class T>
void dense_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias,
                   TensorT<T>& out) {
    if (weight.shape.size() != 2) throw std::invalid_argument("dense: weight must be [M,N]");
    const int m = weight.shape[0], n = weight.shape[1];
    if (int(x.numel()) != n)
        throw std::invalid_argument("dense: input size " + std::to_string(x.numel()) +
                                    " does not match weight columns " + std::to_string(n));
    if (bias.shape.size() != 1 || bias.shape[0] != m)
        throw std::invalid_argument("dense: bias must be [M]");
    out.shape = {m};
    out.data.assign(std::size_t(m), T(0));
    for (int i = 0; i < m; ++i) {
        const T* wrow = &weight.data[std::size_t(i) * n];
        T acc = bias.data[i];
        for (int j = 0; j < n; ++j) acc += wrow[j] * x.data[j];
        out.data[i] = acc;
    }
}

template <class T>
void dense_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& g_out,
                    TensorT<T>& g_x, TensorT<T>& g_weight, TensorT<T>& g_bias) {
    const int m = weight.shape[0], n = weight.shape[1];
    g_x.shape = x.shape;
    g_x.data.assign(x.numel(), T(0));
    g_weight.shape = weight.shape;
    g_weight.data.assign(weight.numel(), T(0));
    g_bias.shape = {m};
    g_bias.data.assign(std::size_t(m), T(0));
    for (int i = 0; i < m; ++i) {
        const T g = g_out.data[i];
        g_bias.data[i] = g;
        const T* wrow = &weight.data[std::size_t(i) * n];
        T* gwrow = &g_weight.data[std::size_t(i) * n];
        for (int j = 0; j < n; ++j) {
            g_x.data[j] += g * wrow[j];
            gwrow[j] += g * x.data[j];
        }
    }
}

}  // namespace scai
