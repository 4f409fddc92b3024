#pragma once

// Dense row-major tensor. Shapes are small (rank <= 4 in practice) and all
// storage is contiguous. Training runs in float; the double instantiation
// exists so gradient checks can run at a precision where central differences
// are trustworthy.

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace scai {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= std::size_t(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T v) {
        TensorT t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // Element access for rank-3 [C,H,W] tensors, the common case here.
    T& at3(int c, int y, int x) {
        return data[(std::size_t(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int c, int y, int x) const {
        return data[(std::size_t(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

}  // namespace scai
