#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace d3t {

/// Dense row-major float32 array, rank 0..4. Shape {} is a scalar with one element.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.f) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), fill);
    }
    static Tensor from(std::vector<int> s, std::vector<float> d) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        if (t.numel() != static_cast<long>(t.data.size()))
            throw std::invalid_argument("Tensor::from: shape/data size mismatch");
        return t;
    }
    static Tensor scalar(float v) { return from({1}, {v}); }

    static long count(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    long numel() const { return static_cast<long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    float& operator[](long i) { return data[static_cast<size_t>(i)]; }
    float operator[](long i) const { return data[static_cast<size_t>(i)]; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    float max_abs() const {
        float m = 0.f;
        for (float v : data) m = std::max(m, std::fabs(v));
        return m;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline uint64_t fnv1a64(const void* p, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t tensor_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ull) {
    h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int), h);
    return fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace d3t
