#pragma once

#include <advreg/error.hpp>
#include <advreg/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace advreg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct TensorStorage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
};

inline void check_finite(std::span<const double> values, const char* op)
{
    for (double v : values) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::NonFiniteValue, std::string(op) + " produced a non-finite value");
        }
    }
}

} // namespace detail

/// Dense row-major tensor of doubles. Copies share storage (handle semantics), so a
/// parameter held by the model and the same parameter seen by a Tape are one object;
/// use clone() or detach() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : s_(std::make_shared<detail::TensorStorage>())
    {
        for (std::size_t d : shape) {
            if (!(d > 0)) {
                fail(ErrorKind::ShapeMismatch, "dimension sizes must be positive, got " + shape_str(shape));
            }
        }
        if (!(shape_numel(shape) == data.size())) {
            fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
        }
        detail::check_finite(data, "Tensor");
        s_->shape = std::move(shape);
        s_->data = std::move(data);
        s_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        const std::size_t n = shape_numel(shape);
        return {std::move(shape), std::vector<double>(n, 0.0), requires_grad};
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false)
    {
        const std::size_t n = shape_numel(shape);
        return {std::move(shape), std::vector<double>(n, value), requires_grad};
    }

    static Tensor scalar(double value, bool requires_grad = false) { return {Shape{}, {value}, requires_grad}; }

    static Tensor vector(std::vector<double> values, bool requires_grad = false)
    {
        const std::size_t n = values.size();
        return {Shape{n}, std::move(values), requires_grad};
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false)
    {
        return {Shape{rows, cols}, std::move(values), requires_grad};
    }

    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false)
    {
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) {
            v = rng.uniform(lo, hi);
        }
        return {std::move(shape), std::move(values), requires_grad};
    }

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(s_); }
    [[nodiscard]] const Shape& shape() const { return s_->shape; }
    [[nodiscard]] std::size_t rank() const { return s_->shape.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
    [[nodiscard]] std::size_t numel() const { return s_->data.size(); }

    [[nodiscard]] std::span<const double> data() const { return s_->data; }
    [[nodiscard]] const std::vector<double>& values() const { return s_->data; }

    /// Direct write access, for optimizers and tests. Bypasses the finiteness check.
    [[nodiscard]] std::span<double> mutable_data() { return s_->data; }

    [[nodiscard]] double item() const
    {
        if (!(numel() == 1)) {
            fail(ErrorKind::NotScalar, "item() on tensor of shape " + shape_str(shape()));
        }
        return s_->data[0];
    }

    [[nodiscard]] double at(std::size_t i) const { return s_->data.at(i); }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const
    {
        require(rank() == 2, ErrorKind::ShapeMismatch, "at(r, c) needs a matrix");
        return s_->data.at(r * dim(1) + c);
    }

    [[nodiscard]] bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool flag) { s_->requires_grad = flag; }

    [[nodiscard]] bool has_grad() const { return !s_->grad.empty(); }
    [[nodiscard]] std::span<const double> grad() const { return s_->grad; }
    [[nodiscard]] Tensor grad_tensor() const
    {
        if (!has_grad()) {
            return zeros(shape());
        }
        return {shape(), s_->grad};
    }
    void zero_grad() { s_->grad.clear(); }

    /// Independent copy of the values, with no gradient tracking.
    [[nodiscard]] Tensor detach() const { return {shape(), s_->data, false}; }

    /// Independent copy of values and flags (gradient buffer not copied).
    [[nodiscard]] Tensor clone() const { return {shape(), s_->data, s_->requires_grad}; }

    [[nodiscard]] bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

private:
    friend class Tape;
    std::shared_ptr<detail::TensorStorage> s_;
};

inline double frobenius_norm(std::span<const double> values)
{
    double sum = 0.0;
    for (double v : values) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

/// How a Tape treats tensors it did not create.
enum class GradMode {
    /// Leaves with requires_grad() are differentiated; backward() accumulates into them.
    full,
    /// Leaves are constants unless passed to Tape::watch(). Used to differentiate
    /// with respect to inputs while holding parameters fixed.
    inputs_only,
};

/// Records primitive operations during a forward pass and replays their local
/// derivatives in reverse. Entries are appended in execution order, so the record
/// list is a topological order by construction. One Tape belongs to one thread.
class Tape {
public:
    explicit Tape(GradMode mode = GradMode::full) : mode_(mode) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    [[nodiscard]] GradMode mode() const noexcept { return mode_; }
    [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
    [[nodiscard]] bool empty() const noexcept { return records_.empty(); }

    void clear()
    {
        records_.clear();
        slots_.clear();
        slot_of_.clear();
    }

    /// Marks a leaf as differentiable on this tape regardless of its requires_grad flag.
    Tensor watch(const Tensor& t)
    {
        slot_for(t, true);
        return t;
    }

    [[nodiscard]] bool tracks(const Tensor& t) const { return slot_of_.contains(t.s_.get()); }

    // ---------------------------------------------------------------- elementwise

    Tensor add(const Tensor& a, const Tensor& b)
    {
        same_shape(a, b, "add");
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = a.s_->data[i] + b.s_->data[i];
        }
        return record(a.shape(), std::move(out), {a, b}, "add", [](Tape& t, const Ctx& c) {
            t.accumulate(c.in[0], c.gout(t));
            t.accumulate(c.in[1], c.gout(t));
        });
    }

    Tensor sub(const Tensor& a, const Tensor& b)
    {
        same_shape(a, b, "sub");
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = a.s_->data[i] - b.s_->data[i];
        }
        return record(a.shape(), std::move(out), {a, b}, "sub", [](Tape& t, const Ctx& c) {
            t.accumulate(c.in[0], c.gout(t));
            if (auto* g = t.grad_buffer(c.in[1])) {
                const auto& go = c.gout(t);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] -= go[i];
                }
            }
        });
    }

    Tensor mul(const Tensor& a, const Tensor& b)
    {
        same_shape(a, b, "mul");
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = a.s_->data[i] * b.s_->data[i];
        }
        return record(a.shape(), std::move(out), {a, b}, "mul", [](Tape& t, const Ctx& c) {
            const auto& go = c.gout(t);
            const auto& av = c.in[0].storage->data;
            const auto& bv = c.in[1].storage->data;
            if (auto* g = t.grad_buffer(c.in[0])) {
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += go[i] * bv[i];
                }
            }
            if (auto* g = t.grad_buffer(c.in[1])) {
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += go[i] * av[i];
                }
            }
        });
    }

    /// scale * a + shift, elementwise.
    Tensor affine(const Tensor& a, double scale, double shift = 0.0)
    {
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = scale * a.s_->data[i] + shift;
        }
        return record(a.shape(), std::move(out), {a}, "affine", [scale](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += scale * go[i];
                }
            }
        });
    }

    Tensor scale(const Tensor& a, double factor) { return affine(a, factor, 0.0); }

    Tensor log(const Tensor& a)
    {
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = a.s_->data[i];
            if (!(v > 0.0)) {
                fail(ErrorKind::LogOfNonPositive, "log of " + std::to_string(v));
            }
            out[i] = std::log(v);
        }
        return record(a.shape(), std::move(out), {a}, "log", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& av = c.in[0].storage->data;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += go[i] / av[i];
                }
            }
        });
    }

    /// p * log(p) with the convention 0 * log 0 = 0. The derivative at p = 0 is
    /// taken as 0 so that exactly-zero probabilities do not inject infinities.
    Tensor xlogx(const Tensor& p)
    {
        std::vector<double> out(p.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = p.s_->data[i];
            if (v < 0.0) {
                fail(ErrorKind::LogOfNonPositive, "xlogx of negative value " + std::to_string(v));
            }
            out[i] = v == 0.0 ? 0.0 : v * std::log(v);
        }
        return record(p.shape(), std::move(out), {p}, "xlogx", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& pv = c.in[0].storage->data;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    if (pv[i] > 0.0) {
                        (*g)[i] += go[i] * (std::log(pv[i]) + 1.0);
                    }
                }
            }
        });
    }

    Tensor sigmoid(const Tensor& a)
    {
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = a.s_->data[i];
            out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
        return record(a.shape(), std::move(out), {a}, "sigmoid", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& y = c.out_values(t);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += go[i] * y[i] * (1.0 - y[i]);
                }
            }
        });
    }

    Tensor tanh(const Tensor& a)
    {
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = std::tanh(a.s_->data[i]);
        }
        return record(a.shape(), std::move(out), {a}, "tanh", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& y = c.out_values(t);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[i] += go[i] * (1.0 - y[i] * y[i]);
                }
            }
        });
    }

    Tensor relu(const Tensor& a)
    {
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = std::max(0.0, a.s_->data[i]);
        }
        return record(a.shape(), std::move(out), {a}, "relu", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& av = c.in[0].storage->data;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    if (av[i] > 0.0) {
                        (*g)[i] += go[i];
                    }
                }
            }
        });
    }

    // ---------------------------------------------------------------- linear algebra

    /// Matrix product with vector promotion: [m,k]x[k,n] -> [m,n], [m,k]x[k] -> [m],
    /// [k]x[k,n] -> [n], [k]x[k] -> [] (dot product).
    Tensor matmul(const Tensor& a, const Tensor& b)
    {
        if (!(a.rank() >= 1 && a.rank() <= 2 && b.rank() >= 1 && b.rank() <= 2)) {
            fail(ErrorKind::ShapeMismatch, "matmul needs rank-1 or rank-2 operands, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        }
        const std::size_t m = a.rank() == 2 ? a.dim(0) : 1;
        const std::size_t k = a.rank() == 2 ? a.dim(1) : a.dim(0);
        const std::size_t kb = b.dim(0);
        const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
        if (!(k == kb)) {
            fail(ErrorKind::ShapeMismatch, "matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        }
        Shape out_shape;
        if (a.rank() == 2) {
            out_shape.push_back(m);
        }
        if (b.rank() == 2) {
            out_shape.push_back(n);
        }
        std::vector<double> out(m * n, 0.0);
        gemm(a.s_->data.data(), b.s_->data.data(), out.data(), m, k, n);
        return record(std::move(out_shape), std::move(out), {a, b}, "matmul", [m, k, n](Tape& t, const Ctx& c) {
            const auto& go = c.gout(t);
            const auto& av = c.in[0].storage->data;
            const auto& bv = c.in[1].storage->data;
            if (auto* g = t.grad_buffer(c.in[0])) {
                // dA[i,p] += sum_j dC[i,j] * B[p,j]
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* brow = bv.data() + p * n;
                        const double* grow = go.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            acc += grow[j] * brow[j];
                        }
                        (*g)[i * k + p] += acc;
                    }
                }
            }
            if (auto* g = t.grad_buffer(c.in[1])) {
                // dB[p,j] += sum_i A[i,p] * dC[i,j]
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = go.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        double* gb = g->data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) {
                            gb[j] += aip * grow[j];
                        }
                    }
                }
            }
        });
    }

    Tensor transpose(const Tensor& a)
    {
        require(a.rank() == 2, ErrorKind::ShapeMismatch, "transpose needs a matrix");
        const std::size_t r = a.dim(0);
        const std::size_t cdim = a.dim(1);
        std::vector<double> out(a.numel());
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < cdim; ++j) {
                out[j * r + i] = a.s_->data[i * cdim + j];
            }
        }
        return record(Shape{cdim, r}, std::move(out), {a}, "transpose", [r, cdim](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < cdim; ++j) {
                        (*g)[i * cdim + j] += go[j * r + i];
                    }
                }
            }
        });
    }

    /// Adds a length-n bias to every row of an [m,n] matrix (explicit, no broadcasting).
    Tensor add_rowwise(const Tensor& x, const Tensor& bias)
    {
        if (!(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1))) {
            fail(ErrorKind::ShapeMismatch, "add_rowwise: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
        }
        const std::size_t m = x.dim(0);
        const std::size_t n = x.dim(1);
        std::vector<double> out(x.s_->data);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] += bias.s_->data[j];
            }
        }
        return record(x.shape(), std::move(out), {x, bias}, "add_rowwise", [m, n](Tape& t, const Ctx& c) {
            const auto& go = c.gout(t);
            t.accumulate(c.in[0], go);
            if (auto* g = t.grad_buffer(c.in[1])) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        (*g)[j] += go[i * n + j];
                    }
                }
            }
        });
    }

    /// Affine map x W + b for x [m,k] (or [k]), W [k,n], b [n].
    Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias)
    {
        Tensor y = matmul(x, weight);
        if (y.rank() == 1) {
            return add(y, bias);
        }
        return add_rowwise(y, bias);
    }

    // ---------------------------------------------------------------- normalizers

    /// Softmax along the last axis. Positions with mask[j] == 0 get probability 0.
    /// An empty mask means every position is valid.
    Tensor softmax(const Tensor& a, std::span<const std::uint8_t> mask = {})
    {
        require(a.rank() >= 1 && a.rank() <= 2, ErrorKind::ShapeMismatch, "softmax needs rank 1 or 2");
        const std::size_t n = a.shape().back();
        const std::size_t rows = a.numel() / n;
        if (!(mask.empty() || mask.size() == n)) {
            fail(ErrorKind::ShapeMismatch, "softmax mask length " + std::to_string(mask.size()) + " != " + std::to_string(n));
        }
        const bool any_valid = mask.empty() || std::any_of(mask.begin(), mask.end(), [](auto m) { return m != 0; });
        require(any_valid, ErrorKind::AllPositionsMasked, "softmax over a fully masked axis");
        std::vector<double> out(a.numel(), 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* in = a.s_->data.data() + r * n;
            double* o = out.data() + r * n;
            double hi = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask.empty() || mask[j]) {
                    hi = std::max(hi, in[j]);
                }
            }
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask.empty() || mask[j]) {
                    o[j] = std::exp(in[j] - hi);
                    total += o[j];
                }
            }
            for (std::size_t j = 0; j < n; ++j) {
                o[j] /= total;
            }
        }
        return record(a.shape(), std::move(out), {a}, "softmax", [rows, n](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                const auto& y = c.out_values(t);
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        dot += go[r * n + j] * y[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        (*g)[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
                    }
                }
            }
        });
    }

    /// Per-row normalization over the last axis followed by gain * xhat + bias.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias)
    {
        require(x.rank() >= 1 && x.rank() <= 2, ErrorKind::ShapeMismatch, "layer_norm needs rank 1 or 2");
        const std::size_t n = x.shape().back();
        const std::size_t rows = x.numel() / n;
        if (!(gain.rank() == 1 && gain.dim(0) == n && bias.rank() == 1 && bias.dim(0) == n)) {
            fail(ErrorKind::ShapeMismatch, "layer_norm gain/bias must have length " + std::to_string(n));
        }
        std::vector<double> xhat(x.numel());
        std::vector<double> inv_std(rows);
        std::vector<double> out(x.numel());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* in = x.s_->data.data() + r * n;
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                mean += in[j];
            }
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                var += (in[j] - mean) * (in[j] - mean);
            }
            var /= static_cast<double>(n);
            inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
            for (std::size_t j = 0; j < n; ++j) {
                xhat[r * n + j] = (in[j] - mean) * inv_std[r];
                out[r * n + j] = gain.s_->data[j] * xhat[r * n + j] + bias.s_->data[j];
            }
        }
        return record(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Ctx& c) {
                          const auto& go = c.gout(t);
                          const auto& gv = c.in[1].storage->data;
                          if (auto* g = t.grad_buffer(c.in[0])) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                  double mean_d = 0.0;
                                  double mean_dx = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const double d = go[r * n + j] * gv[j];
                                      mean_d += d;
                                      mean_dx += d * xhat[r * n + j];
                                  }
                                  mean_d /= static_cast<double>(n);
                                  mean_dx /= static_cast<double>(n);
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const double d = go[r * n + j] * gv[j];
                                      (*g)[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                                  }
                              }
                          }
                          if (auto* g = t.grad_buffer(c.in[1])) {
                              for (std::size_t i = 0; i < go.size(); ++i) {
                                  (*g)[i % n] += go[i] * xhat[i];
                              }
                          }
                          if (auto* g = t.grad_buffer(c.in[2])) {
                              for (std::size_t i = 0; i < go.size(); ++i) {
                                  (*g)[i % n] += go[i];
                              }
                          }
                      });
    }

    // ---------------------------------------------------------------- reductions

    Tensor sum(const Tensor& a)
    {
        double total = 0.0;
        for (double v : a.s_->data) {
            total += v;
        }
        return record(Shape{}, {total}, {a}, "sum", [](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const double go = c.gout(t)[0];
                for (double& v : *g) {
                    v += go;
                }
            }
        });
    }

    Tensor mean(const Tensor& a)
    {
        return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
    }

    // ---------------------------------------------------------------- structure

    /// Concatenates along axis 0. Scalars count as length-1 vectors; matrices must
    /// agree on their column count.
    Tensor concat(std::span<const Tensor> parts)
    {
        require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of nothing");
        const bool matrices = parts.front().rank() == 2;
        const std::size_t cols = matrices ? parts.front().dim(1) : 1;
        std::size_t rows = 0;
        std::vector<double> out;
        for (const Tensor& p : parts) {
            if (matrices) {
                require(p.rank() == 2 && p.dim(1) == cols, ErrorKind::ShapeMismatch, "concat column mismatch");
                rows += p.dim(0);
            } else {
                require(p.rank() <= 1, ErrorKind::ShapeMismatch, "concat mixes vectors and matrices");
                rows += p.numel();
            }
            out.insert(out.end(), p.s_->data.begin(), p.s_->data.end());
        }
        Shape shape = matrices ? Shape{rows, cols} : Shape{rows};
        std::vector<Tensor> ins(parts.begin(), parts.end());
        return record(std::move(shape), std::move(out), std::move(ins), "concat", [](Tape& t, const Ctx& c) {
            const auto& go = c.gout(t);
            std::size_t offset = 0;
            for (const auto& in : c.in) {
                const std::size_t len = in.storage->data.size();
                if (auto* g = t.grad_buffer(in)) {
                    for (std::size_t i = 0; i < len; ++i) {
                        (*g)[i] += go[offset + i];
                    }
                }
                offset += len;
            }
        });
    }

    Tensor concat(std::initializer_list<Tensor> parts) { return concat(std::span<const Tensor>(parts.begin(), parts.size())); }

    /// Rows [begin, end) along axis 0.
    Tensor slice(const Tensor& a, std::size_t begin, std::size_t end)
    {
        require(a.rank() >= 1, ErrorKind::ShapeMismatch, "slice of a scalar");
        if (!(begin < end && end <= a.dim(0))) {
            fail(ErrorKind::IndexOutOfRange, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(a.shape()));
        }
        const std::size_t stride = a.numel() / a.dim(0);
        Shape shape = a.shape();
        shape[0] = end - begin;
        std::vector<double> out(a.s_->data.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                a.s_->data.begin() + static_cast<std::ptrdiff_t>(end * stride));
        return record(std::move(shape), std::move(out), {a}, "slice", [begin, stride](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const auto& go = c.gout(t);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    (*g)[begin * stride + i] += go[i];
                }
            }
        });
    }

    /// Scalar element i of a vector.
    Tensor element(const Tensor& a, std::size_t i)
    {
        require(a.rank() == 1, ErrorKind::ShapeMismatch, "element() needs a vector");
        return reshape(slice(a, i, i + 1), Shape{});
    }

    Tensor reshape(const Tensor& a, Shape shape)
    {
        if (!(shape_numel(shape) == a.numel())) {
            fail(ErrorKind::ShapeMismatch, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
        }
        return record(std::move(shape), a.s_->data, {a}, "reshape", [](Tape& t, const Ctx& c) {
            t.accumulate(c.in[0], c.gout(t));
        });
    }

    /// Rows of `table` selected by `ids`: [V,h] -> [n,h].
    Tensor embedding_lookup(const Tensor& table, std::span<const int> ids)
    {
        require(table.rank() == 2, ErrorKind::ShapeMismatch, "embedding table must be a matrix");
        require(!ids.empty(), ErrorKind::ShapeMismatch, "embedding lookup of zero ids");
        const std::size_t vocab = table.dim(0);
        const std::size_t h = table.dim(1);
        std::vector<double> out(ids.size() * h);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab)) {
                fail(ErrorKind::IndexOutOfRange, "embedding id " + std::to_string(ids[i]) + " outside [0," + std::to_string(vocab) + ")");
            }
            std::copy_n(table.s_->data.begin() + static_cast<std::ptrdiff_t>(ids[i] * h), h,
                        out.begin() + static_cast<std::ptrdiff_t>(i * h));
        }
        std::vector<int> id_copy(ids.begin(), ids.end());
        return record(Shape{ids.size(), h}, std::move(out), {table}, "embedding_lookup",
                      [h, id_copy = std::move(id_copy)](Tape& t, const Ctx& c) {
                          if (auto* g = t.grad_buffer(c.in[0])) {
                              const auto& go = c.gout(t);
                              for (std::size_t i = 0; i < id_copy.size(); ++i) {
                                  const std::size_t row = static_cast<std::size_t>(id_copy[i]);
                                  for (std::size_t j = 0; j < h; ++j) {
                                      (*g)[row * h + j] += go[i * h + j];
                                  }
                              }
                          }
                      });
    }

    /// KL(p || q) = sum_i p_i (log p_i - log q_i) with p held constant. Terms with
    /// p_i = 0 contribute nothing.
    Tensor kl_divergence(std::span<const double> p, const Tensor& q)
    {
        if (!(p.size() == q.numel())) {
            fail(ErrorKind::SupportMismatch, "KL over supports of size " + std::to_string(p.size()) + " and " + std::to_string(q.numel()));
        }
        double total = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] > 0.0) {
                const double qi = q.s_->data[i];
                require(qi > 0.0, ErrorKind::SupportMismatch, "q has zero mass where p is positive");
                total += p[i] * (std::log(p[i]) - std::log(qi));
            }
        }
        std::vector<double> pc(p.begin(), p.end());
        return record(Shape{}, {total}, {q}, "kl_divergence", [pc = std::move(pc)](Tape& t, const Ctx& c) {
            if (auto* g = t.grad_buffer(c.in[0])) {
                const double go = c.gout(t)[0];
                const auto& qv = c.in[0].storage->data;
                for (std::size_t i = 0; i < pc.size(); ++i) {
                    if (pc[i] > 0.0) {
                        (*g)[i] -= go * pc[i] / qv[i];
                    }
                }
            }
        });
    }

    // ---------------------------------------------------------------- differentiation

    /// Reverse sweep from a scalar loss. Gradients are added into the grad buffer of
    /// every tracked leaf, scaled by `seed` (so per-example sweeps can realise a batch
    /// mean). A loss the tape never saw (a constant) is a no-op.
    void backward(const Tensor& loss, double seed = 1.0)
    {
        require(loss.defined() && loss.numel() == 1 && loss.rank() == 0, ErrorKind::NotScalar,
                "backward needs a scalar loss");
        if (!sweep(loss, seed, 0)) {
            return;
        }
        for (Slot& slot : slots_) {
            if (!slot.leaf || slot.grad.empty()) {
                continue;
            }
            auto& target = slot.storage->grad;
            if (target.empty()) {
                target.assign(slot.storage->data.size(), 0.0);
            }
            for (std::size_t i = 0; i < target.size(); ++i) {
                target[i] += slot.grad[i];
            }
        }
    }

    /// Gradient of a scalar loss with respect to `wrt`, returned as a fresh tensor.
    /// Leaf grad buffers are left untouched: parameters act as constants. Records
    /// that precede `wrt` cannot depend on it and are not visited.
    Tensor gradient(const Tensor& loss, const Tensor& wrt)
    {
        require(loss.defined() && loss.numel() == 1 && loss.rank() == 0, ErrorKind::NotScalar,
                "gradient needs a scalar loss");
        auto it = slot_of_.find(wrt.s_.get());
        if (it == slot_of_.end()) {
            return Tensor::zeros(wrt.shape());
        }
        const Slot& target = slots_[it->second];
        const std::size_t first = target.leaf ? target.created_at : target.created_at + 1;
        if (!sweep(loss, 1.0, first)) {
            return Tensor::zeros(wrt.shape());
        }
        const Slot& s = slots_[it->second];
        if (s.grad.empty()) {
            return Tensor::zeros(wrt.shape());
        }
        return {wrt.shape(), s.grad};
    }

    /// gradient() for several tensors with one reverse sweep.
    std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> wrt)
    {
        require(loss.defined() && loss.numel() == 1 && loss.rank() == 0, ErrorKind::NotScalar,
                "gradient needs a scalar loss");
        std::size_t first = records_.size();
        for (const Tensor& w : wrt) {
            auto it = slot_of_.find(w.s_.get());
            if (it != slot_of_.end()) {
                const Slot& s = slots_[it->second];
                first = std::min(first, s.leaf ? s.created_at : s.created_at + 1);
            }
        }
        const bool swept = sweep(loss, 1.0, first);
        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (const Tensor& w : wrt) {
            auto it = slot_of_.find(w.s_.get());
            if (!swept || it == slot_of_.end() || slots_[it->second].grad.empty()) {
                out.push_back(Tensor::zeros(w.shape()));
            } else {
                out.emplace_back(w.shape(), slots_[it->second].grad);
            }
        }
        return out;
    }

private:
    static constexpr double kLayerNormEpsilon = 1e-12;

    struct Slot {
        std::shared_ptr<detail::TensorStorage> storage;
        std::vector<double> grad;
        std::size_t created_at = 0;
        bool leaf = false;
    };

    struct Input {
        std::shared_ptr<detail::TensorStorage> storage;
        std::size_t slot = kNoSlot;
    };

    struct Ctx {
        std::vector<Input> in;
        std::size_t out = kNoSlot;
        const std::vector<double>& gout(const Tape& t) const { return t.slots_[out].grad; }
        const std::vector<double>& out_values(const Tape& t) const { return t.slots_[out].storage->data; }
    };

    using BackwardFn = std::function<void(Tape&, const Ctx&)>;

    struct Record {
        Ctx ctx;
        BackwardFn backward;
    };

    static constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

    static void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n)
    {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = a[i * k + p];
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += aip * brow[j];
                }
            }
        }
    }

    static void same_shape(const Tensor& a, const Tensor& b, const char* op)
    {
        if (!(a.shape() == b.shape())) {
            fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }

    /// Slot for a tensor: existing one, or a new leaf slot if the tensor is
    /// differentiable under the tape's mode. Returns kNoSlot for constants.
    std::size_t slot_for(const Tensor& t, bool force = false)
    {
        auto it = slot_of_.find(t.s_.get());
        if (it != slot_of_.end()) {
            return it->second;
        }
        const bool differentiable = force || (mode_ == GradMode::full && t.s_->requires_grad);
        if (!differentiable) {
            return kNoSlot;
        }
        slots_.push_back(Slot{t.s_, {}, records_.size(), true});
        slot_of_.emplace(t.s_.get(), slots_.size() - 1);
        return slots_.size() - 1;
    }

    Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op, BackwardFn fn)
    {
        detail::check_finite(values, op);
        Tensor out;
        out.s_ = std::make_shared<detail::TensorStorage>();
        out.s_->shape = std::move(shape);
        out.s_->data = std::move(values);

        Ctx ctx;
        bool any = false;
        ctx.in.reserve(inputs.size());
        for (const Tensor& in : inputs) {
            const std::size_t slot = slot_for(in);
            any = any || slot != kNoSlot;
            ctx.in.push_back(Input{in.s_, slot});
        }
        if (!any) {
            return out;
        }
        out.s_->requires_grad = true;
        slots_.push_back(Slot{out.s_, {}, records_.size(), false});
        ctx.out = slots_.size() - 1;
        slot_of_.emplace(out.s_.get(), ctx.out);
        records_.push_back(Record{std::move(ctx), std::move(fn)});
        return out;
    }

    std::vector<double>* grad_buffer(const Input& in)
    {
        if (in.slot == kNoSlot) {
            return nullptr;
        }
        Slot& s = slots_[in.slot];
        if (s.grad.empty()) {
            s.grad.assign(s.storage->data.size(), 0.0);
        }
        return &s.grad;
    }

    void accumulate(const Input& in, const std::vector<double>& g)
    {
        if (auto* buf = grad_buffer(in)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*buf)[i] += g[i];
            }
        }
    }

    /// Runs the reverse pass over records [first, end). Returns false if the loss is
    /// not produced by this tape.
    bool sweep(const Tensor& loss, double seed, std::size_t first)
    {
        auto it = slot_of_.find(loss.s_.get());
        if (it == slot_of_.end()) {
            return false;
        }
        for (Slot& s : slots_) {
            s.grad.clear();
        }
        slots_[it->second].grad.assign(1, seed);
        for (std::size_t r = records_.size(); r-- > first;) {
            const Record& rec = records_[r];
            if (slots_[rec.ctx.out].grad.empty()) {
                continue;
            }
            rec.backward(*this, rec.ctx);
        }
        return true;
    }

    GradMode mode_;
    std::vector<Record> records_;
    std::vector<Slot> slots_;
    std::unordered_map<const detail::TensorStorage*, std::size_t> slot_of_;
};

/// Central-difference estimate of df/dx, one coordinate at a time.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h)
{
    require(h > 0.0, ErrorKind::InvalidSpec, "finite difference step must be positive");
    std::vector<double> grad(x.numel());
    Tensor probe = x.detach();
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double orig = values[i];
        values[i] = orig + h;
        const double up = f(probe);
        values[i] = orig - h;
        const double down = f(probe);
        values[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
        if (!std::isfinite(grad[i])) {
            fail(ErrorKind::NonFiniteValue, "finite difference produced a non-finite value");
        }
    }
    return {x.shape(), std::move(grad)};
}

} // namespace advreg
