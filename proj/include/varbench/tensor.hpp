#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace varbench {

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless grad-enabled
    bool requires_grad = false;
    // identity of the tape that produced this tensor (empty for leaves)
    std::weak_ptr<const void> origin;
};

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

}  // namespace detail

/// Dense n-dimensional array of 64-bit reals with an optional gradient slot.
/// Copies share storage (handle semantics); use clone() for a deep copy.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

    static Tensor zeros(std::vector<int> shape) {
        return full(std::move(shape), 0.0);
    }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t;
        auto n = detail::shape_numel(shape);
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(static_cast<std::size_t>(n), value);
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        auto n = detail::shape_numel(shape);
        if (n != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + detail::shape_str(shape));
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        return t;
    }

    static Tensor scalar_tensor(double value) { return full({1}, value); }

    static Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng) {
        Tensor t = zeros(std::move(shape));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : t.impl_->data) v = dist(rng);
        return t;
    }

    const std::vector<int>& shape() const { return impl_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
    int dim(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
    int rank() const { return static_cast<int>(impl_->shape.size()); }

    std::span<double> values() { return impl_->data; }
    std::span<const double> values() const { return impl_->data; }
    double operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }

    double scalar() const {
        if (numel() != 1) throw std::logic_error("scalar() on tensor of " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    Tensor& requires_grad(bool on = true) {
        impl_->requires_grad = on;
        if (on && impl_->grad.size() != impl_->data.size())
            impl_->grad.assign(impl_->data.size(), 0.0);
        return *this;
    }
    bool grad_enabled() const { return impl_->requires_grad; }

    std::span<double> grad() {
        if (impl_->grad.size() != impl_->data.size())
            throw std::logic_error("tensor has no gradient slot");
        return impl_->grad;
    }
    std::span<const double> grad() const {
        if (impl_->grad.size() != impl_->data.size())
            throw std::logic_error("tensor has no gradient slot");
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    /// Deep copy of values only; the copy is a fresh leaf with no grad slot.
    Tensor clone() const {
        Tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }
    Tensor detach() const { return clone(); }

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records primitive applications in execution order (always a valid
/// topological order) and replays them in reverse for backpropagation.
///
/// Leaves are grad-enabled tensors fed to an op that no op produced; backward()
/// sets each leaf's grad to d(loss)/d(leaf), zeroing leaves the loss does not
/// reach. A second backward() without reset() is an error.
class Tape {
public:
    Tape() : tag_(std::make_shared<int>(0)) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void backward(const Tensor& loss, bool accumulate = false) {
        if (consumed_)
            throw std::logic_error("backward() called twice on the same graph; call reset() first");
        if (loss.numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
        if (loss.impl()->origin.lock() != tag_)
            throw std::logic_error("loss tensor was not recorded on this graph");
        for (auto& node : nodes_) {
            auto* out = node.output.get();
            if (out->grad.size() != out->data.size()) out->grad.assign(out->data.size(), 0.0);
            else std::fill(out->grad.begin(), out->grad.end(), 0.0);
        }
        if (!accumulate)
            for (auto& leaf : leaves_) std::fill(leaf->grad.begin(), leaf->grad.end(), 0.0);
        loss.impl()->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->pull) it->pull();
        consumed_ = true;
    }

    void reset() {
        nodes_.clear();
        leaves_.clear();
        seen_leaves_.clear();
        tag_ = std::make_shared<int>(0);
        consumed_ = false;
    }

    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<std::shared_ptr<detail::TensorImpl>>& leaves() const { return leaves_; }

    /// Registers one primitive application. `pull` propagates output grad to
    /// the inputs; ops install it only when some input needs a gradient.
    void record(const Tensor& output, std::initializer_list<Tensor> inputs, std::function<void()> pull) {
        bool needs_grad = false;
        for (const auto& in : inputs) {
            auto* impl = in.impl();
            auto origin = impl->origin.lock();
            if (origin && origin != tag_)
                throw std::logic_error("input tensor belongs to another graph; detach() it first");
            if (impl->requires_grad) {
                needs_grad = true;
                if (!origin && seen_leaves_.insert(impl).second)
                    leaves_.push_back(in.impl_ptr());
            }
        }
        auto* out = output.impl();
        out->origin = tag_;
        out->requires_grad = needs_grad;
        nodes_.push_back({output.impl_ptr(), needs_grad ? std::move(pull) : std::function<void()>{}});
    }

private:
    struct Node {
        std::shared_ptr<detail::TensorImpl> output;
        std::function<void()> pull;
    };
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<detail::TensorImpl>> leaves_;
    std::unordered_set<detail::TensorImpl*> seen_leaves_;
    std::shared_ptr<const void> tag_;
    bool consumed_ = false;
};

namespace detail {

// grad accumulation target: allocate on demand (op outputs) or reuse (leaves)
inline std::span<double> pull_grad(TensorImpl* t) {
    if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
    return t->grad;
}

}  // namespace detail

}  // namespace varbench
