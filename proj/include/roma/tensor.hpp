#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "roma/alloc.hpp"
#include "roma/errors.hpp"
#include "roma/rng.hpp"

namespace roma {

using Shape = std::vector<std::size_t>;
using DBuf = std::vector<double, TrackedAllocator<double>>;

std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    DBuf data;
    DBuf grad;  // empty until touched; same length as data once allocated
    bool requires_grad = false;
};

// Dense 64-bit row-major tensor with shared storage. Values are immutable by
// convention once an op has consumed them; gradients accumulate in place.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    bool is_scalar() const { return defined() && numel() == 1; }

    // 2-D accessors; dim(0)/dim(1) on a 1-D tensor treat it as a row vector.
    std::size_t rows() const { return impl_->shape.empty() ? 1 : impl_->shape[0]; }
    std::size_t cols() const { return impl_->shape.size() < 2 ? numel() / rows() : impl_->shape[1]; }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    double item() const;
    double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    // Grad buffer, zero-allocated on first access. Grad storage is a
    // side-channel of the shared impl, so this is const on the handle.
    double* grad() const;
    const double* grad_data() const { return impl_->grad.data(); }
    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    void zero_grad();

    // Throws NumericError when data holds NaN or Inf.
    void check_finite(const char* what) const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    TensorImpl* impl() const { return impl_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// One recorded primitive application. The closure pulls the output grad and
// accumulates into the input grads; inputs are kept alive by capture.
struct TapeNode {
    const char* op;
    Tensor output;
    std::function<void()> backward;
};

class Tape {
  public:
    void record(const char* op, Tensor output, std::function<void()> backward) {
        nodes_.push_back(TapeNode{op, std::move(output), std::move(backward)});
    }

    // Seeds root grad with 1 and replays nodes newest-first, exactly once each.
    void backward(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<TapeNode> nodes_;
};

// Ambient recording context. Ops record onto the innermost active tape;
// with no scope active they run forward-only.
Tape* current_tape();

class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Named trainable parameters with deterministic (lexicographic) iteration.
class ParamRegistry {
  public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    std::size_t total_elements() const;
    void zero_grads();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    // Deep copy (fresh storage for data; grads not copied).
    ParamRegistry clone() const;
    // Copies values from another registry with identical names/shapes.
    void copy_values_from(const ParamRegistry& other);

  private:
    std::map<std::string, Tensor> params_;
};

}  // namespace roma
