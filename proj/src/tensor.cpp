#include "roma/tensor.hpp"

#include <cmath>
#include <sstream>

namespace roma {

std::atomic<std::size_t> alloc_stats::live_bytes{0};
std::atomic<std::size_t> alloc_stats::peak_bytes{0};

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(shape_numel(impl->shape), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl()->data) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape))
        throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    std::copy(values.begin(), values.end(), t.impl()->data.begin());
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl()->data) v = rng.gaussian(0.0, stddev);
    return t;
}

double Tensor::item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
}

double* Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::check_finite(const char* what) const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value in tensor " + shape_str(shape()));
}

void Tape::backward(const Tensor& root) {
    if (!root.is_scalar()) throw ContractError("backward: root must be scalar, got " + shape_str(root.shape()));
    Tensor r = root;
    r.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->backward) it->backward();
}

namespace {
thread_local Tape* g_tape = nullptr;
}

Tape* current_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

Tensor& ParamRegistry::add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw ContractError("parameter already registered: " + name);
    t.set_requires_grad(true);
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParamRegistry::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamRegistry::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamRegistry::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void ParamRegistry::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

ParamRegistry ParamRegistry::clone() const {
    ParamRegistry out;
    for (const auto& [name, t] : params_) {
        Tensor c = Tensor::zeros(t.shape(), true);
        std::copy(t.data(), t.data() + t.numel(), c.data());
        out.params_.emplace(name, std::move(c));
    }
    return out;
}

void ParamRegistry::copy_values_from(const ParamRegistry& other) {
    if (other.size() != size()) throw ContractError("copy_values_from: registry size mismatch");
    auto it = params_.begin();
    auto jt = other.params_.begin();
    for (; it != params_.end(); ++it, ++jt) {
        if (it->first != jt->first) throw ContractError("copy_values_from: name mismatch at " + it->first);
        if (it->second.shape() != jt->second.shape())
            throw ShapeError("copy_values_from: " + it->first + " " + shape_str(it->second.shape()) + " vs " +
                             shape_str(jt->second.shape()));
        std::copy(jt->second.data(), jt->second.data() + jt->second.numel(), it->second.data());
    }
}

}  // namespace roma
