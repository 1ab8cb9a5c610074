#include "odelm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "odelm/errors.hpp"

namespace odelm {

static std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw config_error("tensor dimension must be positive, got shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    std::size_t n = checked_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    std::size_t n = checked_numel(shape);
    if (values.size() != n)
        throw config_error("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

std::size_t Tensor::numel() const { return data ? data->size() : 0; }

double Tensor::item() const {
    if (numel() != 1) throw config_error("item() on tensor of shape " + shape_str(shape));
    return (*data)[0];
}

bool Tensor::all_finite() const {
    for (double v : *data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
}

void Tensor::ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(Tensor& loss) {
    if (loss.numel() != 1) throw config_error("backward requires a scalar loss, got " + shape_str(loss.shape));
    if (!std::isfinite(loss.item())) throw numeric_error("backward on non-finite loss");
    if (!loss.node) {
        if (!loss.requires_grad) return;  // constant loss, nothing to do
        (*loss.grad)[0] += 1.0;
        return;
    }
    if (loss.node->ran) throw state_error("backward called twice on the same graph");

    // Topological order over tensors, deduplicated by node identity.
    std::vector<Tensor> order;
    std::unordered_set<const Node*> visited;
    std::function<void(const Tensor&)> visit = [&](const Tensor& t) {
        if (!t.node || visited.count(t.node.get())) return;
        visited.insert(t.node.get());
        for (const Tensor& p : t.node->parents) visit(p);
        order.push_back(t);
    };
    visit(loss);

    loss.ensure_grad();
    (*loss.grad)[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (it->node->backward) {
            for (Tensor& p : it->node->parents)
                if (p.requires_grad) p.ensure_grad();
            it->node->backward(*it);
        }
    }
    loss.node->ran = true;
}

}  // namespace odelm
