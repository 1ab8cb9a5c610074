#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace odelm {

struct Tensor;

struct Node {
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backward;  // accumulates into parent grads
    bool ran = false;
};

// Dense row-major tensor of 64-bit floats with an optional tape node.
// Copies are shallow: data, grad and node are shared.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);

    std::size_t numel() const;
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
    double at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }

    double item() const;
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // Value copy without tape history or grad.
    Tensor detached_copy() const;

    void ensure_grad();
    void zero_grad();
};

std::string shape_str(const std::vector<int>& shape);

// Global (thread-local) autograd switch.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Reverse-mode sweep from a scalar loss. Throws state_error when called a
// second time on the same graph, numeric_error on non-finite loss.
void backward(Tensor& loss);

}  // namespace odelm
