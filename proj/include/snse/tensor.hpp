#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "snse/errors.hpp"

namespace snse {

// Dense row-major tensor of 64-bit floats with an optional gradient slot.
// Rank 1 and 2 cover everything the model needs; rank 3 is allowed but unused.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // same length as data when populated
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> s, double fill = 0.0);
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor vector(std::vector<double> d);
    static Tensor matrix(int r, int c, std::vector<double> d);
    static Tensor scalar(double v);

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const;
    int cols() const;
    double& at(int r, int c);
    double at(int r, int c) const;
    double item() const; // scalar access; throws ContractError unless numel==1

    void zero_grad();
    void ensure_grad(); // allocates zero grad buffer if missing
    bool all_finite() const;
};

std::string shape_str(const Tensor& t);

// Handle into a Tape node.
struct Var {
    int id = -1;
};

// Define-by-run reverse-mode tape. One tape per forward pass; rebuilt each
// step. Topological order is the construction order, so backward is a single
// reverse sweep. A tape is confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf with no gradient tracking.
    Var input(Tensor t);
    // Leaf bound to an external parameter; backward() accumulates into p.grad.
    Var param(Tensor& p);

    const Tensor& val(Var v) const;
    std::span<const double> grad_of(Var v) const;

    // Primitives (forward + recorded backward).
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);           // elementwise, equal shapes
    Var add_rowwise(Var mat, Var row); // broadcast a length-c vector over rows
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);           // elementwise
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var softmax_rows(Var a);
    Var log_softmax_rows(Var a);
    Var sigmoid(Var a);
    Var relu(Var a);
    Var mean_rows(Var a);            // (r,c) -> (c)
    Var concat_rows(Var a, Var b);
    Var transpose(Var a);
    Var embedding_lookup(Var table, const std::vector<int>& ids);
    Var sum(Var a);                  // all elements -> scalar
    Var gather_nll(Var log_probs, const std::vector<int>& targets); // -> scalar
    Var cosine(Var a, Var b);        // rank-1 inputs -> scalar

    // Runs the reverse sweep from a scalar loss. Every param leaf reachable
    // from the loss gets its gradient accumulated into the bound Tensor;
    // unreachable params receive a zero (allocated) grad.
    void backward(Var loss);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::function<void(Tape&)> backprop; // null for leaves
        Tensor* bound_param = nullptr;
    };
    std::vector<Node> nodes_;

    Var push(Tensor value, std::function<void(Tape&)> backprop);
    std::vector<double>& gbuf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Tensor& v(int id) const { return nodes_[static_cast<size_t>(id)].value; }
};

// Standalone cosine similarity for non-autodiff callers.
double cosine_similarity(const Tensor& a, const Tensor& b);

// Central-difference gradient verification. `f` recomputes the scalar loss
// from the current parameter values; each param's grad slot must already hold
// the analytic gradient. Returns max over coordinates of
// |analytic - central| / max(1, |central|).
double finite_diff_check(const std::function<double()>& f,
                         std::span<Tensor* const> params, double eps = 1e-5);

} // namespace snse
