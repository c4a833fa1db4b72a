#pragma once

// Reverse-mode differentiation over a recorded sequence of tensor operations.
//
// A Tape owns every intermediate value of one forward evaluation. Ops append a
// node holding their output and a closure that maps the output gradient onto
// the gradients of their inputs. Tape::backward replays the closures in
// reverse recording order.

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "melrefine/tensor.hpp"

namespace melrefine::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Receives the gradient of the node's output.
    using Backward = std::function<void(Tape&, const Tensor&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    /// Appends an op output. `backward` is dropped when no input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

    const Tensor& value(const Var& v) const { return nodes_.at(v.id()).value; }
    bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }

    /// Gradient accumulator of `v`, zero-initialized on first access.
    Tensor& grad_accumulator(const Var& v);

    /// Gradient of the last backward() root with respect to `v` (zeros if unreached).
    Tensor grad(const Var& v) const;

    /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    void backward(const Var& root);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };

    std::deque<Node> nodes_;
};

}  // namespace melrefine::ad
