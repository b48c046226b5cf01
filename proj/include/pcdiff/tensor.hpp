#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/rng.hpp"

namespace pcd::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorData {
    Shape shape;
    std::vector<double> values;
    // Tape binding. Rebound by Tape::watch each recording pass; stale
    // bindings are detected through the generation stamp.
    Tape* tape = nullptr;
    std::uint64_t gen = 0;
    int node = -1;
};
}  // namespace detail

/// Dense row-major tensor of doubles. Values are immutable after
/// construction; copies share storage. A tensor optionally carries a handle
/// into a Tape when it participates in differentiation.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);
    explicit Tensor(double scalar);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t size() const { return d_->values.size(); }
    std::span<const double> values() const { return d_->values; }
    const double* raw() const { return d_->values.data(); }

    /// Scalar access; requires size() == 1.
    double value() const;
    double flat(std::size_t i) const { return d_->values[i]; }

    /// Same values, no tape binding.
    Tensor detach() const;

    bool tracked() const;

    detail::TensorData* data() const { return d_.get(); }
    const std::shared_ptr<detail::TensorData>& handle() const { return d_; }

  private:
    std::shared_ptr<detail::TensorData> d_;
    friend class Tape;
};

/// Reverse-mode tape. Records one node per differentiable operation, in
/// execution order (which is topological by construction); backward walks
/// the record once in reverse. The tape is rebuilt per forward pass:
/// call reset(), re-watch the parameters, run the forward, call backward.
class Tape {
  public:
    using BackwardFn = std::function<void(std::span<const double> gout,
                                          const std::vector<std::span<double>>& gin)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Marks a tensor as a differentiable input of the current recording.
    void watch(Tensor& t);

    /// Drops all nodes and invalidates previous bindings.
    void reset();

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t generation() const { return gen_; }
    bool tracks(const Tensor& t) const;

    /// Runs the reverse sweep from a scalar root.
    void backward(const Tensor& root);

    /// Gradient of the last backward() with respect to a watched or
    /// intermediate tensor. Zero tensor if the node was never reached.
    Tensor grad(const Tensor& t) const;

  private:
    struct Node {
        std::vector<int> parents;  // node id per input, -1 for untracked
        BackwardFn backward;
        std::size_t out_size = 0;
    };

    std::span<double> grad_buffer(int node, std::size_t size);

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::uint64_t gen_ = 1;

    friend Tensor make_op(Shape, std::vector<double>, std::initializer_list<const Tensor*>,
                          Tape::BackwardFn);
};

/// Builds an op result. If no input is tracked the result is a plain tensor;
/// otherwise a node is recorded on the (single, shared) tape of the tracked
/// inputs. `fn` receives the output gradient and one accumulation span per
/// input (empty for untracked inputs).
Tensor make_op(Shape out_shape, std::vector<double> out_values,
               std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn);

[[noreturn]] void throw_shape_error(const std::string& op, const Shape& a, const Shape& b);

}  // namespace pcd::ad
