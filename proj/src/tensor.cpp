#include "pcdiff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pcd::ad {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

void throw_shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                                shape_str(b));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " expects " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    }
    d_ = std::make_shared<detail::TensorData>();
    d_->shape = std::move(shape);
    d_->values = std::move(values);
}

Tensor::Tensor(double scalar) : Tensor(Shape{}, std::vector<double>{scalar}) {}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal() * stddev;
    return Tensor(std::move(shape), std::move(v));
}

double Tensor::value() const {
    if (size() != 1) {
        throw std::logic_error("Tensor::value: tensor of shape " + shape_str(shape()) +
                               " is not a scalar");
    }
    return d_->values[0];
}

Tensor Tensor::detach() const {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    return t;
}

bool Tensor::tracked() const {
    return d_ && d_->tape != nullptr && d_->gen == d_->tape->generation() && d_->node >= 0;
}

void Tape::watch(Tensor& t) {
    if (!t.defined()) throw std::invalid_argument("Tape::watch: undefined tensor");
    if (t.tracked() && t.data()->tape == this) return;
    Node node;
    node.out_size = t.size();
    t.data()->tape = this;
    t.data()->gen = gen_;
    t.data()->node = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    ++gen_;
}

bool Tape::tracks(const Tensor& t) const {
    return t.defined() && t.data()->tape == this && t.data()->gen == gen_ && t.data()->node >= 0;
}

std::span<double> Tape::grad_buffer(int node, std::size_t size) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& buf = grads_[static_cast<std::size_t>(node)];
    if (buf.empty()) buf.assign(size, 0.0);
    return buf;
}

void Tape::backward(const Tensor& root) {
    if (!tracks(root)) throw std::logic_error("Tape::backward: root is not tracked by this tape");
    if (root.size() != 1) throw std::logic_error("Tape::backward: root must be scalar");
    grads_.assign(nodes_.size(), {});
    grad_buffer(root.data()->node, 1)[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.backward) continue;          // watched input
        if (grads_[i].empty()) continue;       // never reached from the root
        std::vector<std::span<double>> gin(node.parents.size());
        for (std::size_t p = 0; p < node.parents.size(); ++p) {
            const int parent = node.parents[p];
            if (parent >= 0) gin[p] = grad_buffer(parent, nodes_[static_cast<std::size_t>(parent)].out_size);
        }
        node.backward(grads_[i], gin);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (!tracks(t)) throw std::logic_error("Tape::grad: tensor is not tracked by this tape");
    const auto node = static_cast<std::size_t>(t.data()->node);
    if (node < grads_.size() && !grads_[node].empty()) {
        return Tensor(t.shape(), grads_[node]);
    }
    return Tensor::zeros(t.shape());
}

Tensor make_op(Shape out_shape, std::vector<double> out_values,
               std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
    Tape* tape = nullptr;
    for (const Tensor* in : inputs) {
        if (in->tracked()) {
            Tape* t = in->data()->tape;
            if (tape && tape != t) {
                throw std::logic_error("make_op: inputs belong to different tapes");
            }
            tape = t;
        }
    }
    for (const double v : out_values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("make_op: non-finite value produced by a forward operation");
        }
    }
    Tensor out(std::move(out_shape), std::move(out_values));
    if (!tape) return out;

    Tape::Node node;
    node.out_size = out.size();
    node.backward = std::move(fn);
    node.parents.reserve(inputs.size());
    for (const Tensor* in : inputs) {
        node.parents.push_back(in->tracked() ? in->data()->node : -1);
    }
    out.data()->tape = tape;
    out.data()->gen = tape->generation();
    out.data()->node = static_cast<int>(tape->nodes_.size());
    tape->nodes_.push_back(std::move(node));
    return out;
}

}  // namespace pcd::ad
