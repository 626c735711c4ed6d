#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cstvae {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized iff grad_path
    bool grad_path = false;    // participates in differentiation
    bool leaf = false;         // user-created parameter
    Tape* tape = nullptr;
};
}  // namespace detail

// Value-semantic handle over shared storage. Values are immutable once an
// operation has consumed them; only the optimizer writes through
// mutable_value(), between tapes.
class Tensor {
  public:
    Tensor() = default;

    // Plain data, not differentiable, not traced.
    static Tensor constant(Shape shape, std::vector<double> value);
    static Tensor full(Shape shape, double v);
    static Tensor zeros(Shape shape);
    static Tensor scalar(double v);
    // Differentiable leaf (a trainable parameter). Gradients accumulate into
    // grad() across backward calls until zero_grad().
    static Tensor param(Shape shape, std::vector<double> value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    i64 size() const;
    i64 rank() const;
    const std::vector<double>& value() const;
    std::vector<double>& mutable_value();
    double item() const;  // single-element tensors only

    bool requires_grad() const;
    bool is_leaf() const;
    const std::vector<double>& grad() const;
    void zero_grad();
    Tape* tape() const;

    std::shared_ptr<detail::TensorNode> node_;
};

// One training step builds and consumes one tape. Operations record a
// backward rule when any input is on the gradient path and a tape is
// reachable through the inputs; replay happens in exact reverse order of
// recording, which makes gradient accumulation order fixed.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // A traced input: not differentiable itself, but anchors downstream
    // operations to this tape so parameters get gradients.
    Tensor input(Shape shape, std::vector<double> value);

    // Binds an existing leaf to this tape for expressions built purely from
    // parameters. The binding is released when the tape is destroyed.
    Tensor watch(const Tensor& leaf);

    ~Tape();

    std::size_t num_ops() const { return ops_.size(); }

    // Seeds d(loss)/d(loss)=1 and replays backward rules in reverse.
    // Intermediate gradients are reset per call; leaf gradients accumulate.
    void backward(const Tensor& loss);

    void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> fn);

  private:
    struct Op {
        std::shared_ptr<detail::TensorNode> out;
        std::function<void()> fn;
    };
    std::vector<Op> ops_;
    std::vector<std::shared_ptr<detail::TensorNode>> watched_;
};

// ---- tensor operations ----
// Binary ops require equal shapes (scalar overloads cover broadcasting).

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double s);
Tensor sub(double s, const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// Zero gradient outside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis);   // 2-d tensors
Tensor mean(const Tensor& x, int axis);  // 2-d tensors

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, i64 c0, i64 c1);
Tensor broadcast_rows(const Tensor& v, i64 rows);

// Per-row loss: logsumexp(row) - row[label]. Backward is softmax minus
// the one-hot target.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<i64>& labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return sub(s, a); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

}  // namespace cstvae
