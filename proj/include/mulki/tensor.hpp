#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mulki {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

namespace detail {

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

// One recorded primitive. Nodes are ordered by creation id; replaying them in
// descending id order is a valid reverse topological order of the graph, which
// is what makes the implicit tape deterministic.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward_fn;
};

struct Access;

}  // namespace detail

// Dense float64 tensor (rank 0, 1 or 2 in practice) taking part in a
// reverse-mode gradient tape. A Tensor is a cheap shared handle; the data of a
// non-leaf tensor never changes after creation.
class Tensor {
public:
    Tensor();

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> data, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    std::vector<double> to_vector() const;
    double item() const;
    double operator[](std::size_t i) const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    // Gradient after backward(); empty span when none was accumulated.
    std::span<const double> grad() const;
    void zero_grad();

    // In-place write access for leaves (optimizer updates, parameter loads).
    // Throws ContractError on a non-leaf.
    std::span<double> mutable_data();

    // Deep copy as a new leaf.
    Tensor clone(bool requires_grad) const;

    // Reverse pass from a single-element tensor. Leaf gradients accumulate over
    // repeated calls until zero_grad(); intermediate gradients are recomputed.
    void backward() const;

private:
    explicit Tensor(std::shared_ptr<detail::Node> node);
    std::shared_ptr<detail::Node> node_;
    friend struct detail::Access;
};

// Log clamp used by soft_cross_entropy.
inline constexpr double kLogClamp = 1e-12;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
// a[m x n] with row i multiplied by w[i].
Tensor mul_rows(const Tensor& a, const Tensor& w);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduce one axis away.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor l2_normalize(const Tensor& x, std::size_t axis);

// Cosine similarity of two nonzero vectors, as a scalar tensor.
Tensor cosine_sim(const Tensor& a, const Tensor& b);
// rows(a) x rows(b) cosine similarity matrix.
Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b);

// -sum(target * log(max(pred, kLogClamp))) over all entries. Target is a constant.
Tensor soft_cross_entropy(const Tensor& target, const Tensor& pred);
// Per-row version for [B x K] inputs; returns [B].
Tensor soft_cross_entropy_rows(const Tensor& target, const Tensor& pred);
// Mean over rows of -log_softmax(logits)[row, label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Squared Euclidean distance per row: [B x d], [B x d] -> [B].
Tensor row_sq_dist(const Tensor& a, const Tensor& b);
Tensor frobenius_norm(const Tensor& a);

// Same values, cut from the tape.
Tensor detach(const Tensor& a);
// Rows of table[V x d] selected by ids -> [n x d]. Gradient scatters back.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// Concatenate flattened tensors into one vector.
Tensor concat_flat(std::span<const Tensor> parts);

}  // namespace mulki
