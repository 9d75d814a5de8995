#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace unitok {

class Tape;

struct TensorData {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation
    Tape* tape = nullptr;      // tape that recorded this tensor as an op output
};

// Dense 64-bit float tensor with value semantics over a shared buffer.
// Rank is 0 (scalar), 1 or 2; anything op-specific beyond that is rejected.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int rows() const;
    int cols() const;
    int64_t numel() const { return static_cast<int64_t>(d_->data.size()); }

    double* data() { return d_->data.data(); }
    const double* data() const { return d_->data.data(); }
    std::vector<double>& vec() { return d_->data; }
    const std::vector<double>& vec() const { return d_->data; }

    double item() const;
    double at(int i, int j) const;
    double& at(int i, int j);

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    bool has_grad() const { return d_ && !d_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_buffer();  // sized and zeroed on first use
    void zero_grad() { if (d_) d_->grad.clear(); }

    std::shared_ptr<TensorData> impl() const { return d_; }
    std::string shape_str() const;

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
    friend class Tape;
};

// Define-by-run gradient tape. Exactly one may be active per thread; ops
// record backward rules while one is active and recording is not suppressed.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // Registers `out` as produced by an op whose reverse rule is `backward`.
    void record(Tensor& out, std::function<void()> backward);

    // Reverse sweep from a scalar loss recorded on this tape. A second call
    // without a fresh tape is rejected.
    void backward(const Tensor& loss);

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::shared_ptr<TensorData> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Suppresses tape recording in scope (decode passes inside a training step).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,k] * b[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m,k] * b[n,k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a[m,k]^T * b[m,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // x[m,n] + bias[n] per row

Tensor softmax_rows(const Tensor& x, double temperature);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

Tensor take_rows(const Tensor& x, const std::vector<int>& idx);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor transpose(const Tensor& x);

Tensor mean_rows(const Tensor& x);       // [m,n] -> [1,n]
Tensor row_l2_normalize(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor safe_log(const Tensor& x);        // ln(max(x, 1e-300))
Tensor sum(const Tensor& x);             // full reduce to scalar

// Embedding lookup across two tables split at `split`: ids < split hit `lo`,
// the rest hit `hi` at row id-split. With a single table use take_rows.
Tensor gather_split(const Tensor& lo, const Tensor& hi, int split,
                    const std::vector<int>& ids);

int argmax(const double* v, int n);

// Central-difference gradient of a deterministic scalar function with respect
// to every entry of every tensor in `params`, in order.
std::vector<std::vector<double>> finite_diff_grad(
    const std::function<double()>& f, const std::vector<Tensor>& params, double eps);

}  // namespace unitok
