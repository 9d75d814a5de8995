#include "tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unitok {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int s : shape) {
        if (s <= 0) throw ShapeError("tensor shape entries must be positive");
        n *= s;
    }
    return n;
}

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;

bool recording() { return g_active_tape != nullptr && g_no_grad_depth == 0; }

void accumulate(const std::shared_ptr<TensorData>& t, const double* g, int64_t n) {
    if (!t->requires_grad) return;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) t->grad[i] += g[i];
}

const std::vector<double>* out_grad(const std::shared_ptr<TensorData>& out) {
    return out->grad.empty() ? nullptr : &out->grad;
}

}  // namespace

bool grad_recording_enabled() { return recording(); }

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    int64_t n = shape_numel(shape);
    d->shape = std::move(shape);
    d->data.assign(static_cast<size_t>(n), 0.0);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: shape/product mismatch");
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(data);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = rng.normal(0.0, stddev);
    return t;
}

int Tensor::rows() const {
    if (rank() == 2) return d_->shape[0];
    if (rank() == 1) return 1;
    throw ShapeError("rows(): tensor is not a matrix, shape " + shape_str());
}

int Tensor::cols() const {
    if (rank() == 2) return d_->shape[1];
    if (rank() == 1) return d_->shape[0];
    throw ShapeError("cols(): tensor is not a matrix, shape " + shape_str());
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str());
    return d_->data[0];
}

double Tensor::at(int i, int j) const {
    return d_->data[static_cast<size_t>(i) * cols() + j];
}

double& Tensor::at(int i, int j) {
    return d_->data[static_cast<size_t>(i) * cols() + j];
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw TapeError("grad(): no gradient accumulated");
    return d_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
    if (d_->grad.empty()) d_->grad.assign(d_->data.size(), 0.0);
    return d_->grad;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < d_->shape.size(); ++i) {
        if (i) os << "x";
        os << d_->shape[i];
    }
    os << "]";
    return os.str();
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() {
    if (g_active_tape != nullptr)
        throw ContractError("a tape is already active; one tape per training step");
    g_active_tape = this;
}

Tape::~Tape() {
    if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return recording() ? g_active_tape : nullptr; }

void Tape::record(Tensor& out, std::function<void()> backward) {
    out.d_->requires_grad = true;
    out.d_->tape = this;
    nodes_.push_back(Node{out.d_, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw TapeError("backward() already ran on this tape");
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward(): loss must be a scalar");
    if (loss.impl()->tape != this)
        throw TapeError("backward(): loss is not an output of this tape");
    consumed_ = true;
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // nothing flowed back into this op
        it->backward();
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// ---- op helpers -------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* op) {
    if (!t.defined() || t.rank() != 2)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor");
}

Tensor make_out(std::vector<int> shape) { return Tensor::zeros(std::move(shape)); }

bool any_grad(std::initializer_list<const Tensor*> ts) {
    if (!recording()) return false;
    for (const Tensor* t : ts)
        if ((*t).requires_grad()) return true;
    return false;
}

void maybe_record(Tensor& out, bool want, std::function<void()> bw) {
    if (want) g_active_tape->record(out, std::move(bw));
}

}  // namespace

// ---- matmul family ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, lhs " + a.shape_str() +
                         " rhs " + b.shape_str());
    int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_out({m, n});
    EMap(out.data(), m, n).noalias() = ECMap(a.data(), m, k) * ECMap(b.data(), k, n);
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), m, k, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        ECMap G(og->data(), m, n);
        if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->data.size(), 0.0);
            EMap(ad->grad.data(), m, k).noalias() += G * ECMap(bd->data.data(), k, n).transpose();
        }
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            EMap(bd->grad.data(), k, n).noalias() += ECMap(ad->data.data(), m, k).transpose() * G;
        }
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree, lhs " + a.shape_str() +
                         " rhs " + b.shape_str());
    int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = make_out({m, n});
    EMap(out.data(), m, n).noalias() =
        ECMap(a.data(), m, k) * ECMap(b.data(), n, k).transpose();
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), m, k, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        ECMap G(og->data(), m, n);
        if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->data.size(), 0.0);
            EMap(ad->grad.data(), m, k).noalias() += G * ECMap(bd->data.data(), n, k);
        }
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            EMap(bd->grad.data(), n, k).noalias() += G.transpose() * ECMap(ad->data.data(), m, k);
        }
    });
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: inner dimensions disagree, lhs " + a.shape_str() +
                         " rhs " + b.shape_str());
    int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_out({k, n});
    EMap(out.data(), k, n).noalias() =
        ECMap(a.data(), m, k).transpose() * ECMap(b.data(), m, n);
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), m, k, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        ECMap G(og->data(), k, n);
        if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->data.size(), 0.0);
            EMap(ad->grad.data(), m, k).noalias() += ECMap(bd->data.data(), m, n) * G.transpose();
        }
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            EMap(bd->grad.data(), m, n).noalias() += ECMap(ad->data.data(), m, k) * G;
        }
    });
    return out;
}

// ---- elementwise ------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch, lhs " + a.shape_str() +
                         " rhs " + b.shape_str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    int64_t n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        accumulate(ad, og->data(), n);
        accumulate(bd, og->data(), n);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    int64_t n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        accumulate(ad, og->data(), n);
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) bd->grad[i] -= (*og)[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    int64_t n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    bool want = any_grad({&a, &b});
    maybe_record(out, want, [ad = a.impl(), bd = b.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->data.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) ad->grad[i] += (*og)[i] * bd->data[i];
        }
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) bd->grad[i] += (*og)[i] * ad->data[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    int64_t n = a.numel();
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    bool want = any_grad({&a});
    maybe_record(out, want, [ad = a.impl(), od = out.impl(), n, c]() {
        const auto* og = out_grad(od);
        if (!og) return;
        if (ad->requires_grad) {
            if (ad->grad.empty()) ad->grad.assign(ad->data.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) ad->grad[i] += (*og)[i] * c;
        }
    });
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_row_bias");
    if (bias.rank() != 1 || bias.cols() != x.cols())
        throw ShapeError("add_row_bias: bias " + bias.shape_str() + " does not match row width of " +
                         x.shape_str());
    int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data()[i * n + j] = x.data()[i * n + j] + bias.data()[j];
    bool want = any_grad({&x, &bias});
    maybe_record(out, want, [xd = x.impl(), bd = bias.impl(), od = out.impl(), m, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        accumulate(xd, og->data(), static_cast<int64_t>(m) * n);
        if (bd->requires_grad) {
            if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) bd->grad[j] += (*og)[i * n + j];
        }
    });
    return out;
}

// ---- softmax / cross entropy --------------------------------------------------

Tensor softmax_rows(const Tensor& x, double temperature) {
    require_matrix(x, "softmax_rows");
    if (!(temperature > 0.0)) throw ContractError("softmax_rows: temperature must be positive");
    int m = x.rows(), n = x.cols();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.data()[i]))
            throw NumericError("softmax_rows: non-finite input");
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        const double* row = x.data() + static_cast<size_t>(i) * n;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp((row[j] - mx) / temperature);
            z += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= z;
    }
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), m, n, temperature]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i) {
            const double* y = od->data.data() + static_cast<size_t>(i) * n;
            const double* g = og->data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += g[j] * y[j];
            double* gx = xd->grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot) / temperature;
        }
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_matrix(logits, "cross_entropy");
    int m = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != m)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(m) + " rows");
    for (int t : targets)
        if (t < 0 || t >= n)
            throw IndexError("cross_entropy: target id " + std::to_string(t) +
                             " outside vocabulary of size " + std::to_string(n));
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = logits.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        total += -(row[targets[i]] - mx - std::log(z));
    }
    Tensor out = Tensor::scalar(total / m);
    bool want = any_grad({&logits});
    maybe_record(out, want, [ld = logits.impl(), od = out.impl(), targets, m, n]() {
        const auto* og = out_grad(od);
        if (!og || !ld->requires_grad) return;
        if (ld->grad.empty()) ld->grad.assign(ld->data.size(), 0.0);
        double s = (*og)[0] / m;
        for (int i = 0; i < m; ++i) {
            const double* row = ld->data.data() + static_cast<size_t>(i) * n;
            double* grow = ld->grad.data() + static_cast<size_t>(i) * n;
            double mx = row[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
            for (int j = 0; j < n; ++j) {
                double p = std::exp(row[j] - mx) / z;
                grow[j] += s * (p - (j == targets[i] ? 1.0 : 0.0));
            }
        }
    });
    return out;
}

// ---- shape moves ---------------------------------------------------------------

Tensor take_rows(const Tensor& x, const std::vector<int>& idx) {
    require_matrix(x, "take_rows");
    int m = static_cast<int>(idx.size()), n = x.cols();
    if (m == 0) throw ShapeError("take_rows: empty index list");
    for (int i : idx)
        if (i < 0 || i >= x.rows())
            throw IndexError("take_rows: row " + std::to_string(i) + " outside " + x.shape_str());
    Tensor out = make_out({m, n});
    for (int i = 0; i < m; ++i)
        std::copy_n(x.data() + static_cast<size_t>(idx[i]) * n, n,
                    out.data() + static_cast<size_t>(i) * n);
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), idx, m, n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i) {
            const double* g = og->data() + static_cast<size_t>(i) * n;
            double* dst = xd->grad.data() + static_cast<size_t>(idx[i]) * n;
            for (int j = 0; j < n; ++j) dst[j] += g[j];
        }
    });
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int len) {
    require_matrix(x, "slice_rows");
    if (start < 0 || len <= 0 || start + len > x.rows())
        throw IndexError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + x.shape_str());
    std::vector<int> idx(len);
    for (int i = 0; i < len; ++i) idx[i] = start + i;
    return take_rows(x, idx);
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    require_matrix(x, "slice_cols");
    int m = x.rows(), n = x.cols();
    if (start < 0 || len <= 0 || start + len > n)
        throw IndexError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + x.shape_str());
    Tensor out = make_out({m, len});
    for (int i = 0; i < m; ++i)
        std::copy_n(x.data() + static_cast<size_t>(i) * n + start, len,
                    out.data() + static_cast<size_t>(i) * len);
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), m, n, start, len]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i) {
            const double* g = og->data() + static_cast<size_t>(i) * len;
            double* dst = xd->grad.data() + static_cast<size_t>(i) * n + start;
            for (int j = 0; j < len; ++j) dst[j] += g[j];
        }
    });
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    int n = parts[0].cols(), m = 0;
    for (const Tensor& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
        m += p.rows();
    }
    Tensor out = make_out({m, n});
    int row = 0;
    bool want = false;
    for (const Tensor& p : parts) {
        std::copy_n(p.data(), p.numel(), out.data() + static_cast<size_t>(row) * n);
        row += p.rows();
        want = want || (recording() && p.requires_grad());
    }
    std::vector<std::shared_ptr<TensorData>> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    maybe_record(out, want, [impls, od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        int row = 0;
        for (const auto& pd : impls) {
            int pm = pd->shape[0];
            if (pd->requires_grad) {
                if (pd->grad.empty()) pd->grad.assign(pd->data.size(), 0.0);
                const double* g = og->data() + static_cast<size_t>(row) * n;
                for (int64_t i = 0; i < static_cast<int64_t>(pm) * n; ++i) pd->grad[i] += g[i];
            }
            row += pm;
        }
    });
    return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int m = parts[0].rows(), n = 0;
    for (const Tensor& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
        n += p.cols();
    }
    Tensor out = make_out({m, n});
    int col = 0;
    bool want = false;
    for (const Tensor& p : parts) {
        int pn = p.cols();
        for (int i = 0; i < m; ++i)
            std::copy_n(p.data() + static_cast<size_t>(i) * pn, pn,
                        out.data() + static_cast<size_t>(i) * n + col);
        col += pn;
        want = want || (recording() && p.requires_grad());
    }
    std::vector<std::shared_ptr<TensorData>> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    maybe_record(out, want, [impls, od = out.impl(), m, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        int col = 0;
        for (const auto& pd : impls) {
            int pn = pd->shape[1];
            if (pd->requires_grad) {
                if (pd->grad.empty()) pd->grad.assign(pd->data.size(), 0.0);
                for (int i = 0; i < m; ++i) {
                    const double* g = og->data() + static_cast<size_t>(i) * n + col;
                    double* dst = pd->grad.data() + static_cast<size_t>(i) * pn;
                    for (int j = 0; j < pn; ++j) dst[j] += g[j];
                }
            }
            col += pn;
        }
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    require_matrix(x, "transpose");
    int m = x.rows(), n = x.cols();
    Tensor out = make_out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[static_cast<size_t>(j) * m + i] = x.at(i, j);
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), m, n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                xd->grad[static_cast<size_t>(i) * n + j] += (*og)[static_cast<size_t>(j) * m + i];
    });
    return out;
}

// ---- reductions / normalizations ------------------------------------------------

Tensor mean_rows(const Tensor& x) {
    require_matrix(x, "mean_rows");
    int m = x.rows(), n = x.cols();
    Tensor out = make_out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[j] += x.at(i, j);
    for (int j = 0; j < n; ++j) out.data()[j] /= m;
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), m, n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                xd->grad[static_cast<size_t>(i) * n + j] += (*og)[j] / m;
    });
    return out;
}

Tensor row_l2_normalize(const Tensor& x) {
    require_matrix(x, "row_l2_normalize");
    int m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += x.at(i, j) * x.at(i, j);
        norms[i] = std::sqrt(std::max(s, 1e-24));
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) / norms[i];
    }
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), norms, m, n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int i = 0; i < m; ++i) {
            const double* xv = xd->data.data() + static_cast<size_t>(i) * n;
            const double* g = og->data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += xv[j] * g[j];
            double inv = 1.0 / norms[i], inv3 = inv * inv * inv;
            double* gx = xd->grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx[j] += g[j] * inv - xv[j] * dot * inv3;
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_matrix(x, "layer_norm");
    int m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layer_norm: gain/bias width does not match " + x.shape_str());
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> mu(m), sig(m);
    for (int i = 0; i < m; ++i) {
        const double* row = x.data() + static_cast<size_t>(i) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += row[j];
        mu[i] = s / n;
        double v = 0.0;
        for (int j = 0; j < n; ++j) v += (row[j] - mu[i]) * (row[j] - mu[i]);
        sig[i] = std::sqrt(v / n + eps);
        for (int j = 0; j < n; ++j)
            out.at(i, j) = gain.data()[j] * (row[j] - mu[i]) / sig[i] + bias.data()[j];
    }
    bool want = any_grad({&x, &gain, &bias});
    maybe_record(out, want,
                 [xd = x.impl(), gd = gain.impl(), bd = bias.impl(), od = out.impl(),
                  mu, sig, m, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        for (int i = 0; i < m; ++i) {
            const double* xv = xd->data.data() + static_cast<size_t>(i) * n;
            const double* g = og->data() + static_cast<size_t>(i) * n;
            double s1 = 0.0, s2 = 0.0;
            std::vector<double> xhat(n), gg(n);
            for (int j = 0; j < n; ++j) {
                xhat[j] = (xv[j] - mu[i]) / sig[i];
                gg[j] = g[j] * gd->data[j];
                s1 += gg[j];
                s2 += gg[j] * xhat[j];
            }
            if (xd->requires_grad) {
                if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
                double* gx = xd->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j)
                    gx[j] += (gg[j] - s1 / n - xhat[j] * s2 / n) / sig[i];
            }
            if (gd->requires_grad) {
                if (gd->grad.empty()) gd->grad.assign(gd->data.size(), 0.0);
                for (int j = 0; j < n; ++j) gd->grad[j] += g[j] * xhat[j];
            }
            if (bd->requires_grad) {
                if (bd->grad.empty()) bd->grad.assign(bd->data.size(), 0.0);
                for (int j = 0; j < n; ++j) bd->grad[j] += g[j];
            }
        }
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    int64_t n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (int64_t i = 0; i < n; ++i) {
        double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            double v = xd->data[i];
            double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            xd->grad[i] += (*og)[i] * (cdf + v * pdf);
        }
    });
    return out;
}

Tensor safe_log(const Tensor& x) {
    int64_t n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < n; ++i) out.data()[i] = std::log(std::max(x.data()[i], 1e-300));
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int64_t i = 0; i < n; ++i)
            xd->grad[i] += (*og)[i] / std::max(xd->data[i], 1e-300);
    });
    return out;
}

Tensor sum(const Tensor& x) {
    int64_t n = x.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += x.data()[i];
    Tensor out = Tensor::scalar(s);
    bool want = any_grad({&x});
    maybe_record(out, want, [xd = x.impl(), od = out.impl(), n]() {
        const auto* og = out_grad(od);
        if (!og || !xd->requires_grad) return;
        if (xd->grad.empty()) xd->grad.assign(xd->data.size(), 0.0);
        for (int64_t i = 0; i < n; ++i) xd->grad[i] += (*og)[0];
    });
    return out;
}

Tensor gather_split(const Tensor& lo, const Tensor& hi, int split, const std::vector<int>& ids) {
    require_matrix(lo, "gather_split");
    require_matrix(hi, "gather_split");
    if (lo.cols() != hi.cols()) throw ShapeError("gather_split: table widths differ");
    int n = lo.cols(), m = static_cast<int>(ids.size());
    if (m == 0) throw ShapeError("gather_split: empty id list");
    Tensor out = make_out({m, n});
    for (int i = 0; i < m; ++i) {
        int id = ids[i];
        const Tensor& src = id < split ? lo : hi;
        int row = id < split ? id : id - split;
        if (row < 0 || row >= src.rows())
            throw IndexError("gather_split: id " + std::to_string(id) + " outside tables");
        std::copy_n(src.data() + static_cast<size_t>(row) * n, n,
                    out.data() + static_cast<size_t>(i) * n);
    }
    bool want = any_grad({&lo, &hi});
    maybe_record(out, want,
                 [ld = lo.impl(), hd = hi.impl(), od = out.impl(), split, ids, m, n]() {
        const auto* og = out_grad(od);
        if (!og) return;
        for (int i = 0; i < m; ++i) {
            int id = ids[i];
            auto& td = id < split ? ld : hd;
            if (!td->requires_grad) continue;
            if (td->grad.empty()) td->grad.assign(td->data.size(), 0.0);
            int row = id < split ? id : id - split;
            const double* g = og->data() + static_cast<size_t>(i) * n;
            double* dst = td->grad.data() + static_cast<size_t>(row) * n;
            for (int j = 0; j < n; ++j) dst[j] += g[j];
        }
    });
    return out;
}

int argmax(const double* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::vector<std::vector<double>> finite_diff_grad(
    const std::function<double()>& f, const std::vector<Tensor>& params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw ContractError("finite_diff_grad: eps must lie in [1e-7, 1e-3]");
    {
        double a = f(), b = f();
        if (a != b) throw OracleError("finite_diff_grad: function is not deterministic");
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) {
        Tensor t = p;  // shared buffer; perturb in place and restore
        std::vector<double> g(t.numel());
        for (int64_t i = 0; i < t.numel(); ++i) {
            double saved = t.data()[i];
            t.data()[i] = saved + eps;
            double fp = f();
            t.data()[i] = saved - eps;
            double fm = f();
            t.data()[i] = saved;
            g[i] = (fp - fm) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace unitok
