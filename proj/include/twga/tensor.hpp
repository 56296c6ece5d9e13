#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "twga/rng.hpp"

namespace twga {

struct Node;

// Dense row-major tensor of doubles with a dynamic reverse-mode tape.
// Value-semantic handle: copies share the underlying data/grad buffers.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  std::shared_ptr<Node> node;                 // null for leaves/constants
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.shape = std::move(shape);
    std::size_t n = 1;
    for (int d : t.shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (values.size() != t.data->size())
      throw std::invalid_argument("Tensor: data size " + std::to_string(values.size()) +
                                  " does not match shape product " + std::to_string(t.data->size()));
    *t.data = std::move(values);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  std::size_t numel() const { return data ? data->size() : 0; }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : 1) : shape[1]; }
  // 1-D tensors are treated as a single row where a matrix is expected
  int width() const { return shape.size() >= 2 ? shape[1] : (shape.empty() ? 1 : shape[0]); }
  int height() const { return shape.size() >= 2 ? shape[0] : 1; }

  double item() const {
    if (numel() != 1) throw std::runtime_error("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return (*data)[0];
  }

  double& at(std::size_t i) { return (*data)[i]; }
  double at(std::size_t i) const { return (*data)[i]; }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // accumulates into parent grad buffers
};

namespace detail {

inline bool want_grad(const Tensor& t) { return t.requires_grad; }

inline Tensor make_out(std::vector<int> shape, bool requires_grad) {
  Tensor out = Tensor::zeros(std::move(shape), requires_grad);
  if (requires_grad) out.node = std::make_shared<Node>();
  return out;
}

inline void attach_parent(Tensor& out, const Tensor& p) {
  if (out.node && p.node) out.node->parents.push_back(p.node);
}

// C[m x n] += A[m x k] * B[k x n], ikj order
inline void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, B is [n x k]
inline void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[k x n] += A^T * B, A is [m x k], B is [m x n]
inline void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = detail::make_out(a.shape, a.requires_grad || b.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backprop = [og, ag, bg]() {
      if (ag)
        for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i];
      if (bg)
        for (std::size_t i = 0; i < og->size(); ++i) (*bg)[i] += (*og)[i];
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = detail::make_out(a.shape, a.requires_grad || b.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backprop = [og, ag, bg]() {
      if (ag)
        for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i];
      if (bg)
        for (std::size_t i = 0; i < og->size(); ++i) (*bg)[i] -= (*og)[i];
    };
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = detail::make_out(a.shape, a.requires_grad || b.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    auto ad = a.data, bd = b.data;
    out.node->backprop = [og, ag, bg, ad, bd]() {
      if (ag)
        for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (*bd)[i];
      if (bg)
        for (std::size_t i = 0; i < og->size(); ++i) (*bg)[i] += (*og)[i] * (*ad)[i];
    };
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] * c;
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    out.node->backprop = [og, ag, c]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * c;
    };
  }
  return out;
}

inline Tensor exp_op(const Tensor& a) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = std::exp((*a.data)[i]);
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (*od)[i];
    };
  }
  return out;
}

inline Tensor tanh_op(const Tensor& a) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = std::tanh((*a.data)[i]);
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (1.0 - (*od)[i] * (*od)[i]);
    };
  }
  return out;
}

inline Tensor sigmoid_op(const Tensor& a) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double x = (*a.data)[i];
    (*out.data)[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (*od)[i] * (1.0 - (*od)[i]);
    };
  }
  return out;
}

// max(x + margin, 0) elementwise
inline Tensor relu_hinge(const Tensor& a, double margin) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = std::max((*a.data)[i] + margin, 0.0);
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od]() {
      for (std::size_t i = 0; i < og->size(); ++i)
        if ((*od)[i] > 0.0) (*ag)[i] += (*og)[i];
    };
  }
  return out;
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  int m = a.height(), k = a.width(), k2 = b.height(), n = b.width();
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = detail::make_out({m, n}, a.requires_grad || b.requires_grad);
  detail::mm_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    auto ad = a.data, bd = b.data;
    out.node->backprop = [og, ag, bg, ad, bd, m, k, n]() {
      if (ag) detail::mm_nt_acc(og->data(), bd->data(), ag->data(), m, n, k);  // dA = dOut B^T
      if (bg) detail::mm_tn_acc(ad->data(), og->data(), bg->data(), m, k, n);  // dB = A^T dOut
    };
  }
  return out;
}

// A * B^T where B is [n x k]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  int m = a.height(), k = a.width(), n = b.height();
  if (k != b.width())
    throw std::invalid_argument("matmul_nt: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = detail::make_out({m, n}, a.requires_grad || b.requires_grad);
  detail::mm_nt_acc(a.data->data(), b.data->data(), out.data->data(), m, k, n);
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    auto ad = a.data, bd = b.data;
    out.node->backprop = [og, ag, bg, ad, bd, m, k, n]() {
      if (ag) detail::mm_acc(og->data(), bd->data(), ag->data(), m, n, k);     // dA = dOut B
      if (bg) detail::mm_tn_acc(og->data(), ad->data(), bg->data(), m, n, k);  // dB = dOut^T A
    };
  }
  return out;
}

// broadcast-add a row vector onto every row of a matrix
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  int rows = m.height(), cols = m.width();
  if (v.numel() != static_cast<std::size_t>(cols))
    throw std::invalid_argument("add_rowvec: width mismatch " + m.shape_str() + " vs " + v.shape_str());
  Tensor out = detail::make_out(m.shape, m.requires_grad || v.requires_grad);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      (*out.data)[static_cast<std::size_t>(i) * cols + j] =
          (*m.data)[static_cast<std::size_t>(i) * cols + j] + (*v.data)[j];
  if (out.node) {
    detail::attach_parent(out, m);
    detail::attach_parent(out, v);
    auto og = out.grad, mg = m.grad, vg = v.grad;
    out.node->backprop = [og, mg, vg, rows, cols]() {
      if (mg)
        for (std::size_t i = 0; i < og->size(); ++i) (*mg)[i] += (*og)[i];
      if (vg)
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) (*vg)[j] += (*og)[static_cast<std::size_t>(i) * cols + j];
    };
  }
  return out;
}

// gather rows of a table by index (embedding lookup)
inline Tensor rows(const Tensor& table, const std::vector<int>& ids) {
  int v = table.height(), d = table.width();
  for (int id : ids)
    if (id < 0 || id >= v) throw std::out_of_range("rows: index " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
  int n = static_cast<int>(ids.size());
  Tensor out = detail::make_out({n, d}, table.requires_grad);
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data->data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data->data() + static_cast<std::size_t>(i) * d);
  if (out.node) {
    detail::attach_parent(out, table);
    auto og = out.grad, tg = table.grad;
    out.node->backprop = [og, tg, ids, d]() {
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) (*tg)[static_cast<std::size_t>(ids[i]) * d + j] += (*og)[i * d + j];
    };
  }
  return out;
}

// mix embedding rows by a row-stochastic distribution: dist [n x V] * table [V x d]
inline Tensor embedding_mix(const Tensor& dist, const Tensor& table) {
  if (dist.width() != table.height())
    throw std::invalid_argument("embedding_mix: vocab dimension mismatch " + dist.shape_str() + " vs " + table.shape_str());
  return matmul(dist, table);
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  int rows = a.height(), cols = a.width();
  if (r0 < 0 || r1 > rows || r0 >= r1)
    throw std::out_of_range("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " + std::to_string(rows));
  Tensor out = detail::make_out({r1 - r0, cols}, a.requires_grad);
  std::copy_n(a.data->data() + static_cast<std::size_t>(r0) * cols, static_cast<std::size_t>(r1 - r0) * cols,
              out.data->data());
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    out.node->backprop = [og, ag, r0, cols]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[static_cast<std::size_t>(r0) * cols + i] += (*og)[i];
    };
  }
  return out;
}

inline Tensor row(const Tensor& a, int r) { return slice_rows(a, r, r + 1); }

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  int cols = parts[0].width();
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.width() != cols)
      throw std::invalid_argument("concat_rows: width mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
    total += p.height();
    rg = rg || p.requires_grad;
  }
  Tensor out = detail::make_out({total, cols}, rg);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data->data(), p.numel(), out.data->data() + off);
    off += p.numel();
  }
  if (out.node) {
    std::vector<std::shared_ptr<std::vector<double>>> pgrads;
    std::vector<std::size_t> sizes;
    for (const Tensor& p : parts) {
      detail::attach_parent(out, p);
      pgrads.push_back(p.grad);
      sizes.push_back(p.numel());
    }
    auto og = out.grad;
    out.node->backprop = [og, pgrads, sizes]() {
      std::size_t off = 0;
      for (std::size_t k = 0; k < pgrads.size(); ++k) {
        if (pgrads[k])
          for (std::size_t i = 0; i < sizes[k]; ++i) (*pgrads[k])[i] += (*og)[off + i];
        off += sizes[k];
      }
    };
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  int rows = a.height();
  if (b.height() != rows)
    throw std::invalid_argument("concat_cols: height mismatch " + a.shape_str() + " vs " + b.shape_str());
  int ca = a.width(), cb = b.width();
  Tensor out = detail::make_out({rows, ca + cb}, a.requires_grad || b.requires_grad);
  for (int i = 0; i < rows; ++i) {
    std::copy_n(a.data->data() + static_cast<std::size_t>(i) * ca, ca,
                out.data->data() + static_cast<std::size_t>(i) * (ca + cb));
    std::copy_n(b.data->data() + static_cast<std::size_t>(i) * cb, cb,
                out.data->data() + static_cast<std::size_t>(i) * (ca + cb) + ca);
  }
  if (out.node) {
    detail::attach_parent(out, a);
    detail::attach_parent(out, b);
    auto og = out.grad, ag = a.grad, bg = b.grad;
    out.node->backprop = [og, ag, bg, rows, ca, cb]() {
      for (int i = 0; i < rows; ++i) {
        if (ag)
          for (int j = 0; j < ca; ++j)
            (*ag)[static_cast<std::size_t>(i) * ca + j] += (*og)[static_cast<std::size_t>(i) * (ca + cb) + j];
        if (bg)
          for (int j = 0; j < cb; ++j)
            (*bg)[static_cast<std::size_t>(i) * cb + j] += (*og)[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
      }
    };
  }
  return out;
}

// ---- reductions / softmax family ----

inline Tensor sum_all(const Tensor& a) {
  Tensor out = detail::make_out({1}, a.requires_grad);
  double s = 0.0;
  for (double v : *a.data) s += v;
  (*out.data)[0] = s;
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    out.node->backprop = [og, ag]() {
      for (double& g : *ag) g += (*og)[0];
    };
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

// row-wise stable softmax over the last axis
inline Tensor softmax(const Tensor& a) {
  int rows = a.height(), cols = a.width();
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (int i = 0; i < rows; ++i) {
    const double* x = a.data->data() + static_cast<std::size_t>(i) * cols;
    double* y = out.data->data() + static_cast<std::size_t>(i) * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= z;
  }
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od, rows, cols]() {
      for (int i = 0; i < rows; ++i) {
        const double* y = od->data() + static_cast<std::size_t>(i) * cols;
        const double* gy = og->data() + static_cast<std::size_t>(i) * cols;
        double* gx = ag->data() + static_cast<std::size_t>(i) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return out;
}

// row-wise stable log-softmax over the last axis
inline Tensor log_softmax(const Tensor& a) {
  int rows = a.height(), cols = a.width();
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (int i = 0; i < rows; ++i) {
    const double* x = a.data->data() + static_cast<std::size_t>(i) * cols;
    double* y = out.data->data() + static_cast<std::size_t>(i) * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < cols; ++j) y[j] = x[j] - lz;
  }
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto od = out.data;
    out.node->backprop = [og, ag, od, rows, cols]() {
      for (int i = 0; i < rows; ++i) {
        const double* y = od->data() + static_cast<std::size_t>(i) * cols;
        const double* gy = og->data() + static_cast<std::size_t>(i) * cols;
        double* gx = ag->data() + static_cast<std::size_t>(i) * cols;
        double gsum = 0.0;
        for (int j = 0; j < cols; ++j) gsum += gy[j];
        for (int j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
      }
    };
  }
  return out;
}

// -log p[index] for a single logit row
inline Tensor cross_entropy(const Tensor& logits, int index) {
  if (logits.height() != 1)
    throw std::invalid_argument("cross_entropy: expected a single logit row, got " + logits.shape_str());
  int v = logits.width();
  if (index < 0 || index >= v)
    throw std::out_of_range("cross_entropy: index " + std::to_string(index) + " out of range [0," + std::to_string(v) + ")");
  Tensor lp = log_softmax(logits);
  Tensor out = detail::make_out({1}, lp.requires_grad);
  (*out.data)[0] = -(*lp.data)[index];
  if (out.node) {
    detail::attach_parent(out, lp);
    auto og = out.grad, lg = lp.grad;
    out.node->backprop = [og, lg, index]() { (*lg)[index] -= (*og)[0]; };
  }
  return out;
}

// mean label-smoothed cross entropy over T logit rows; backward is fused
inline Tensor smoothed_cross_entropy(const Tensor& logits, const std::vector<int>& targets, double smoothing) {
  int t = logits.height(), v = logits.width();
  if (static_cast<int>(targets.size()) != t)
    throw std::invalid_argument("smoothed_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(t) + " logit rows");
  for (int id : targets)
    if (id < 0 || id >= v) throw std::out_of_range("smoothed_cross_entropy: target " + std::to_string(id) + " out of range");
  Tensor out = detail::make_out({1}, logits.requires_grad);
  std::vector<double> probs(static_cast<std::size_t>(t) * v);
  double loss = 0.0;
  double uni = smoothing / static_cast<double>(v);
  for (int i = 0; i < t; ++i) {
    const double* x = logits.data->data() + static_cast<std::size_t>(i) * v;
    double* p = probs.data() + static_cast<std::size_t>(i) * v;
    double mx = *std::max_element(x, x + v);
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    double lz = mx + std::log(z);
    for (int j = 0; j < v; ++j) {
      p[j] /= z;
      loss -= uni * (x[j] - lz);
    }
    loss -= (1.0 - smoothing) * (x[targets[i]] - lz);
  }
  (*out.data)[0] = loss / t;
  if (out.node) {
    detail::attach_parent(out, logits);
    auto og = out.grad, lg = logits.grad;
    auto pr = std::make_shared<std::vector<double>>(std::move(probs));
    out.node->backprop = [og, lg, pr, targets, smoothing, t, v]() {
      double g = (*og)[0] / t;
      double uni = smoothing / static_cast<double>(v);
      for (int i = 0; i < t; ++i) {
        const double* p = pr->data() + static_cast<std::size_t>(i) * v;
        double* gx = lg->data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) gx[j] += g * (p[j] - uni);
        gx[targets[i]] -= g * (1.0 - smoothing);
      }
    };
  }
  return out;
}

// row-wise layer norm with learnable gain/bias vectors
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6) {
  int rows = x.height(), cols = x.width();
  if (gain.numel() != static_cast<std::size_t>(cols) || bias.numel() != static_cast<std::size_t>(cols))
    throw std::invalid_argument("layer_norm: gain/bias width mismatch with " + x.shape_str());
  Tensor out = detail::make_out(x.shape, x.requires_grad || gain.requires_grad || bias.requires_grad);
  std::vector<double> xhat(x.numel()), inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    const double* xr = x.data->data() + static_cast<std::size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= cols;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < cols; ++j) {
      double h = (xr[j] - mean) * is;
      xhat[static_cast<std::size_t>(i) * cols + j] = h;
      (*out.data)[static_cast<std::size_t>(i) * cols + j] = h * (*gain.data)[j] + (*bias.data)[j];
    }
  }
  if (out.node) {
    detail::attach_parent(out, x);
    detail::attach_parent(out, gain);
    detail::attach_parent(out, bias);
    auto og = out.grad, xg = x.grad, gg = gain.grad, bg = bias.grad;
    auto gd = gain.data;
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    out.node->backprop = [og, xg, gg, bg, gd, xh, is, rows, cols]() {
      for (int i = 0; i < rows; ++i) {
        const double* go = og->data() + static_cast<std::size_t>(i) * cols;
        const double* h = xh->data() + static_cast<std::size_t>(i) * cols;
        if (gg || bg) {
          for (int j = 0; j < cols; ++j) {
            if (gg) (*gg)[j] += go[j] * h[j];
            if (bg) (*bg)[j] += go[j];
          }
        }
        if (xg) {
          double* gx = xg->data() + static_cast<std::size_t>(i) * cols;
          double sum_g = 0.0, sum_gh = 0.0;
          for (int j = 0; j < cols; ++j) {
            double gj = go[j] * (*gd)[j];
            sum_g += gj;
            sum_gh += gj * h[j];
          }
          for (int j = 0; j < cols; ++j) {
            double gj = go[j] * (*gd)[j];
            gx[j] += (*is)[i] * (gj - sum_g / cols - h[j] * sum_gh / cols);
          }
        }
      }
    };
  }
  return out;
}

// inverted dropout; identity when rate == 0
inline Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  std::vector<double> mask(a.numel());
  double keep = 1.0 - rate;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    (*out.data)[i] = (*a.data)[i] * mask[i];
  }
  if (out.node) {
    detail::attach_parent(out, a);
    auto og = out.grad, ag = a.grad;
    auto mk = std::make_shared<std::vector<double>>(std::move(mask));
    out.node->backprop = [og, ag, mk]() {
      for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (*mk)[i];
    };
  }
  return out;
}

// ---- backward pass ----

// Reverse-mode sweep from a scalar loss. Visits each node exactly once in
// reverse topological order; leaf tensors end up with dLoss/dLeaf in grad.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
  if (!loss.requires_grad || !loss.node) return;
  (*loss.grad)[0] = 1.0;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // iterative DFS post-order
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

inline bool all_finite(const Tensor& t) {
  for (double v : *t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace twga
