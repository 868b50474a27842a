#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "cdpad/error.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

enum class DomainTag : std::uint8_t { Source = 0, Target = 1 };

struct KernelSpec {
  enum class Kind { Rbf, Linear };
  Kind kind = Kind::Rbf;
  // Squared-distance scale for the RBF kernel: k = exp(-||x-y||^2 / bandwidth).
  // <= 0 selects the median heuristic: the median of the pairwise squared
  // distances over the union of both batches, treated as a constant for
  // gradient purposes.
  double bandwidth = 0.0;

  static KernelSpec rbf_median() { return {Kind::Rbf, 0.0}; }
  static KernelSpec rbf(double bw) { return {Kind::Rbf, bw}; }
  static KernelSpec linear_kernel() { return {Kind::Linear, 0.0}; }
};

namespace detail {

template <class T>
double sq_dist(const T* a, const T* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

template <class T>
double dot(const T* a, const T* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class T>
double resolve_bandwidth(const KernelSpec& kernel, const TensorT<T>& s,
                         const TensorT<T>& t, int d) {
  if (kernel.bandwidth > 0.0) return kernel.bandwidth;
  const int ns = s.dim(0);
  const int nt = t.dim(0);
  const int total = ns + nt;
  std::vector<const T*> rows;
  rows.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < ns; ++i) rows.push_back(s.data.data() + static_cast<std::int64_t>(i) * d);
  for (int i = 0; i < nt; ++i) rows.push_back(t.data.data() + static_cast<std::int64_t>(i) * d);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(total) * (total - 1) / 2);
  for (int i = 0; i < total; ++i)
    for (int j = i + 1; j < total; ++j)
      dists.push_back(sq_dist(rows[static_cast<std::size_t>(i)],
                              rows[static_cast<std::size_t>(j)], d));
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double med = dists[dists.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

}  // namespace detail

/// Biased (V-statistic) squared maximum mean discrepancy between two
/// embedding batches (Ns,d) and (Nt,d). With unequal batch sizes the three
/// kernel sums are weighted 1/Ns^2, 1/Nt^2 and 2/(Ns*Nt). Optional gradient
/// outputs receive d(MMD^2)/dS and d(MMD^2)/dT.
template <class T>
T mmd_squared(const TensorT<T>& s, const TensorT<T>& t, const KernelSpec& kernel,
              std::type_identity_t<TensorT<T>>* grad_s = nullptr,
              std::type_identity_t<TensorT<T>>* grad_t = nullptr) {
  require(s.rank() == 2 && t.rank() == 2, ErrorCode::ShapeMismatch,
          "mmd_squared expects (N,d) batches");
  require(s.dim(0) >= 1 && t.dim(0) >= 1, ErrorCode::InvalidArgument,
          "mmd_squared on an empty batch");
  require(s.dim(1) == t.dim(1), ErrorCode::ShapeMismatch,
          "mmd_squared dimension mismatch");
  const int ns = s.dim(0);
  const int nt = t.dim(0);
  const int d = s.dim(1);

  const double bw = kernel.kind == KernelSpec::Kind::Rbf
                        ? detail::resolve_bandwidth(kernel, s, t, d)
                        : 0.0;

  if (grad_s) {
    grad_s->shape = s.shape;
    grad_s->data.assign(s.data.size(), T(0));
  }
  if (grad_t) {
    grad_t->shape = t.shape;
    grad_t->data.assign(t.data.size(), T(0));
  }

  auto row_s = [&](int i) { return s.data.data() + static_cast<std::int64_t>(i) * d; };
  auto row_t = [&](int i) { return t.data.data() + static_cast<std::int64_t>(i) * d; };

  // kernel value plus gradient contribution on x for the pair (x, y)
  auto kernel_eval = [&](const T* x, const T* y, double weight, T* gx, T* gy) {
    double k;
    if (kernel.kind == KernelSpec::Kind::Rbf) {
      k = std::exp(-detail::sq_dist(x, y, d) / bw);
      if (gx || gy) {
        const double coeff = weight * k * (-2.0 / bw);
        for (int e = 0; e < d; ++e) {
          const double diff = static_cast<double>(x[e]) - static_cast<double>(y[e]);
          if (gx) gx[e] += static_cast<T>(coeff * diff);
          if (gy) gy[e] -= static_cast<T>(coeff * diff);
        }
      }
    } else {
      k = detail::dot(x, y, d);
      if (gx) {
        for (int e = 0; e < d; ++e)
          gx[e] += static_cast<T>(weight * static_cast<double>(y[e]));
      }
      if (gy) {
        for (int e = 0; e < d; ++e)
          gy[e] += static_cast<T>(weight * static_cast<double>(x[e]));
      }
    }
    return k;
  };

  double total = 0.0;
  const double wss = 1.0 / (static_cast<double>(ns) * ns);
  const double wtt = 1.0 / (static_cast<double>(nt) * nt);
  const double wst = -2.0 / (static_cast<double>(ns) * nt);

  for (int i = 0; i < ns; ++i) {
    for (int j = 0; j < ns; ++j) {
      T* gi = grad_s ? grad_s->data.data() + static_cast<std::int64_t>(i) * d : nullptr;
      T* gj = grad_s ? grad_s->data.data() + static_cast<std::int64_t>(j) * d : nullptr;
      total += wss * kernel_eval(row_s(i), row_s(j), wss, gi, gj);
    }
  }
  for (int i = 0; i < nt; ++i) {
    for (int j = 0; j < nt; ++j) {
      T* gi = grad_t ? grad_t->data.data() + static_cast<std::int64_t>(i) * d : nullptr;
      T* gj = grad_t ? grad_t->data.data() + static_cast<std::int64_t>(j) * d : nullptr;
      total += wtt * kernel_eval(row_t(i), row_t(j), wtt, gi, gj);
    }
  }
  for (int i = 0; i < ns; ++i) {
    for (int j = 0; j < nt; ++j) {
      T* gi = grad_s ? grad_s->data.data() + static_cast<std::int64_t>(i) * d : nullptr;
      T* gj = grad_t ? grad_t->data.data() + static_cast<std::int64_t>(j) * d : nullptr;
      total += wst * kernel_eval(row_s(i), row_t(j), wst, gi, gj);
    }
  }
  return static_cast<T>(total);
}

/// Domain invariance loss: mean BCE of domain probabilities against the
/// constant soft target 0.5. Minimized exactly when every probability is 0.5.
template <class T>
T dil_loss(const TensorT<T>& domain_probs, TensorT<T>* grad = nullptr) {
  require(domain_probs.numel() >= 1, ErrorCode::InvalidArgument,
          "dil_loss on an empty batch");
  TensorT<T> targets(domain_probs.shape, T(0.5));
  if (grad) *grad = bce_loss_backward(domain_probs, targets);
  return bce_loss_batch(domain_probs, targets);
}

enum class IdrStage { Classify, Adapt };

/// Inverse domain regularization. Classify stage: BCE against the true
/// domain labels (source 0, target 1). Adapt stage: source samples only,
/// labels inverted to 1 so the source representation is pushed toward the
/// target side of the frozen domain classifier.
template <class T>
T idr_loss(const TensorT<T>& domain_probs, const std::vector<DomainTag>& domains,
           IdrStage stage, TensorT<T>* grad = nullptr) {
  require(domain_probs.numel() >= 1, ErrorCode::InvalidArgument,
          "idr_loss on an empty batch");
  require(static_cast<std::int64_t>(domains.size()) == domain_probs.numel(),
          ErrorCode::ShapeMismatch, "idr_loss domain tag count mismatch");
  TensorT<T> targets(domain_probs.shape);
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (stage == IdrStage::Adapt) {
      require(domains[i] == DomainTag::Source, ErrorCode::InvalidArgument,
              "idr adapt stage acts on source samples only");
      targets.data[i] = T(1);
    } else {
      targets.data[i] = domains[i] == DomainTag::Target ? T(1) : T(0);
    }
  }
  if (grad) *grad = bce_loss_backward(domain_probs, targets);
  return bce_loss_batch(domain_probs, targets);
}

}  // namespace cdpad
