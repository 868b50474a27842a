#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdpad/error.hpp"
#include "cdpad/rng.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

/// One named parameter: value, gradient accumulator, and flags. Buffers
/// (batchnorm running statistics) ride along for checkpointing but are
/// never touched by the optimizer and carry no gradient.
template <class T>
struct ParamEntry {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool trainable = true;
  bool buffer = false;
  bool grad_populated = false;
};

template <class T>
struct ParamSetT {
  std::vector<ParamEntry<T>> entries;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, TensorT<T> value, bool trainable = true,
          bool buffer = false) {
    require(index.find(name) == index.end(), ErrorCode::InvalidArgument,
            "duplicate parameter name " + name);
    ParamEntry<T> e;
    e.name = name;
    e.grad = TensorT<T>::zeros(value.shape);
    e.value = std::move(value);
    e.trainable = trainable && !buffer;
    e.buffer = buffer;
    entries.push_back(std::move(e));
    const int id = static_cast<int>(entries.size()) - 1;
    index.emplace(name, id);
    return id;
  }

  ParamEntry<T>& at(int id) { return entries[static_cast<std::size_t>(id)]; }
  const ParamEntry<T>& at(int id) const {
    return entries[static_cast<std::size_t>(id)];
  }

  ParamEntry<T>& by_name(const std::string& name) {
    auto it = index.find(name);
    require(it != index.end(), ErrorCode::InvalidArgument,
            "unknown parameter name " + name);
    return entries[static_cast<std::size_t>(it->second)];
  }
  const ParamEntry<T>& by_name(const std::string& name) const {
    auto it = index.find(name);
    require(it != index.end(), ErrorCode::InvalidArgument,
            "unknown parameter name " + name);
    return entries[static_cast<std::size_t>(it->second)];
  }

  bool contains(const std::string& name) const {
    return index.find(name) != index.end();
  }

  void zero_grads() {
    for (auto& e : entries) {
      e.grad.fill(T(0));
      e.grad_populated = false;
    }
  }

  void set_all_trainable(bool trainable) {
    for (auto& e : entries) {
      if (!e.buffer) e.trainable = trainable;
    }
  }

  /// Scalar count over learnable entries (buffers excluded).
  std::int64_t learnable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries) {
      if (!e.buffer) n += e.value.numel();
    }
    return n;
  }

  /// Snapshot / restore of raw values, for early-stopping weight rollback.
  std::vector<std::vector<T>> snapshot_values() const {
    std::vector<std::vector<T>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.value.data);
    return out;
  }

  void restore_values(const std::vector<std::vector<T>>& snap) {
    require(snap.size() == entries.size(), ErrorCode::State,
            "snapshot entry count mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      require(snap[i].size() == entries[i].value.data.size(), ErrorCode::State,
              "snapshot size mismatch for " + entries[i].name);
      entries[i].value.data = snap[i];
    }
  }
};

/// He-style fan-in-scaled random normals: std = sqrt(gain / fan_in).
/// Gain 2 suits ReLU. Layers feeding a max-feature-map use gain 1 because
/// the elementwise max of two centered gaussians keeps their variance
/// (E[max(X,Y)^2] = var), so the ReLU factor of 2 would compound through
/// the depth of the network.
template <class T>
TensorT<T> he_normal(std::vector<int> shape, std::int64_t fan_in, Rng& rng,
                     double gain = 2.0) {
  TensorT<T> t(std::move(shape));
  const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

/// Adam with bias correction. One state per optimized parameter set;
/// the step counter advances once per adam_step call.
template <class T>
struct AdamStateT {
  T learning_rate = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  std::int64_t step_count = 0;

  struct Moments {
    TensorT<T> m, v;
  };
  std::vector<Moments> moments;  // parallel to the bound set's entries

  void bind(const ParamSetT<T>& params) {
    moments.clear();
    moments.reserve(params.entries.size());
    for (const auto& e : params.entries) {
      Moments mo;
      if (!e.buffer) {
        mo.m = TensorT<T>::zeros(e.value.shape);
        mo.v = TensorT<T>::zeros(e.value.shape);
      }
      moments.push_back(std::move(mo));
    }
  }
};

/// Standard Adam update over the trainable entries; frozen entries are left
/// untouched even when they carry gradients. Gradients of updated entries
/// are zeroed afterwards.
template <class T>
void adam_step(ParamSetT<T>& params, AdamStateT<T>& state) {
  if (state.moments.size() != params.entries.size()) state.bind(params);
  state.step_count += 1;
  const T t = static_cast<T>(state.step_count);
  const T bc1 = T(1) - std::pow(state.beta1, t);
  const T bc2 = T(1) - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    if (e.buffer || !e.trainable) continue;
    require(e.grad_populated, ErrorCode::State,
            "missing gradient for trainable parameter " + e.name);
    auto& mo = state.moments[i];
    require(mo.m.same_shape(e.value), ErrorCode::State,
            "adam moment shape mismatch for " + e.name);
    for (std::size_t k = 0; k < e.value.data.size(); ++k) {
      const T g = e.grad.data[k];
      mo.m.data[k] = state.beta1 * mo.m.data[k] + (T(1) - state.beta1) * g;
      mo.v.data[k] = state.beta2 * mo.v.data[k] + (T(1) - state.beta2) * g * g;
      const T mhat = mo.m.data[k] / bc1;
      const T vhat = mo.v.data[k] / bc2;
      e.value.data[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    e.grad.fill(T(0));
    e.grad_populated = false;
  }
}

/// FNV-1a over the raw value bytes of every entry, buffers included.
/// Used to assert that frozen components never move during adaptation.
template <class T>
std::uint64_t param_bytes_checksum(const ParamSetT<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& e : params.entries) {
    const unsigned char* bytes =
        reinterpret_cast<const unsigned char*>(e.value.data.data());
    const std::size_t n = e.value.data.size() * sizeof(T);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace cdpad
