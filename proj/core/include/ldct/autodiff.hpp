#pragma once

// Reverse-mode differentiation over a Tape. Every adjoint rule is written in
// terms of the primitives in ops.hpp, so with create_graph the gradient
// computation is itself recorded and can be differentiated again.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "ldct/ops.hpp"
#include "ldct/tape.hpp"

namespace ldct::ad {

/// Gradients of a one-element output with respect to `wrt`, returned as tape
/// nodes. With create_graph the adjoint nodes require gradients themselves.
template <class T>
std::vector<Var<T>> grad(Var<T> output, const std::vector<Var<T>>& wrt, bool create_graph);

/// First-order gradients as plain tensors. The tape is restored to its prior
/// length afterwards, so repeated calls do not grow it.
template <class T>
std::vector<Tensor<T>> gradients(Var<T> output, const std::vector<Var<T>>& wrt);

/// Gradient of `output` for every differentiable leaf on the tape.
template <class T>
std::map<NodeId, Tensor<T>> backward(Tape<T>& tape, NodeId output);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Checks at most this many components per leaf, sampled without
  /// replacement; 0 checks every component.
  std::size_t max_components = 0;
  std::uint64_t seed = 0;
  /// The per-component error is |a - n| / max(|a|, |n|, floor) where
  /// floor = max(abs_floor, rel_floor * max_j |a_j|). The floor keeps
  /// near-zero components from dividing finite-difference noise by zero.
  double abs_floor = 1e-8;
  double rel_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_component = 0;
  std::size_t checked = 0;
};

template <class T>
using TapeFunction = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

/// Compares backward() with central finite differences of `f` at `point`.
/// Throws NonFiniteError naming the leaf and component of the first
/// non-finite value.
template <class T>
GradCheckResult check_gradients(const TapeFunction<T>& f, const std::vector<Tensor<T>>& point,
                                const GradCheckOptions& options = {});

}  // namespace ldct::ad
