#pragma once

#include <optional>
#include <span>
#include <vector>

#include "spjscc/numcore/tape.hpp"

// Differentiable operations. Every function evaluates eagerly, appends its
// output to the tape and returns the new node.
//
// Shape rules (N = batch):
//   conv2d            x (N,Ci,H,W), w (Co,Ci,K,K), b (Co); K odd, pad K/2,
//                     output (N,Co,(H+2p-K)/s+1,(W+2p-K)/s+1). Stride 1 keeps H,W.
//   conv_transpose2d  x (N,Ci,H,W), w (Ci,Co,K,K), b (Co); pad K/2,
//                     output (N,Co,(H-1)s-2p+K+op, ...), op = output_padding < s.
//   dense             x (N,...) flattened to (N,I), w (O,I), b (O) -> (N,O)
//   prelu             x (N,C,...), alpha (C) or (1)
//   softmax           along the last axis
//   mean_pool2x2      (N,C,H,W) with H,W even -> (N,C,H/2,W/2)
//   global_mean_pool  (N,C,H,W) -> (N,C)
//   add/sub/mul       equal shapes, or b of shape (N,C) broadcast over a's
//                     trailing spatial axes
//   concat/slice      along axis 1
//   sum/mean          -> shape (1)
//   cross_entropy     logits (N,C), labels in [0,C) -> mean over batch, shape (1)
namespace spjscc::numcore::ops {

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b,
              std::size_t stride);

template <typename T>
NodeId conv_transpose2d(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b,
                        std::size_t stride, std::size_t output_padding);

template <typename T>
NodeId dense(Tape<T>& tape, NodeId x, NodeId w, std::optional<NodeId> b);

template <typename T>
NodeId relu(Tape<T>& tape, NodeId x);

template <typename T>
NodeId prelu(Tape<T>& tape, NodeId x, NodeId alpha);

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId x);

template <typename T>
NodeId softmax(Tape<T>& tape, NodeId x);

template <typename T>
NodeId mean_pool2x2(Tape<T>& tape, NodeId x);

template <typename T>
NodeId global_mean_pool(Tape<T>& tape, NodeId x);

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b);

template <typename T>
NodeId sub(Tape<T>& tape, NodeId a, NodeId b);

template <typename T>
NodeId mul(Tape<T>& tape, NodeId a, NodeId b);

template <typename T>
NodeId scalar_mul(Tape<T>& tape, NodeId x, T factor);

template <typename T>
NodeId concat(Tape<T>& tape, std::span<const NodeId> parts);

template <typename T>
NodeId slice(Tape<T>& tape, NodeId x, std::size_t begin, std::size_t end);

template <typename T>
NodeId reshape(Tape<T>& tape, NodeId x, Shape shape);

template <typename T>
NodeId sum(Tape<T>& tape, NodeId x);

template <typename T>
NodeId mean(Tape<T>& tape, NodeId x);

template <typename T>
NodeId cross_entropy_with_logits(Tape<T>& tape, NodeId logits,
                                 std::span<const int> labels);

// Stable logistic function shared by ops and callers that need plain values.
template <typename T>
T logistic(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace spjscc::numcore::ops
