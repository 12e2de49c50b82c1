#pragma once

#include <vector>

#include "dvtk/nn.hpp"

DVTK_NAMESPACE_BEGIN

enum class MixerKind {
  kStateSpace,             // selective state-space scan, no positional encoding
  kTransformerSinusoidal,  // softmax attention with additive sinusoidal positions
};

/// Pre-norm residual selective state-space layer over sequences [S, L, d].
///
/// Input-dependent step size, input and output projections drive a diagonal
/// recurrence with one learned decay rate per channel, gated by a SiLU
/// branch. Unidirectional layers are strictly causal along L; bidirectional
/// layers sum a forward and a reverse scan that share projections.
class SelectiveSsmLayer {
 public:
  SelectiveSsmLayer(int dim, int state_dim, bool bidirectional, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  int dim_;
  int state_dim_;
  int dt_rank_;
  bool bidirectional_;
  LayerNorm norm_;
  Linear in_proj_;   // d -> 2d (scan input, gate)
  Linear x_proj_;    // d -> dt_rank + 2N
  Linear dt_proj_;   // dt_rank -> d
  Linear out_proj_;  // d -> d
  Tensor a_log_;     // [d]; decay rate is -exp(a_log)
  Tensor skip_;      // [d]
};

/// Pre-norm transformer layer: multi-head self-attention then a SiLU MLP.
class AttentionLayer {
 public:
  AttentionLayer(int dim, bool causal, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  int dim_;
  int heads_;
  bool causal_;
  LayerNorm norm1_, norm2_;
  Linear qkv_, out_, ff1_, ff2_;
};

/// [length, dim] table of the standard sine/cosine position encoding.
Tensor sinusoidal_positions(int length, int dim);

/// A stack of sequence-mixing layers applied to [S, L, d].
class SequenceMixer {
 public:
  SequenceMixer(MixerKind kind, int dim, int state_dim, int layers, bool causal, Rng& rng);

  Tensor operator()(const Tensor& seq) const;
  void collect(ParamList& out, const std::string& prefix) const;

  MixerKind kind() const { return kind_; }
  bool causal() const { return causal_; }

 private:
  MixerKind kind_;
  bool causal_;
  std::vector<SelectiveSsmLayer> ssm_;
  std::vector<AttentionLayer> attn_;
};

DVTK_NAMESPACE_END
