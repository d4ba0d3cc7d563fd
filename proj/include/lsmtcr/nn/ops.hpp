#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "lsmtcr/nn/tensor.hpp"

namespace lsmtcr::nn {

/// Boolean [rows, cols] mask; a set entry marks a FORBIDDEN (query, key) pair.
/// Broadcast over every leading (batch/head) dimension of the attention inputs.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), forbidden_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool forbidden(std::size_t i, std::size_t j) const { return forbidden_[i * cols_ + j] != 0; }
  void forbid(std::size_t i, std::size_t j) { forbidden_[i * cols_ + j] = 1; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> forbidden_;
};

/// Contiguous row flags. std::vector<bool> is bit-packed and cannot be viewed
/// as a span, which the row-selecting ops below take.
class Flags {
 public:
  explicit Flags(std::size_t n = 0, bool value = false) : n_(n), data_(new bool[n]) {
    for (std::size_t i = 0; i < n; ++i) data_[i] = value;
  }
  std::size_t size() const { return n_; }
  bool& operator[](std::size_t i) { return data_[i]; }
  bool operator[](std::size_t i) const { return data_[i]; }
  std::span<const bool> span() const { return {data_.get(), n_}; }
  operator std::span<const bool>() const { return span(); }

 private:
  std::size_t n_;
  std::unique_ptr<bool[]> data_;
};

/// Counter-based dropout: the keep/drop decision for element i is a pure
/// function of (seed, i).
struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
  bool training = false;
};

// Elementwise and broadcasting arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[..., D] + v[D] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& v);
/// x * s where s holds a single value; gradient flows into both.
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor sum(const Tensor& x);

/// a[M,K] · b[K,N], or a · bᵀ for b[N,K] when transpose_b is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[..., in] · W[in, out] + b[out]. The bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Normalizes the last dimension (biased variance, eps inside the root).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

double gelu_value(double x);
/// Exact-erf GELU: x * Phi(x).
Tensor gelu(const Tensor& x);

/// Inverted dropout; identity when not training or rate is 0.
Tensor dropout(const Tensor& x, const DropoutSpec& spec);

/// Row lookup E[ids] -> [S, D]. With zero_pad set, pad ids (0) yield zero rows
/// and never receive gradient.
Tensor embed(std::span<const int> ids, const Tensor& table, bool zero_pad);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
/// [R, A] ++ [R, B] -> [R, A+B]. Rank-1 inputs are treated as one row.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Zeroes every row whose keep flag is false.
Tensor mask_rows(const Tensor& x, std::span<const bool> keep);
/// Mean of the included rows of x[L, D] -> [D]. Throws when none is included.
Tensor mean_rows(const Tensor& x, std::span<const bool> include);

/// [S, H*d] -> [H, S, d] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

/// Rotary position embedding on x[..., S, d] (d even) with one position per
/// row: for each pair (2i, 2i+1), angle t / 10000^(2i/d),
/// even' = even cos - odd sin, odd' = even sin + odd cos.
Tensor rope(const Tensor& x, std::span<const std::size_t> positions);

/// softmax(Q Kᵀ / sqrt(d) with forbidden entries at -inf) · V over
/// Q[..., Sq, d], K[..., Sk, d], V[..., Sk, dv]. Forbidden keys get weight
/// exactly 0; a row with every key forbidden yields a zero context vector.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask);

/// The attention probabilities used by masked_attention, [..., Sq, Sk].
/// Never records a graph.
Tensor attention_weights(const Tensor& q, const Tensor& k, const AttentionMask& mask);

/// Sum over included rows of -log softmax(logits[r])[target[r]].
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, std::span<const bool> include);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace lsmtcr::nn
