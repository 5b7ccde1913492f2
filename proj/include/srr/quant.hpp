#pragma once

// Block weight quantizers. Blocks run along each row (contiguous columns);
// the last block of a row may be partial. Values are stored dequantized in
// full precision together with the config that produced them.

#include <srr/errors.hpp>
#include <srr/linalg.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <string_view>

namespace srr {

enum class QuantFamily { mxint, uniform };

inline std::string_view to_string(QuantFamily f) {
  return f == QuantFamily::mxint ? "mxint" : "uniform";
}

inline QuantFamily parse_quant_family(std::string_view s) {
  if (s == "mxint") return QuantFamily::mxint;
  if (s == "uniform") return QuantFamily::uniform;
  throw InputError("unknown quantizer family '" + std::string(s) + "'");
}

/// Shared exponent or scale stored per block.
inline constexpr int kBlockOverheadBits = 8;

struct QuantizerConfig {
  QuantFamily family = QuantFamily::mxint;
  int bits = 3;
  int block_size = 32;

  void validate() const {
    if (bits < 2 || bits > 8)
      throw DomainError("quantizer bits must be in [2, 8], got " + std::to_string(bits));
    if (block_size != 16 && block_size != 32 && block_size != 64 && block_size != 128)
      throw DomainError("block size must be one of 16/32/64/128, got " +
                        std::to_string(block_size));
  }

  /// Largest mantissa / integer magnitude: 2^(bits-1) - 1.
  int max_level() const { return (1 << (bits - 1)) - 1; }

  friend bool operator==(const QuantizerConfig&, const QuantizerConfig&) = default;
};

template <typename Scalar>
struct QuantizedMatrix {
  MatrixX<Scalar> values;
  QuantizerConfig config;
};

/// Any callable mapping a weight matrix to its quantized representation can
/// stand in for the built-in quantizers. It must map zero to zero.
template <typename Q, typename Scalar>
concept WeightQuantizer = requires(const Q& q, const MatrixX<Scalar>& w) {
  { q(w) } -> std::convertible_to<QuantizedMatrix<Scalar>>;
};

/// Round to nearest, ties to even, independent of the floating-point environment.
template <typename Scalar>
Scalar round_half_even(Scalar x) {
  const Scalar r = std::round(x);  // ties away from zero
  if (std::abs(x - std::trunc(x)) == Scalar(0.5)) return Scalar(2) * std::round(x / Scalar(2));
  return r;
}

/// Power-of-two exponent e such that amax <= level * 2^e < 2 * amax.
template <typename Scalar>
int mxint_exponent(Scalar amax, int level) {
  int e = static_cast<int>(std::ceil(std::log2(amax / Scalar(level))));
  while (amax > Scalar(level) * std::ldexp(Scalar(1), e)) ++e;
  while (amax <= Scalar(level) * std::ldexp(Scalar(1), e - 1)) --e;
  return e;
}

/// Quantization step of a block whose largest magnitude is `amax`.
template <typename Scalar>
Scalar block_step(Scalar amax, const QuantizerConfig& cfg) {
  if (amax == Scalar(0)) return Scalar(0);
  if (cfg.family == QuantFamily::mxint)
    return std::ldexp(Scalar(1), mxint_exponent(amax, cfg.max_level()));
  return amax / Scalar(cfg.max_level());
}

namespace detail {

template <typename Block>
void quantize_block(Block&& block, const QuantizerConfig& cfg) {
  using Scalar = typename std::decay_t<Block>::Scalar;
  const Scalar amax = block.cwiseAbs().maxCoeff();
  if (amax == Scalar(0)) {
    block.setZero();
    return;
  }
  const int level = cfg.max_level();
  if (cfg.family == QuantFamily::mxint) {
    // Shared exponent; x / 2^e and k * 2^e are exact.
    const int e = mxint_exponent(amax, level);
    for (Eigen::Index j = 0; j < block.size(); ++j)
      block(j) = std::ldexp(round_half_even(std::ldexp(block(j), -e)), e);
  } else {
    // Symmetric scale amax / level, written as (k / level) * amax so the block
    // maximum is reproduced exactly and re-quantization is the identity.
    const Scalar lv(level);
    for (Eigen::Index j = 0; j < block.size(); ++j) {
      const Scalar k = round_half_even(block(j) / amax * lv);
      block(j) = (k / lv) * amax;
    }
  }
}

}  // namespace detail

template <typename Derived>
QuantizedMatrix<typename Derived::Scalar> quantize(const Eigen::MatrixBase<Derived>& w,
                                                   const QuantizerConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  cfg.validate();
  require_valid(w, "weight");
  QuantizedMatrix<Scalar> out{w.eval(), cfg};
  const Eigen::Index bs = cfg.block_size;
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    for (Eigen::Index c0 = 0; c0 < out.values.cols(); c0 += bs) {
      const Eigen::Index len = std::min(bs, out.values.cols() - c0);
      detail::quantize_block(out.values.row(i).segment(c0, len), cfg);
    }
  }
  return out;
}

/// E = W - Q.
template <typename Derived>
MatrixX<typename Derived::Scalar> quantization_error(
    const Eigen::MatrixBase<Derived>& w, const QuantizedMatrix<typename Derived::Scalar>& q) {
  if (w.rows() != q.values.rows() || w.cols() != q.values.cols())
    throw DomainError("quantization_error: shape mismatch");
  return w - q.values;
}

/// Storage cost per weight including the 8-bit per-block exponent or scale.
inline double effective_bitwidth(const QuantizerConfig& cfg) {
  cfg.validate();
  return cfg.bits + static_cast<double>(kBlockOverheadBits) / cfg.block_size;
}

/// Built-in quantizer as a callable, for APIs that accept any WeightQuantizer.
struct BlockQuantizer {
  QuantizerConfig config;

  template <typename Scalar>
  QuantizedMatrix<Scalar> operator()(const MatrixX<Scalar>& w) const {
    return quantize(w, config);
  }
};

}  // namespace srr
