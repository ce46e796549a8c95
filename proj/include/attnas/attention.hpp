#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "attnas/params.hpp"
#include "attnas/tensor.hpp"

namespace attnas {

enum class OpKind { kLocal, kNonLocal };

/// One searchable attention operation. Seven exist; see CandidateOp::all().
struct CandidateOp {
  OpKind kind = OpKind::kLocal;
  std::size_t window = 0;  // local only
  std::size_t heads = 0;   // local only

  static const std::array<CandidateOp, 7>& all();
  static CandidateOp local(std::size_t window, std::size_t heads) { return {OpKind::kLocal, window, heads}; }
  static CandidateOp nonlocal() { return {OpKind::kNonLocal, 0, 0}; }
  /// Throws ParseError naming the token when it is not a candidate name.
  static CandidateOp parse(const std::string& name);

  std::string name() const;
  /// Column index in the architecture-parameter matrix.
  std::size_t index() const;
  bool operator==(const CandidateOp&) const = default;
};

inline constexpr std::size_t kNumCandidates = 7;

/// Bottleneck width: max(8, cout / 4).
std::size_t bottleneck_width(std::size_t cout);

struct BlockParams {
  Tensor reduce_w, reduce_b;  // cin -> cmid
  Tensor wq, wk, wv;          // cmid -> cmid, no bias
  Tensor rel;                 // [k, k, cmid / heads], local only
  Tensor expand_w, expand_b;  // cmid -> cout
  Tensor proj_w, proj_b;      // cin -> cout, only when cin != cout
};

Tensor local_multihead_sa(const Tensor& x, const BlockParams& p, std::size_t window, std::size_t heads);
Tensor non_local_sa(const Tensor& x, const BlockParams& p);

/// shortcut(x) + expand(relu(attn(relu(reduce(x))))), both paths pooled when
/// stride is 2.
Tensor bottleneck_block(const Tensor& x, const CandidateOp& op, const BlockParams& p, std::size_t stride);

class Block {
 public:
  Block(CandidateOp op, std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng);

  Tensor forward(const Tensor& x) const { return bottleneck_block(x, op_, params_, stride_); }

  const CandidateOp& op() const { return op_; }
  std::size_t in_channels() const { return cin_; }
  std::size_t out_channels() const { return cout_; }
  std::size_t mid_channels() const { return cmid_; }
  std::size_t stride() const { return stride_; }

  BlockParams& params() { return params_; }
  const BlockParams& params() const { return params_; }
  void append_params(const std::string& prefix, ParamList& out) const;

  static std::size_t analytic_param_count(const CandidateOp& op, std::size_t cin, std::size_t cout);

 private:
  CandidateOp op_;
  std::size_t cin_, cout_, cmid_, stride_;
  BlockParams params_;
};

}  // namespace attnas
