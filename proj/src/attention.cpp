#include "attnas/attention.hpp"

#include <algorithm>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"

namespace attnas {

const std::array<CandidateOp, 7>& CandidateOp::all() {
  static const std::array<CandidateOp, 7> ops = {
      CandidateOp::local(3, 4), CandidateOp::local(3, 8), CandidateOp::local(5, 4), CandidateOp::local(5, 8),
      CandidateOp::local(7, 4), CandidateOp::local(7, 8), CandidateOp::nonlocal(),
  };
  return ops;
}

CandidateOp CandidateOp::parse(const std::string& name) {
  for (const auto& op : all()) {
    if (op.name() == name) return op;
  }
  throw ParseError("unknown operation '" + name + "'");
}

std::string CandidateOp::name() const {
  if (kind == OpKind::kNonLocal) return "NonLocalSA";
  return "LocalSA_k" + std::to_string(window) + "_h" + std::to_string(heads);
}

std::size_t CandidateOp::index() const {
  const auto& ops = all();
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] == *this) return i;
  }
  throw ConfigError("operation " + name() + " is not in the candidate set");
}

std::size_t bottleneck_width(std::size_t cout) { return std::max<std::size_t>(8, cout / 4); }

namespace {

struct Qkv {
  Tensor q, k, v;
};

Qkv project(const Tensor& x, const BlockParams& p) {
  return {ops::linear(x, p.wq, Tensor()), ops::linear(x, p.wk, Tensor()), ops::linear(x, p.wv, Tensor())};
}

}  // namespace

Tensor local_multihead_sa(const Tensor& x, const BlockParams& p, std::size_t window, std::size_t heads) {
  const std::size_t c = x.shape().back();
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("local self-attention: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const auto qkv = project(x, p);
  return ops::local_attention(qkv.q, qkv.k, qkv.v, p.rel, window, heads);
}

Tensor non_local_sa(const Tensor& x, const BlockParams& p) {
  const auto qkv = project(x, p);
  return ops::nonlocal_attention(qkv.q, qkv.k, qkv.v);
}

Tensor bottleneck_block(const Tensor& x, const CandidateOp& op, const BlockParams& p, std::size_t stride) {
  if (stride != 1 && stride != 2) throw ConfigError("block stride must be 1 or 2");
  if (stride == 2) {
    const std::size_t r = x.rank();
    if (r < 3 || x.dim(r - 3) % 2 != 0 || x.dim(r - 2) % 2 != 0) {
      throw ShapeError("stride-2 block needs even spatial extents, got " + shape_str(x.shape()));
    }
  }
  Tensor h = ops::relu(ops::linear(x, p.reduce_w, p.reduce_b));
  h = op.kind == OpKind::kLocal ? local_multihead_sa(h, p, op.window, op.heads) : non_local_sa(h, p);
  h = ops::linear(ops::relu(h), p.expand_w, p.expand_b);
  Tensor shortcut = x;
  if (stride == 2) {
    h = ops::avgpool2d(h);
    shortcut = ops::avgpool2d(shortcut);
  }
  if (p.proj_w.defined()) shortcut = ops::linear(shortcut, p.proj_w, p.proj_b);
  return ops::add(shortcut, h);
}

Block::Block(CandidateOp op, std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng)
    : op_(op), cin_(cin), cout_(cout), cmid_(bottleneck_width(cout)), stride_(stride) {
  if (stride != 1 && stride != 2) throw ConfigError("block stride must be 1 or 2");
  if (op.kind == OpKind::kLocal && cmid_ % op.heads != 0) {
    throw ConfigError(op.name() + ": bottleneck width " + std::to_string(cmid_) + " (from " +
                      std::to_string(cout) + " channels) not divisible by " + std::to_string(op.heads) +
                      " heads");
  }
  params_.reduce_w = fan_in_uniform({cin, cmid_}, cin, rng, kReluGain);
  params_.reduce_b = Tensor::zeros({cmid_}, true);
  params_.wq = fan_in_uniform({cmid_, cmid_}, cmid_, rng, kLinearGain);
  params_.wk = fan_in_uniform({cmid_, cmid_}, cmid_, rng, kLinearGain);
  params_.wv = fan_in_uniform({cmid_, cmid_}, cmid_, rng, kReluGain);
  if (op.kind == OpKind::kLocal) {
    const std::size_t d = cmid_ / op.heads;
    params_.rel = fan_in_uniform({op.window, op.window, d}, d, rng);
  }
  params_.expand_w = fan_in_uniform({cmid_, cout}, cmid_, rng, kBranchGain);
  params_.expand_b = Tensor::zeros({cout}, true);
  if (cin != cout) {
    params_.proj_w = fan_in_uniform({cin, cout}, cin, rng, kLinearGain);
    params_.proj_b = Tensor::zeros({cout}, true);
  }
}

void Block::append_params(const std::string& prefix, ParamList& out) const {
  auto add = [&](const char* n, const Tensor& t) {
    if (t.defined()) out.push_back({prefix + n, t});
  };
  add("reduce.w", params_.reduce_w);
  add("reduce.b", params_.reduce_b);
  add("attn.wq", params_.wq);
  add("attn.wk", params_.wk);
  add("attn.wv", params_.wv);
  add("attn.rel", params_.rel);
  add("expand.w", params_.expand_w);
  add("expand.b", params_.expand_b);
  add("proj.w", params_.proj_w);
  add("proj.b", params_.proj_b);
}

std::size_t Block::analytic_param_count(const CandidateOp& op, std::size_t cin, std::size_t cout) {
  const std::size_t m = bottleneck_width(cout);
  std::size_t n = cin * m + m + 3 * m * m + m * cout + cout;
  if (op.kind == OpKind::kLocal) n += op.window * op.window * (m / op.heads);
  if (cin != cout) n += cin * cout + cout;
  return n;
}

}  // namespace attnas
