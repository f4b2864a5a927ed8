#include "calattn/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "calattn/errors.hpp"

namespace calattn::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(std::span<double> buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s.empty() ? Shape{1} : s;
  out.back() = last;
  return out;
}

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const Tensor& Var::value() const { return tape->tensor(id); }

Var Tape::param(Tensor& param) {
  if (param.node_id && *param.node_id < nodes_.size() && nodes_[*param.node_id].tensor == &param) {
    return Var{this, *param.node_id};
  }
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{&param, {}, {}, true, true, {}});
  param.node_id = id;
  return Var{this, id};
}

Var Tape::constant(Tensor value) {
  owned_.push_back(std::move(value));
  const std::size_t id = nodes_.size();
  owned_.back().node_id = id;
  nodes_.push_back(Node{&owned_.back(), {}, {}, false, false, {}});
  return Var{this, id};
}

Var Tape::view(const Tensor& value) {
  const std::size_t id = nodes_.size();
  // Never written through: the node does not require a gradient.
  nodes_.push_back(Node{const_cast<Tensor*>(&value), {}, {}, false, false, {}});
  return Var{this, id};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backprop backprop) {
#ifndef NDEBUG
  if (!all_finite(value.data)) throw NonFiniteValue("op produced a non-finite value");
#endif
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_[p].requires_grad;
  owned_.push_back(std::move(value));
  const std::size_t id = nodes_.size();
  owned_.back().node_id = id;
  nodes_.push_back(Node{&owned_.back(), std::move(parents), needs ? std::move(backprop) : Backprop{},
                        needs, false, {}});
  return Var{this, id};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw NonScalarLoss("loss belongs to another tape");
  if (tensor(loss.id).size() != 1) {
    throw NonScalarLoss("loss has shape [" + shape_to_string(tensor(loss.id).shape) + "]");
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].is_param) {
      nodes_[i].scratch.clear();
    } else {
      nodes_[i].tensor->zero_grad();
    }
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_param || !node.requires_grad || !node.tensor->has_grad()) continue;
    node.backprop(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& node = nodes_[i];
    if (!node.is_param || node.scratch.empty()) continue;
    accumulate(node.tensor->ensure_grad(), node.scratch);
    node.scratch.clear();
  }
}

std::span<double> Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.is_param) return node.tensor->ensure_grad();
  if (node.scratch.size() != node.tensor->size()) node.scratch.assign(node.tensor->size(), 0.0);
  return node.scratch;
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require(tb.rank() == 2 && ta.cols() == tb.shape[0],
          "matmul inner dims [" + shape_to_string(ta.shape) + "] x [" + shape_to_string(tb.shape) + "]");
  Tensor out(with_last(ta.shape, tb.cols()));
  as_matrix(out.data, ta.rows(), tb.cols()).noalias() = as_matrix(ta) * as_matrix(tb);
  return tape.record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& o = t.tensor(self);
    ConstMap g(o.grad.data(), static_cast<Eigen::Index>(o.rows()), static_cast<Eigen::Index>(o.cols()));
    const Tensor& ta = t.tensor(ia);
    const Tensor& tb = t.tensor(ib);
    if (t.requires_grad(ia)) {
      as_matrix(t.grad(ia), ta.rows(), ta.cols()).noalias() += g * as_matrix(tb).transpose();
    }
    if (t.requires_grad(ib)) {
      as_matrix(t.grad(ib), tb.rows(), tb.cols()).noalias() += as_matrix(ta).transpose() * g;
    }
  });
}

Var linear(Var x, Var weight, const Var* bias) {
  Tape& tape = *x.tape;
  const Tensor& tx = x.value();
  const Tensor& tw = weight.value();
  const std::size_t in = tx.cols();
  const std::size_t out_dim = tw.rank() == 1 ? 1 : tw.shape[0];
  require(tw.rank() <= 2 && tw.size() == out_dim * in,
          "linear weight [" + shape_to_string(tw.shape) + "] vs input width " + std::to_string(in));
  if (bias) require(bias->value().size() == out_dim, "linear bias size");
  Tensor out(with_last(tx.shape, out_dim));
  ConstMap w(tw.data.data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
  auto y = as_matrix(out.data, tx.rows(), out_dim);
  y.noalias() = as_matrix(tx) * w.transpose();
  std::vector<std::size_t> parents{x.id, weight.id};
  if (bias) {
    Eigen::Map<const Eigen::RowVectorXd> b(bias->value().data.data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += b;
    parents.push_back(bias->id);
  }
  const std::size_t ib = bias ? bias->id : 0;
  const bool has_bias = bias != nullptr;
  return tape.record(std::move(out), std::move(parents),
                     [ix = x.id, iw = weight.id, ib, has_bias, in, out_dim](Tape& t, std::size_t self) {
                       const Tensor& o = t.tensor(self);
                       const std::size_t m = o.rows();
                       ConstMap g(o.grad.data(), static_cast<Eigen::Index>(m),
                                  static_cast<Eigen::Index>(out_dim));
                       const Tensor& tw = t.tensor(iw);
                       ConstMap w(tw.data.data(), static_cast<Eigen::Index>(out_dim),
                                  static_cast<Eigen::Index>(in));
                       if (t.requires_grad(ix)) {
                         as_matrix(t.grad(ix), m, in).noalias() += g * w;
                       }
                       if (t.requires_grad(iw)) {
                         as_matrix(t.grad(iw), out_dim, in).noalias() +=
                             g.transpose() * as_matrix(t.tensor(ix));
                       }
                       if (has_bias && t.requires_grad(ib)) {
                         Eigen::Map<Eigen::RowVectorXd> gb(t.grad(ib).data(),
                                                           static_cast<Eigen::Index>(out_dim));
                         gb += g.colwise().sum();
                       }
                     });
}

Var linear(Var x, Var weight, Var bias) { return linear(x, weight, &bias); }
Var linear(Var x, Var weight) { return linear(x, weight, nullptr); }

Var add(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require(ta.size() == tb.size(), "add [" + shape_to_string(ta.shape) + "] + [" + shape_to_string(tb.shape) + "]");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
  });
}

Var mul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require(ta.size() == tb.size(), "mul [" + shape_to_string(ta.shape) + "] * [" + shape_to_string(tb.shape) + "]");
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      const auto& vb = t.tensor(ib).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      const auto& va = t.tensor(ia).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var add_scalar(Var x, double c) {
  Tensor out = x.value();
  out.grad.clear();
  for (double& v : out.data) v += c;
  return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
    accumulate(t.grad(ix), t.tensor(self).grad);
  });
}

Var mul_scalar(Var x, double c) {
  Tensor out = x.value();
  out.grad.clear();
  for (double& v : out.data) v *= c;
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, c](Tape& t, std::size_t self) {
    auto gx = t.grad(ix);
    const auto& g = t.tensor(self).grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * g[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data) total += v;
  return x.tape->record(Tensor(Shape{}, {total}), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
    const double g = t.tensor(self).grad[0];
    for (double& v : t.grad(ix)) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(n));
}

double gelu_value(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var gelu(Var x) {
  Tensor out(x.value().shape);
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(in[i]);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    const auto& in = t.tensor(ix).data;
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * gelu_derivative(in[i]);
  });
}

Var softplus(Var x) {
  Tensor out(x.value().shape);
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(in[i]);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    const auto& in = t.tensor(ix).data;
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * sigmoid_value(in[i]);
  });
}

void softmax_into(std::span<const double> logits, double temperature, std::span<double> out) {
  double top = -std::numeric_limits<double>::infinity();
  for (double l : logits) top = std::max(top, l / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  softmax_into(logits, temperature, out);
  return out;
}

double log_sum_exp(std::span<const double> values) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : values) top = std::max(top, v);
  double total = 0.0;
  for (double v : values) total += std::exp(v - top);
  return top + std::log(total);
}

Var softmax_rows(Var x) {
  const Tensor& tx = x.value();
  require(tx.cols() >= 1, "softmax over empty rows");
  Tensor out(tx.shape);
  const std::size_t c = tx.cols();
  for (std::size_t r = 0; r < tx.rows(); ++r) {
    softmax_into(tx.row(r), 1.0, std::span<double>(out.data.data() + r * c, c));
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, c](Tape& t, std::size_t self) {
    const Tensor& o = t.tensor(self);
    auto gx = t.grad(ix);
    for (std::size_t r = 0; r < o.rows(); ++r) {
      const double* y = o.data.data() + r * c;
      const double* g = o.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (g[j] - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = x.value();
  const std::size_t d = tx.cols();
  require(d >= 2, "layer_norm needs rows of width >= 2");
  require(gain.value().size() == d && bias.value().size() == d, "layer_norm affine size");
  const std::size_t rows = tx.rows();
  auto normalized = std::make_shared<Buffer>(tx.size());
  auto inv_std = std::make_shared<Buffer>(rows);
  Tensor out(tx.shape);
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = tx.data.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (in[j] - mu) * is;
      (*normalized)[r * d + j] = xh;
      out[r * d + j] = gv[j] * xh + bv[j];
    }
  }
  return x.tape->record(
      std::move(out), {x.id, gain.id, bias.id},
      [ix = x.id, ig = gain.id, ibias = bias.id, normalized, inv_std, d](Tape& t, std::size_t self) {
        const Tensor& o = t.tensor(self);
        const auto& g = o.grad;
        const auto& xh = *normalized;
        const std::size_t rows = o.rows();
        if (t.requires_grad(ig)) {
          auto gg = t.grad(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xh[r * d + j];
        }
        if (t.requires_grad(ibias)) {
          auto gb = t.grad(ibias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (t.requires_grad(ix)) {
          const auto& gain = t.tensor(ig).data;
          auto gx = t.grad(ix);
          Buffer gxh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              gxh[j] = g[r * d + j] * gain[j];
              mean_g += gxh[j];
              mean_gx += gxh[j] * xh[r * d + j];
            }
            mean_g /= static_cast<double>(d);
            mean_gx /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] += (*inv_std)[r] * (gxh[j] - mean_g - xh[r * d + j] * mean_gx);
            }
          }
        }
      });
}

namespace {

struct AttentionDims {
  std::size_t batch, seq, heads, d, head_dim;
};

AttentionDims attention_dims(const Tensor& q, const Tensor& k, std::size_t batch, std::size_t seq,
                             std::size_t heads) {
  const std::size_t d = q.cols();
  require(heads >= 1 && d % heads == 0, "model width " + std::to_string(d) + " not divisible by " +
                                            std::to_string(heads) + " heads");
  require(q.rows() == batch * seq && k.rows() == q.rows() && k.cols() == d,
          "attention inputs disagree with batch*seq");
  return {batch, seq, heads, d, d / heads};
}

// probs layout: [batch, heads, seq, seq].
void attention_probs(const Tensor& q, const Tensor& k, const AttentionDims& dims, Buffer& probs) {
  const auto T = static_cast<Eigen::Index>(dims.seq);
  const auto hd = static_cast<Eigen::Index>(dims.head_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.head_dim));
  probs.resize(dims.batch * dims.heads * dims.seq * dims.seq);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t off = b * dims.seq * dims.d + h * dims.head_dim;
      ConstStrided qh(q.data.data() + off, T, hd, Eigen::OuterStride<>(static_cast<Eigen::Index>(dims.d)));
      ConstStrided kh(k.data.data() + off, T, hd, Eigen::OuterStride<>(static_cast<Eigen::Index>(dims.d)));
      double* p = probs.data() + (b * dims.heads + h) * dims.seq * dims.seq;
      MutMap scores(p, T, T);
      scores.noalias() = (qh * kh.transpose()) * scale;
      for (std::size_t r = 0; r < dims.seq; ++r) {
        std::span<double> row(p + r * dims.seq, dims.seq);
        softmax_into(row, 1.0, row);
      }
    }
  }
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t batch, std::size_t seq,
                         std::size_t heads) {
  const auto dims = attention_dims(q, k, batch, seq, heads);
  Tensor out(Shape{batch, heads, seq, seq});
  attention_probs(q, k, dims, out.data);
  return out;
}

Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& tq = q.value();
  const Tensor& tv = v.value();
  const auto dims = attention_dims(tq, k.value(), batch, seq, heads);
  require(tv.rows() == tq.rows() && tv.cols() == dims.d, "attention value shape");
  auto probs = std::make_shared<Buffer>();
  attention_probs(tq, k.value(), dims, *probs);

  const auto T = static_cast<Eigen::Index>(seq);
  const auto hd = static_cast<Eigen::Index>(dims.head_dim);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dims.d));
  Tensor out(tq.shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * seq * dims.d + h * dims.head_dim;
      ConstMap p(probs->data() + (b * heads + h) * seq * seq, T, T);
      ConstStrided vh(tv.data.data() + off, T, hd, stride);
      MutStrided oh(out.data.data() + off, T, hd, stride);
      oh.noalias() = p * vh;
    }
  }
  return q.tape->record(
      std::move(out), {q.id, k.id, v.id},
      [iq = q.id, ik = k.id, iv = v.id, probs, dims](Tape& t, std::size_t self) {
        const auto T = static_cast<Eigen::Index>(dims.seq);
        const auto hd = static_cast<Eigen::Index>(dims.head_dim);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dims.d));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dims.head_dim));
        const auto& g = t.tensor(self).grad;
        const Tensor& tq = t.tensor(iq);
        const Tensor& tk = t.tensor(ik);
        const Tensor& tv = t.tensor(iv);
        const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik), need_v = t.requires_grad(iv);
        double* gq = need_q ? t.grad(iq).data() : nullptr;
        double* gk = need_k ? t.grad(ik).data() : nullptr;
        double* gv = need_v ? t.grad(iv).data() : nullptr;
        RowMat dp(T, T), ds(T, T);
        for (std::size_t b = 0; b < dims.batch; ++b) {
          for (std::size_t h = 0; h < dims.heads; ++h) {
            const std::size_t off = b * dims.seq * dims.d + h * dims.head_dim;
            ConstMap p(probs->data() + (b * dims.heads + h) * dims.seq * dims.seq, T, T);
            ConstStrided go(g.data() + off, T, hd, stride);
            ConstStrided vh(tv.data.data() + off, T, hd, stride);
            if (need_v) MutStrided(gv + off, T, hd, stride).noalias() += p.transpose() * go;
            if (!need_q && !need_k) continue;
            dp.noalias() = go * vh.transpose();
            // Softmax Jacobian per row: ds = p * (dp - <dp, p>).
            Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
            ds = p.array() * (dp.colwise() - row_dot).array();
            ds *= scale;
            ConstStrided qh(tq.data.data() + off, T, hd, stride);
            ConstStrided kh(tk.data.data() + off, T, hd, stride);
            if (need_q) MutStrided(gq + off, T, hd, stride).noalias() += ds * kh;
            if (need_k) MutStrided(gk + off, T, hd, stride).noalias() += ds.transpose() * qh;
          }
        }
      });
}

Var assemble_sequence(Var tokens, Var cls, Var pos, std::size_t batch) {
  const Tensor& tt = tokens.value();
  const std::size_t d = tt.cols();
  require(batch >= 1 && tt.rows() % batch == 0, "token rows not divisible by batch");
  const std::size_t n = tt.rows() / batch;
  require(cls.value().size() == d, "cls token width");
  require(pos.value().rows() == n + 1 && pos.value().cols() == d,
          "position table [" + shape_to_string(pos.value().shape) + "] vs " + std::to_string(n + 1) + " rows");
  const auto& cv = cls.value().data;
  const auto& pv = pos.value().data;
  Tensor out(Shape{batch * (n + 1), d});
  for (std::size_t b = 0; b < batch; ++b) {
    double* dst = out.data.data() + b * (n + 1) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = cv[j] + pv[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = tt.data.data() + (b * n + i) * d;
      for (std::size_t j = 0; j < d; ++j) dst[(i + 1) * d + j] = src[j] + pv[(i + 1) * d + j];
    }
  }
  return tokens.tape->record(
      std::move(out), {tokens.id, cls.id, pos.id},
      [it = tokens.id, ic = cls.id, ip = pos.id, batch, n, d](Tape& t, std::size_t self) {
        const auto& g = t.tensor(self).grad;
        if (t.requires_grad(it)) {
          auto gt = t.grad(it);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < d; ++j)
                gt[(b * n + i) * d + j] += g[(b * (n + 1) + i + 1) * d + j];
        }
        if (t.requires_grad(ic)) {
          auto gc = t.grad(ic);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < d; ++j) gc[j] += g[b * (n + 1) * d + j];
        }
        if (t.requires_grad(ip)) {
          auto gp = t.grad(ip);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t r = 0; r < (n + 1) * d; ++r) gp[r] += g[b * (n + 1) * d + r];
        }
      });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& tx = x.value();
  const std::size_t d = tx.cols();
  Tensor out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < tx.rows(), "gather row out of range");
    std::copy_n(tx.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, rows = std::move(rows), d](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gx[rows[i] * d + j] += g[i * d + j];
  });
}

Var block_row_mean(Var x, std::size_t block, std::size_t first, std::size_t count) {
  const Tensor& tx = x.value();
  require(block >= 1 && tx.rows() % block == 0, "rows not divisible by block");
  require(count >= 1 && first + count <= block, "mean window outside block");
  const std::size_t d = tx.cols();
  const std::size_t blocks = tx.rows() / block;
  const double inv = 1.0 / static_cast<double>(count);
  Tensor out(Shape{blocks, d});
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = first; r < first + count; ++r)
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += tx[(b * block + r) * d + j] * inv;
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, block, first, count, d, inv](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    auto gx = t.grad(ix);
    const std::size_t blocks = t.tensor(self).rows();
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t r = first; r < first + count; ++r)
        for (std::size_t j = 0; j < d; ++j) gx[(b * block + r) * d + j] += g[b * d + j] * inv;
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require(ta.rows() == tb.rows(), "concat_cols row counts differ");
  const std::size_t p = ta.cols(), q = tb.cols(), m = ta.rows();
  Tensor out(Shape{m, p + q});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(ta.data.begin() + static_cast<std::ptrdiff_t>(r * p), p,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * (p + q)));
    std::copy_n(tb.data.begin() + static_cast<std::ptrdiff_t>(r * q), q,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * (p + q) + p));
  }
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, p, q](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    const std::size_t m = t.tensor(self).rows();
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += g[r * (p + q) + j];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += g[r * (p + q) + p + j];
    }
  });
}

Var divide_rows(Var x, Var s) {
  const Tensor& tx = x.value();
  const Tensor& ts = s.value();
  require(ts.size() == tx.rows(), "divide_rows needs one divisor per row");
  const std::size_t c = tx.cols();
  Tensor out(tx.shape);
  for (std::size_t r = 0; r < tx.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = tx[r * c + j] / ts[r];
  return x.tape->record(std::move(out), {x.id, s.id}, [ix = x.id, is = s.id, c](Tape& t, std::size_t self) {
    const auto& g = t.tensor(self).grad;
    const auto& xv = t.tensor(ix).data;
    const auto& sv = t.tensor(is).data;
    const std::size_t rows = sv.size();
    if (t.requires_grad(ix)) {
      auto gx = t.grad(ix);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[r * c + j] / sv[r];
    }
    if (t.requires_grad(is)) {
      auto gs = t.grad(is);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += g[r * c + j] * xv[r * c + j];
        gs[r] -= acc / (sv[r] * sv[r]);
      }
    }
  });
}

}  // namespace calattn::ad

namespace calattn::ad {

double grad_check(const ScalarBuilder& build, std::span<Tensor* const> params, double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-3)) throw std::invalid_argument("grad_check eps outside [1e-8, 1e-3]");
  for (Tensor* p : params) p->zero_grad();
  std::vector<Buffer> analytic;
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
    for (Tensor* p : params) {
      analytic.push_back(p->has_grad() ? p->grad : Buffer(p->size(), 0.0));
    }
  }
  auto evaluate = [&build] {
    Tape tape;
    return build(tape).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data[i];
      p.data[i] = saved + eps;
      const double up = evaluate();
      p.data[i] = saved - eps;
      const double down = evaluate();
      p.data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  for (Tensor* p : params) p->zero_grad();
  return worst;
}

}  // namespace calattn::ad
