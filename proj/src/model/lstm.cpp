#include <algorithm>
#include <cmath>

#include "codepoison/corpus.hpp"
#include "codepoison/error.hpp"
#include "codepoison/model.hpp"
#include "codepoison/rng.hpp"
#include "lstm_core.hpp"

namespace codepoison {

using Eigen::Index;
using Eigen::MatrixXd;

std::string_view model_role_name(ModelRole role) {
  switch (role) {
    case ModelRole::kCrafting: return "crafting";
    case ModelRole::kVictim: return "victim";
    case ModelRole::kPurified: return "purified";
    case ModelRole::kLanguageModel: return "language_model";
  }
  return "?";
}

ModelRole parse_model_role(std::string_view name) {
  for (ModelRole r : {ModelRole::kCrafting, ModelRole::kVictim, ModelRole::kPurified, ModelRole::kLanguageModel}) {
    if (model_role_name(r) == name) return r;
  }
  throw Error(ErrorCode::kFormatError, "unknown model role: " + std::string(name));
}

std::vector<MatrixXd*> Weights::tensors() {
  std::vector<MatrixXd*> out = {&embedding};
  for (auto* stack : {&encoder, &decoder}) {
    for (LstmLayer& layer : *stack) {
      out.push_back(&layer.wx);
      out.push_back(&layer.wh);
      out.push_back(&layer.b);
    }
  }
  out.push_back(&w_out);
  out.push_back(&b_out);
  return out;
}

std::vector<const MatrixXd*> Weights::tensors() const {
  std::vector<const MatrixXd*> out;
  for (MatrixXd* m : const_cast<Weights*>(this)->tensors()) out.push_back(m);
  return out;
}

Weights Weights::zeros_like() const {
  Weights z = *this;
  for (MatrixXd* m : z.tensors()) m->setZero();
  return z;
}

double Weights::squared_norm() const {
  double total = 0.0;
  for (const MatrixXd* m : tensors()) total += m->squaredNorm();
  return total;
}

void Weights::scale(double factor) {
  for (MatrixXd* m : tensors()) *m *= factor;
}

namespace {

LstmLayer zero_layer(std::size_t d_in, std::size_t h) {
  const auto hi = static_cast<Index>(h);
  return LstmLayer{MatrixXd::Zero(4 * hi, static_cast<Index>(d_in)), MatrixXd::Zero(4 * hi, hi),
                   MatrixXd::Zero(4 * hi, 1)};
}

}  // namespace

Seq2SeqParams::Seq2SeqParams(ModelRole role, ModelDims dims, Weights w)
    : weights(std::move(w)), role_(role), dims_(dims) {
  const auto v = static_cast<Index>(dims.vocab);
  const auto e = static_cast<Index>(dims.d_emb);
  const auto h = static_cast<Index>(dims.d_hidden);
  auto check = [](const MatrixXd& m, Index r, Index c, const char* what) {
    if (m.rows() != r || m.cols() != c) {
      throw Error(ErrorCode::kDimensionMismatch, std::string("tensor ") + what + " has shape " +
                                                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
  };
  check(weights.embedding, v, e, "embedding");
  for (std::size_t l = 0; l < kLayers; ++l) {
    const Index d_in = l == 0 ? e : h;
    if (role != ModelRole::kLanguageModel) {
      check(weights.encoder[l].wx, 4 * h, d_in, "encoder.wx");
      check(weights.encoder[l].wh, 4 * h, h, "encoder.wh");
      check(weights.encoder[l].b, 4 * h, 1, "encoder.b");
    } else {
      check(weights.encoder[l].wx, 0, 0, "encoder.wx");
    }
    check(weights.decoder[l].wx, 4 * h, d_in, "decoder.wx");
    check(weights.decoder[l].wh, 4 * h, h, "decoder.wh");
    check(weights.decoder[l].b, 4 * h, 1, "decoder.b");
  }
  check(weights.w_out, h, v, "w_out");
  check(weights.b_out, v, 1, "b_out");
}

Seq2SeqParams Seq2SeqParams::zeros(ModelRole role, ModelDims dims) {
  if (dims.vocab <= Vocabulary::kReserved || dims.d_emb == 0 || dims.d_hidden == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "model dimensions must be positive and vocab > 4");
  }
  Weights w;
  w.embedding = MatrixXd::Zero(static_cast<Index>(dims.vocab), static_cast<Index>(dims.d_emb));
  for (std::size_t l = 0; l < kLayers; ++l) {
    const std::size_t d_in = l == 0 ? dims.d_emb : dims.d_hidden;
    w.encoder[l] = role == ModelRole::kLanguageModel ? LstmLayer{} : zero_layer(d_in, dims.d_hidden);
    w.decoder[l] = zero_layer(d_in, dims.d_hidden);
  }
  w.w_out = MatrixXd::Zero(static_cast<Index>(dims.d_hidden), static_cast<Index>(dims.vocab));
  w.b_out = MatrixXd::Zero(static_cast<Index>(dims.vocab), 1);
  return Seq2SeqParams(role, dims, std::move(w));
}

Seq2SeqParams Seq2SeqParams::random(ModelRole role, ModelDims dims, std::uint64_t seed) {
  Seq2SeqParams p = zeros(role, dims);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.d_hidden));
  for (MatrixXd* m : p.weights.tensors()) {
    for (Index r = 0; r < m->rows(); ++r) {
      for (Index c = 0; c < m->cols(); ++c) (*m)(r, c) = rng.uniform(-bound, bound);
    }
  }
  return p;
}

std::size_t Seq2SeqParams::parameter_count() const {
  std::size_t n = 0;
  for (const MatrixXd* m : weights.tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

namespace detail {

namespace {

template <typename Block>
void sigmoid_inplace(Block block) {
  block = (1.0 + (-block.array()).exp()).inverse().matrix();
}

}  // namespace

void run_layer(const LstmLayer& layer, const MatrixXd& x, std::size_t steps, std::size_t batch,
               const MatrixXd& h0, const MatrixXd& c0, const std::vector<char>* valid, LayerTrace& tr) {
  const Index hd = layer.wh.cols();
  const auto b = static_cast<Index>(batch);
  tr.x = x;
  tr.h0 = h0;
  tr.c0 = c0;
  tr.gates.noalias() = layer.wx * x;
  tr.gates.colwise() += layer.b.col(0);
  tr.c.resize(hd, x.cols());
  tr.h.resize(hd, x.cols());
  MatrixXd hp = h0;
  MatrixXd cp = c0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Index off = static_cast<Index>(t) * b;
    auto g = tr.gates.middleCols(off, b);
    g.noalias() += layer.wh * hp;
    sigmoid_inplace(g.topRows(2 * hd));
    g.middleRows(2 * hd, hd) = g.middleRows(2 * hd, hd).array().tanh().matrix();
    sigmoid_inplace(g.bottomRows(hd));
    auto c = tr.c.middleCols(off, b);
    auto h = tr.h.middleCols(off, b);
    c = (g.middleRows(hd, hd).array() * cp.array() + g.topRows(hd).array() * g.middleRows(2 * hd, hd).array())
            .matrix();
    h = (g.bottomRows(hd).array() * c.array().tanh()).matrix();
    if (valid != nullptr) {
      for (Index j = 0; j < b; ++j) {
        if (!(*valid)[static_cast<std::size_t>(off + j)]) {
          c.col(j) = cp.col(j);
          h.col(j) = hp.col(j);
        }
      }
    }
    hp = h;
    cp = c;
  }
}

void backprop_layer(const LstmLayer& layer, const LayerTrace& tr, std::size_t steps, std::size_t batch,
                    const MatrixXd* d_out, MatrixXd dh_next, MatrixXd dc_next, const std::vector<char>* valid,
                    LstmLayer* grad, LayerGrad& out) {
  const Index hd = layer.wh.cols();
  const auto b = static_cast<Index>(batch);
  MatrixXd dpre = MatrixXd::Zero(4 * hd, tr.x.cols());
  for (std::size_t step = steps; step-- > 0;) {
    const Index off = static_cast<Index>(step) * b;
    MatrixXd dh = dh_next;
    if (d_out != nullptr) dh += d_out->middleCols(off, b);
    const MatrixXd dc_in = dc_next;
    const auto cp = step > 0 ? tr.c.middleCols(off - b, b) : tr.c0.middleCols(0, b);
    const auto g = tr.gates.middleCols(off, b);
    const auto gi = g.topRows(hd).array();
    const auto gf = g.middleRows(hd, hd).array();
    const auto gg = g.middleRows(2 * hd, hd).array();
    const auto go = g.bottomRows(hd).array();
    const Eigen::ArrayXXd tc = tr.c.middleCols(off, b).array().tanh();
    const Eigen::ArrayXXd dc = dc_in.array() + dh.array() * go * (1.0 - tc.square());
    auto dp = dpre.middleCols(off, b);
    dp.topRows(hd) = (dc * gg * gi * (1.0 - gi)).matrix();
    dp.middleRows(hd, hd) = (dc * cp.array() * gf * (1.0 - gf)).matrix();
    dp.middleRows(2 * hd, hd) = (dc * gi * (1.0 - gg.square())).matrix();
    dp.bottomRows(hd) = (dh.array() * tc * go * (1.0 - go)).matrix();
    MatrixXd dc_prev = (dc * gf).matrix();
    if (valid != nullptr) {
      for (Index j = 0; j < b; ++j) {
        if (!(*valid)[static_cast<std::size_t>(off + j)]) {
          dp.col(j).setZero();
          dc_prev.col(j) = dc_in.col(j);
        }
      }
    }
    MatrixXd dh_prev = layer.wh.transpose() * dp;
    if (valid != nullptr) {
      for (Index j = 0; j < b; ++j) {
        if (!(*valid)[static_cast<std::size_t>(off + j)]) dh_prev.col(j) += dh.col(j);
      }
    }
    dh_next = std::move(dh_prev);
    dc_next = std::move(dc_prev);
  }
  out.dh0 = std::move(dh_next);
  out.dc0 = std::move(dc_next);
  if (grad != nullptr) {
    grad->wx.noalias() += dpre * tr.x.transpose();
    grad->b += dpre.rowwise().sum();
    MatrixXd h_prev(hd, tr.x.cols());
    if (steps > 0) {
      h_prev.leftCols(b) = tr.h0;
      h_prev.rightCols(tr.x.cols() - b) = tr.h.leftCols(tr.x.cols() - b);
      grad->wh.noalias() += dpre * h_prev.transpose();
    }
  }
  out.dx.noalias() = layer.wx.transpose() * dpre;
}

MatrixXd embed(const MatrixXd& embedding, const std::vector<std::int32_t>& ids) {
  MatrixXd x(embedding.cols(), static_cast<Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) x.col(static_cast<Index>(k)) = embedding.row(ids[k]).transpose();
  return x;
}

void accumulate_embedding(MatrixXd& grad, const std::vector<std::int32_t>& ids, const MatrixXd& dx) {
  for (std::size_t k = 0; k < ids.size(); ++k) grad.row(ids[k]) += dx.col(static_cast<Index>(k)).transpose();
}

void run_encoder(const Weights& w, const MatrixXd& x0, std::size_t steps, std::size_t batch,
                 const std::vector<char>& valid, EncoderTrace& tr) {
  const Index hd = w.decoder[0].wh.cols();
  const auto b = static_cast<Index>(batch);
  tr.steps = steps;
  tr.batch = batch;
  tr.valid = valid;
  const MatrixXd zero = MatrixXd::Zero(hd, b);
  const MatrixXd* input = &x0;
  for (std::size_t l = 0; l < kLayers; ++l) {
    if (steps == 0) {
      tr.final_h[l] = zero;
      tr.final_c[l] = zero;
      continue;
    }
    run_layer(w.encoder[l], *input, steps, batch, zero, zero, &tr.valid, tr.layers[l]);
    tr.final_h[l] = tr.layers[l].h.rightCols(b);
    tr.final_c[l] = tr.layers[l].c.rightCols(b);
    input = &tr.layers[l].h;
  }
}

void backprop_encoder(const Weights& w, const EncoderTrace& tr, const std::array<MatrixXd, kLayers>& dh_final,
                      const std::array<MatrixXd, kLayers>& dc_final, Weights* grad, MatrixXd* dx0) {
  if (tr.steps == 0) {
    if (dx0 != nullptr) dx0->resize(w.embedding.cols(), 0);
    return;
  }
  MatrixXd d_out;
  for (std::size_t l = kLayers; l-- > 0;) {
    LayerGrad lg;
    backprop_layer(w.encoder[l], tr.layers[l], tr.steps, tr.batch, l + 1 == kLayers ? nullptr : &d_out,
                   dh_final[l], dc_final[l], &tr.valid, grad != nullptr ? &grad->encoder[l] : nullptr, lg);
    d_out = std::move(lg.dx);
  }
  if (dx0 != nullptr) *dx0 = std::move(d_out);
}

double run_decoder(const Weights& w, const std::vector<std::int32_t>& in_ids, std::size_t steps, std::size_t batch,
                   const std::vector<std::int32_t>& targets, const std::vector<char>& scored,
                   const std::array<MatrixXd, kLayers>& h0, const std::array<MatrixXd, kLayers>& c0, double scale,
                   Weights* grad, std::array<MatrixXd, kLayers>* dh0, std::array<MatrixXd, kLayers>* dc0,
                   MatrixXd* logits_out, std::vector<double>* per_column_nll) {
  std::array<LayerTrace, kLayers> traces;
  const MatrixXd x0 = embed(w.embedding, in_ids);
  const MatrixXd* input = &x0;
  for (std::size_t l = 0; l < kLayers; ++l) {
    run_layer(w.decoder[l], *input, steps, batch, h0[l], c0[l], nullptr, traces[l]);
    input = &traces[l].h;
  }
  MatrixXd logits = w.w_out.transpose() * traces[kLayers - 1].h;
  logits.colwise() += w.b_out.col(0);

  std::size_t counted = 0;
  for (char s : scored) counted += s ? 1 : 0;
  double total = 0.0;
  MatrixXd dlogits = MatrixXd::Zero(logits.rows(), logits.cols());
  if (per_column_nll != nullptr) per_column_nll->assign(scored.size(), 0.0);
  for (Index col = 0; col < logits.cols(); ++col) {
    if (!scored[static_cast<std::size_t>(col)]) continue;
    const auto z = logits.col(col);
    const double m = z.maxCoeff();
    const Eigen::VectorXd e = (z.array() - m).exp().matrix();
    const double sum = e.sum();
    const std::int32_t y = targets[static_cast<std::size_t>(col)];
    const double nll = m + std::log(sum) - z(y);
    total += nll;
    if (per_column_nll != nullptr) (*per_column_nll)[static_cast<std::size_t>(col)] = nll;
    if (grad != nullptr || dh0 != nullptr) {
      dlogits.col(col) = e / sum;
      dlogits(y, col) -= 1.0;
    }
  }
  if (logits_out != nullptr) *logits_out = logits;
  const double mean = counted == 0 ? 0.0 : total / static_cast<double>(counted);
  if (grad == nullptr && dh0 == nullptr) return mean;
  if (counted > 0) dlogits *= scale / static_cast<double>(counted);

  const MatrixXd& top = traces[kLayers - 1].h;
  if (grad != nullptr) {
    grad->w_out.noalias() += top * dlogits.transpose();
    grad->b_out += dlogits.rowwise().sum();
  }
  MatrixXd d_out = w.w_out * dlogits;
  const auto hd = w.decoder[0].wh.cols();
  const MatrixXd zero = MatrixXd::Zero(hd, static_cast<Index>(batch));
  for (std::size_t l = kLayers; l-- > 0;) {
    LayerGrad lg;
    backprop_layer(w.decoder[l], traces[l], steps, batch, &d_out, zero, zero, nullptr,
                   grad != nullptr ? &grad->decoder[l] : nullptr, lg);
    if (dh0 != nullptr) (*dh0)[l] = std::move(lg.dh0);
    if (dc0 != nullptr) (*dc0)[l] = std::move(lg.dc0);
    d_out = std::move(lg.dx);
  }
  if (grad != nullptr) accumulate_embedding(grad->embedding, in_ids, d_out);
  return mean;
}

}  // namespace detail

namespace {

using detail::EncoderTrace;

void check_ids(std::span<const std::int32_t> ids, std::size_t vocab) {
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error(ErrorCode::kDimensionMismatch, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

void require_seq2seq(const Seq2SeqParams& params) {
  if (params.role() == ModelRole::kLanguageModel) {
    throw Error(ErrorCode::kInvalidArgument, "a language model has no encoder");
  }
}

// Time-major, right-padded layout: column t * B + b. The encoder reads each
// input last token first, so step t holds position n - 1 - t.
struct EncoderInput {
  std::vector<std::int32_t> ids;
  std::vector<char> valid;
  std::size_t steps = 0;
};

EncoderInput layout_inputs(std::span<const std::span<const std::int32_t>> inputs) {
  EncoderInput in;
  for (const auto& s : inputs) in.steps = std::max(in.steps, s.size());
  const std::size_t b = inputs.size();
  in.ids.assign(in.steps * b, Vocabulary::kPad);
  in.valid.assign(in.steps * b, 0);
  for (std::size_t j = 0; j < b; ++j) {
    const std::size_t n = inputs[j].size();
    for (std::size_t t = 0; t < n; ++t) {
      in.ids[t * b + j] = inputs[j][n - 1 - t];
      in.valid[t * b + j] = 1;
    }
  }
  return in;
}

struct DecoderInput {
  std::vector<std::int32_t> in_ids;
  std::vector<std::int32_t> targets;
  std::vector<char> scored;
  std::size_t steps = 0;
};

// Seq2seq decoder: BOS + y predicts y + EOS.
DecoderInput layout_targets(std::span<const std::span<const std::int32_t>> targets) {
  DecoderInput d;
  for (const auto& s : targets) d.steps = std::max(d.steps, s.size() + 1);
  const std::size_t b = targets.size();
  d.in_ids.assign(d.steps * b, Vocabulary::kPad);
  d.targets.assign(d.steps * b, Vocabulary::kPad);
  d.scored.assign(d.steps * b, 0);
  for (std::size_t j = 0; j < b; ++j) {
    const auto& y = targets[j];
    for (std::size_t t = 0; t <= y.size(); ++t) {
      d.in_ids[t * b + j] = t == 0 ? Vocabulary::kBos : y[t - 1];
      d.targets[t * b + j] = t == y.size() ? Vocabulary::kEos : y[t];
      d.scored[t * b + j] = 1;
    }
  }
  return d;
}

// Language model: BOS + s[:-1] predicts s.
DecoderInput layout_lm(std::span<const std::span<const std::int32_t>> seqs) {
  DecoderInput d;
  for (const auto& s : seqs) d.steps = std::max(d.steps, s.size());
  const std::size_t b = seqs.size();
  d.in_ids.assign(d.steps * b, Vocabulary::kPad);
  d.targets.assign(d.steps * b, Vocabulary::kPad);
  d.scored.assign(d.steps * b, 0);
  for (std::size_t j = 0; j < b; ++j) {
    const auto& s = seqs[j];
    for (std::size_t t = 0; t < s.size(); ++t) {
      d.in_ids[t * b + j] = t == 0 ? Vocabulary::kBos : s[t - 1];
      d.targets[t * b + j] = s[t];
      d.scored[t * b + j] = 1;
    }
  }
  return d;
}

struct Seq2SeqOutcome {
  double loss = 0.0;
  Eigen::MatrixXd logits;
  Eigen::MatrixXd dx0;
};

// Shared path for parameter gradients (x0 from embeddings) and input
// gradients (x0 supplied).
Seq2SeqOutcome run_seq2seq(const Weights& w, const Eigen::MatrixXd& x0, const EncoderInput& enc,
                           std::size_t batch, const DecoderInput& dec, double scale, Weights* grad, bool want_dx0,
                           bool want_logits) {
  EncoderTrace tr;
  detail::run_encoder(w, x0, enc.steps, batch, enc.valid, tr);
  Seq2SeqOutcome out;
  const bool backprop = grad != nullptr || want_dx0;
  std::array<Eigen::MatrixXd, kLayers> dh0;
  std::array<Eigen::MatrixXd, kLayers> dc0;
  out.loss = detail::run_decoder(w, dec.in_ids, dec.steps, batch, dec.targets, dec.scored, tr.final_h, tr.final_c,
                                 scale, grad, backprop ? &dh0 : nullptr, backprop ? &dc0 : nullptr,
                                 want_logits ? &out.logits : nullptr, nullptr);
  if (!backprop) return out;
  Eigen::MatrixXd dx0;
  detail::backprop_encoder(w, tr, dh0, dc0, grad, &dx0);
  if (grad != nullptr) detail::accumulate_embedding(grad->embedding, enc.ids, dx0);
  if (want_dx0) out.dx0 = std::move(dx0);
  return out;
}

}  // namespace

ForwardResult forward(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                      std::span<const std::int32_t> target) {
  require_seq2seq(params);
  check_ids(input, params.dims().vocab);
  check_ids(target, params.dims().vocab);
  ForwardResult r;
  if (target.empty()) r.empty_target = true;
  const std::array<std::span<const std::int32_t>, 1> ins = {input};
  const std::array<std::span<const std::int32_t>, 1> tgs = {target};
  const EncoderInput enc = layout_inputs(ins);
  const DecoderInput dec = layout_targets(tgs);
  Seq2SeqOutcome o = run_seq2seq(params.weights, detail::embed(params.weights.embedding, enc.ids), enc, 1, dec, 1.0,
                                 nullptr, false, true);
  r.logits = std::move(o.logits);
  r.loss = r.empty_target ? 0.0 : o.loss;
  return r;
}

double loss_and_gradient(const Seq2SeqParams& params, std::span<const SeqPair> batch, Weights* grad,
                         double loss_scale) {
  require_seq2seq(params);
  std::vector<std::span<const std::int32_t>> ins;
  std::vector<std::span<const std::int32_t>> tgs;
  for (const SeqPair& p : batch) {
    if (p.target.empty()) continue;
    check_ids(p.input, params.dims().vocab);
    check_ids(p.target, params.dims().vocab);
    ins.emplace_back(p.input);
    tgs.emplace_back(p.target);
  }
  if (ins.empty()) return 0.0;
  const EncoderInput enc = layout_inputs(ins);
  const DecoderInput dec = layout_targets(tgs);
  return run_seq2seq(params.weights, detail::embed(params.weights.embedding, enc.ids), enc, ins.size(), dec,
                     loss_scale, grad, false, false)
      .loss;
}

Weights backward(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                 std::span<const std::int32_t> target) {
  Weights grad = params.weights.zeros_like();
  const SeqPair pair{{input.begin(), input.end()}, {target.begin(), target.end()}};
  loss_and_gradient(params, std::span<const SeqPair>(&pair, 1), &grad);
  return grad;
}

GradientField input_gradients(const Seq2SeqParams& params, std::span<const std::int32_t> sketch_ids,
                              std::span<const std::int32_t> target) {
  if (params.role() != ModelRole::kCrafting) {
    throw Error(ErrorCode::kInvalidArgument, "input gradients are taken on the crafting model");
  }
  check_ids(sketch_ids, params.dims().vocab);
  for (std::int32_t id : target) {
    if (id < static_cast<std::int32_t>(Vocabulary::kReserved) || static_cast<std::size_t>(id) >= params.dims().vocab) {
      throw Error(ErrorCode::kTargetOutOfVocabulary, "target token id " + std::to_string(id) + " is not in vocabulary");
    }
  }
  if (target.empty()) throw Error(ErrorCode::kTargetOutOfVocabulary, "target sequence is empty");
  const std::array<std::span<const std::int32_t>, 1> ins = {sketch_ids};
  const std::array<std::span<const std::int32_t>, 1> tgs = {target};
  const EncoderInput enc = layout_inputs(ins);
  const DecoderInput dec = layout_targets(tgs);
  const Seq2SeqOutcome o = run_seq2seq(params.weights, detail::embed(params.weights.embedding, enc.ids), enc, 1, dec,
                                       1.0, nullptr, true, false);
  // dL/d(one-hot at t) = E dL/dx_t, one row per position.
  return (params.weights.embedding * o.dx0.rowwise().reverse()).transpose();
}

double loss_from_embeddings(const Seq2SeqParams& params, const Eigen::MatrixXd& embedded,
                            std::span<const std::int32_t> target) {
  require_seq2seq(params);
  EncoderInput enc;
  enc.steps = static_cast<std::size_t>(embedded.cols());
  enc.ids.assign(enc.steps, Vocabulary::kPad);
  enc.valid.assign(enc.steps, 1);
  const std::array<std::span<const std::int32_t>, 1> tgs = {target};
  const DecoderInput dec = layout_targets(tgs);
  return run_seq2seq(params.weights, embedded.rowwise().reverse(), enc, 1, dec, 1.0, nullptr, false, false).loss;
}

namespace {

void lstm_step(const LstmLayer& layer, const Eigen::MatrixXd& x, Eigen::MatrixXd& h, Eigen::MatrixXd& c) {
  const Index hd = layer.wh.cols();
  Eigen::MatrixXd g = layer.wx * x + layer.wh * h;
  g.colwise() += layer.b.col(0);
  const Eigen::ArrayXXd i = (1.0 + (-g.topRows(hd).array()).exp()).inverse();
  const Eigen::ArrayXXd f = (1.0 + (-g.middleRows(hd, hd).array()).exp()).inverse();
  const Eigen::ArrayXXd gg = g.middleRows(2 * hd, hd).array().tanh();
  const Eigen::ArrayXXd o = (1.0 + (-g.bottomRows(hd).array()).exp()).inverse();
  c = (f * c.array() + i * gg).matrix();
  h = (o * c.array().tanh()).matrix();
}

}  // namespace

std::vector<std::vector<std::int32_t>> decode_greedy_batch(const Seq2SeqParams& params,
                                                           std::span<const std::vector<std::int32_t>> inputs,
                                                           std::size_t max_len) {
  require_seq2seq(params);
  const Weights& w = params.weights;
  std::vector<std::vector<std::int32_t>> out(inputs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, inputs.size() - start);
    std::vector<std::span<const std::int32_t>> ins;
    for (std::size_t j = 0; j < b; ++j) {
      check_ids(inputs[start + j], params.dims().vocab);
      ins.emplace_back(inputs[start + j]);
    }
    const EncoderInput enc = layout_inputs(ins);
    EncoderTrace tr;
    detail::run_encoder(w, detail::embed(w.embedding, enc.ids), enc.steps, b, enc.valid, tr);
    std::array<Eigen::MatrixXd, kLayers> h = tr.final_h;
    std::array<Eigen::MatrixXd, kLayers> c = tr.final_c;
    std::vector<std::int32_t> current(b, Vocabulary::kBos);
    std::vector<char> done(b, 0);
    std::size_t remaining = b;
    for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
      Eigen::MatrixXd x = detail::embed(w.embedding, current);
      for (std::size_t l = 0; l < kLayers; ++l) {
        lstm_step(w.decoder[l], x, h[l], c[l]);
        x = h[l];
      }
      Eigen::MatrixXd logits = w.w_out.transpose() * x;
      logits.colwise() += w.b_out.col(0);
      for (std::size_t j = 0; j < b; ++j) {
        if (done[j]) continue;
        Index best = 0;
        logits.col(static_cast<Index>(j)).maxCoeff(&best);
        if (best == Vocabulary::kEos) {
          done[j] = 1;
          --remaining;
          continue;
        }
        out[start + j].push_back(static_cast<std::int32_t>(best));
        current[j] = static_cast<std::int32_t>(best);
      }
    }
  }
  return out;
}

std::vector<std::int32_t> decode_greedy(const Seq2SeqParams& params, std::span<const std::int32_t> input,
                                        std::size_t max_len) {
  const std::vector<std::vector<std::int32_t>> one = {{input.begin(), input.end()}};
  return decode_greedy_batch(params, one, max_len).front();
}

Eigen::MatrixXd encode_batch(const Seq2SeqParams& params, std::span<const std::vector<std::int32_t>> inputs,
                             std::size_t length) {
  require_seq2seq(params);
  const Weights& w = params.weights;
  const auto hd = static_cast<Index>(params.dims().d_hidden);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Index>(inputs.size()), static_cast<Index>(length) * hd);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, inputs.size() - start);
    std::vector<std::span<const std::int32_t>> ins;
    for (std::size_t j = 0; j < b; ++j) {
      check_ids(inputs[start + j], params.dims().vocab);
      const std::size_t n = std::min(inputs[start + j].size(), length);
      ins.emplace_back(inputs[start + j].data(), n);
    }
    const EncoderInput enc = layout_inputs(ins);
    EncoderTrace tr;
    detail::run_encoder(w, detail::embed(w.embedding, enc.ids), enc.steps, b, enc.valid, tr);
    if (enc.steps == 0) continue;
    const Eigen::MatrixXd& top = tr.layers[kLayers - 1].h;
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t t = 0; t < ins[j].size(); ++t) {
        out.row(static_cast<Index>(start + j)).segment(static_cast<Index>(t) * hd, hd) =
            top.col(static_cast<Index>(t * b + j)).transpose();
      }
    }
  }
  return out;
}

Eigen::VectorXd encode(const Seq2SeqParams& params, std::span<const std::int32_t> input, std::size_t length) {
  const std::vector<std::vector<std::int32_t>> one = {{input.begin(), input.end()}};
  return encode_batch(params, one, length).row(0).transpose();
}

namespace {

void require_lm(const Seq2SeqParams& lm) {
  if (lm.role() != ModelRole::kLanguageModel) {
    throw Error(ErrorCode::kInvalidArgument, "perplexity needs a language model");
  }
}

std::array<Eigen::MatrixXd, kLayers> zero_states(const Seq2SeqParams& p, std::size_t batch) {
  std::array<Eigen::MatrixXd, kLayers> z;
  for (auto& m : z) m = Eigen::MatrixXd::Zero(static_cast<Index>(p.dims().d_hidden), static_cast<Index>(batch));
  return z;
}

}  // namespace

std::vector<double> lm_perplexities(const Seq2SeqParams& lm, std::span<const std::vector<std::int32_t>> sequences) {
  require_lm(lm);
  std::vector<double> out(sequences.size(), 0.0);
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < sequences.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, sequences.size() - start);
    std::vector<std::span<const std::int32_t>> seqs;
    for (std::size_t j = 0; j < b; ++j) {
      const auto& s = sequences[start + j];
      if (s.empty()) throw Error(ErrorCode::kEmptySequence, "perplexity of an empty sequence");
      check_ids(s, lm.dims().vocab);
      seqs.emplace_back(s);
    }
    const DecoderInput d = layout_lm(seqs);
    const auto z = zero_states(lm, b);
    std::vector<double> nll;
    detail::run_decoder(lm.weights, d.in_ids, d.steps, b, d.targets, d.scored, z, z, 1.0, nullptr, nullptr, nullptr,
                        nullptr, &nll);
    for (std::size_t j = 0; j < b; ++j) {
      double sum = 0.0;
      for (std::size_t t = 0; t < seqs[j].size(); ++t) sum += nll[t * b + j];
      out[start + j] = std::exp(sum / static_cast<double>(seqs[j].size()));
    }
  }
  return out;
}

double lm_perplexity(const Seq2SeqParams& lm, std::span<const std::int32_t> tokens) {
  const std::vector<std::vector<std::int32_t>> one = {{tokens.begin(), tokens.end()}};
  return lm_perplexities(lm, one).front();
}

double lm_loss_and_gradient(const Seq2SeqParams& lm, std::span<const std::vector<std::int32_t>> batch, Weights* grad) {
  require_lm(lm);
  std::vector<std::span<const std::int32_t>> seqs;
  for (const auto& s : batch) {
    if (s.empty()) continue;
    check_ids(s, lm.dims().vocab);
    seqs.emplace_back(s);
  }
  if (seqs.empty()) return 0.0;
  const DecoderInput d = layout_lm(seqs);
  const auto z = zero_states(lm, seqs.size());
  return detail::run_decoder(lm.weights, d.in_ids, d.steps, seqs.size(), d.targets, d.scored, z, z, 1.0, grad, nullptr,
                             nullptr, nullptr, nullptr);
}

}  // namespace codepoison
