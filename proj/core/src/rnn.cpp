#include "dyind/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dyind/error.hpp"

namespace dyind {

RnnParams RnnParams::init(Task task, std::size_t vocab, std::size_t d_in, std::size_t hidden, std::size_t n_out,
                          bool one_hot_input, Rng& rng) {
  RnnParams p;
  p.task = task;
  p.hidden_size = hidden;
  p.input_embed = Matrix(vocab, d_in);
  p.w_ih = Matrix(hidden, d_in);
  p.w_hh = Matrix(hidden, hidden);
  p.b_h.assign(hidden, 0.0);
  p.w_out = Matrix(n_out, hidden);
  p.b_out.assign(n_out, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  if (one_hot_input) {
    if (d_in != vocab) throw Error(ErrorCode::kInvalidArgument, "one-hot input needs d_in == vocab");
    for (std::size_t i = 0; i < vocab; ++i) p.input_embed(i, i) = 1.0;
    p.embed_trainable = false;
  } else {
    for (auto& v : p.input_embed.data) v = rng.uniform(-bound, bound);
  }
  for (auto& v : p.w_ih.data) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_hh.data) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_out.data) v = rng.uniform(-bound, bound);
  return p;
}

RnnParams RnnParams::zeros_like() const {
  RnnParams z = *this;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

std::array<std::span<double>, 6> RnnParams::tensors() {
  return {std::span<double>(input_embed.data), std::span<double>(w_ih.data), std::span<double>(w_hh.data),
          std::span<double>(b_h),              std::span<double>(w_out.data), std::span<double>(b_out)};
}

std::array<std::span<const double>, 6> RnnParams::tensors() const {
  return {std::span<const double>(input_embed.data), std::span<const double>(w_ih.data),
          std::span<const double>(w_hh.data),        std::span<const double>(b_h),
          std::span<const double>(w_out.data),       std::span<const double>(b_out)};
}

std::size_t RnnParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

bool RnnParams::all_finite() const {
  for (auto t : tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

namespace {

void check_tokens(const RnnParams& p, std::span<const int> tokens) {
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= p.vocab()) {
      throw Error(ErrorCode::kTokenOutOfVocab, "token id " + std::to_string(tok) + " outside vocab of " +
                                                   std::to_string(p.vocab()));
    }
  }
}

// Four partial sums break the serial add chain; the summation order is fixed,
// so results stay bitwise reproducible.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

// h_next = tanh(w_ih x + w_hh h + b_h)
void step(const RnnParams& p, std::span<const double> x, std::span<const double> h, std::vector<double>& out) {
  const std::size_t H = p.hidden_size;
  const std::size_t D = p.d_in();
  out.resize(H);
  for (std::size_t i = 0; i < H; ++i) {
    const double a = p.b_h[i] + dot(p.w_ih.data.data() + i * D, x.data(), D) + dot(p.w_hh.data.data() + i * H, h.data(), H);
    out[i] = std::tanh(a);
  }
}

void project(const RnnParams& p, std::span<const double> h, std::vector<double>& out) {
  const std::size_t O = p.n_out();
  const std::size_t H = p.hidden_size;
  out.resize(O);
  for (std::size_t o = 0; o < O; ++o) {
    out[o] = p.b_out[o] + dot(p.w_out.data.data() + o * H, h.data(), H);
  }
}

// Log-softmax cross-entropy and its logit gradient (softmax - onehot).
double cross_entropy(std::span<const double> logits, std::size_t target, std::vector<double>* dlogits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  if (dlogits != nullptr) {
    dlogits->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*dlogits)[i] = std::exp(logits[i] - log_z);
    (*dlogits)[target] -= 1.0;
  }
  return log_z - logits[target];
}

// Accumulates output-layer grads for one position and returns dh.
void output_backward(const RnnParams& p, std::span<const double> h_used, std::span<const double> dlogits,
                     double scale, RnnParams& g, std::vector<double>& dh) {
  const std::size_t O = p.n_out();
  const std::size_t H = p.hidden_size;
  dh.assign(H, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    const double d = dlogits[o] * scale;
    g.b_out[o] += d;
    double* gw = g.w_out.data.data() + o * H;
    const double* w = p.w_out.data.data() + o * H;
    for (std::size_t k = 0; k < H; ++k) {
      gw[k] += d * h_used[k];
      dh[k] += d * w[k];
    }
  }
}

// BPTT given dL/dh_t for t = 1..T (index t in dh_out). Accumulates into g.
void recurrent_backward(const RnnParams& p, const ForwardTrace& tr, std::vector<std::vector<double>>& dh_out,
                        RnnParams& g) {
  const std::size_t H = p.hidden_size;
  const std::size_t D = p.d_in();
  const std::size_t T = tr.tokens.size();
  std::vector<double> carry(H, 0.0);
  std::vector<double> da(H);
  for (std::size_t t = T; t >= 1; --t) {
    const auto& h = tr.hidden[t];
    const auto& h_prev = tr.hidden[t - 1];
    for (std::size_t i = 0; i < H; ++i) da[i] = (carry[i] + dh_out[t][i]) * (1.0 - h[i] * h[i]);
    const auto x = p.input_embed.row(static_cast<std::size_t>(tr.tokens[t - 1]));
    std::fill(carry.begin(), carry.end(), 0.0);
    std::vector<double> dx(D, 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      const double d = da[i];
      if (d == 0.0) continue;
      g.b_h[i] += d;
      double* gi = g.w_ih.data.data() + i * D;
      const double* wi = p.w_ih.data.data() + i * D;
      for (std::size_t k = 0; k < D; ++k) {
        gi[k] += d * x[k];
        dx[k] += d * wi[k];
      }
      double* gh = g.w_hh.data.data() + i * H;
      const double* wh = p.w_hh.data.data() + i * H;
      for (std::size_t k = 0; k < H; ++k) {
        gh[k] += d * h_prev[k];
        carry[k] += d * wh[k];
      }
    }
    if (p.embed_trainable) {
      auto ge = g.input_embed.row(static_cast<std::size_t>(tr.tokens[t - 1]));
      for (std::size_t k = 0; k < D; ++k) ge[k] += dx[k];
    }
  }
}

}  // namespace

ForwardTrace rnn_forward(const RnnParams& params, std::span<const int> tokens, double dropout, Rng* dropout_rng) {
  check_tokens(params, tokens);
  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  const std::size_t H = params.hidden_size;
  tr.hidden.reserve(tokens.size() + 1);
  tr.hidden.emplace_back(H, 0.0);
  std::vector<double> next;
  for (int tok : tokens) {
    step(params, params.input_embed.row(static_cast<std::size_t>(tok)), tr.hidden.back(), next);
    tr.hidden.push_back(next);
  }
  std::vector<double> out;
  if (params.task == Task::kClassifier) {
    project(params, tr.hidden.back(), out);
    tr.logits.push_back(out);
    return tr;
  }
  const bool use_dropout = dropout > 0.0 && dropout_rng != nullptr;
  const double keep_scale = use_dropout ? 1.0 / (1.0 - dropout) : 1.0;
  std::vector<double> h_used(H);
  for (std::size_t t = 1; t <= tokens.size(); ++t) {
    const auto& h = tr.hidden[t];
    if (use_dropout) {
      std::vector<double> mask(H);
      for (std::size_t k = 0; k < H; ++k) mask[k] = dropout_rng->bernoulli(dropout) ? 0.0 : keep_scale;
      for (std::size_t k = 0; k < H; ++k) h_used[k] = h[k] * mask[k];
      tr.dropout_mask.push_back(std::move(mask));
      project(params, h_used, out);
    } else {
      project(params, h, out);
    }
    tr.logits.push_back(out);
  }
  return tr;
}

std::vector<double> rnn_step(const RnnParams& params, int token, std::span<const double> h) {
  const int tok[1] = {token};
  check_tokens(params, tok);
  std::vector<double> out;
  step(params, params.input_embed.row(static_cast<std::size_t>(token)), h, out);
  return out;
}

std::vector<double> rnn_project(const RnnParams& params, std::span<const double> h) {
  std::vector<double> out;
  project(params, h, out);
  return out;
}

std::vector<std::vector<double>> rnn_hidden_states(const RnnParams& params, std::span<const int> tokens) {
  check_tokens(params, tokens);
  std::vector<std::vector<double>> hidden;
  hidden.reserve(tokens.size() + 1);
  hidden.emplace_back(params.hidden_size, 0.0);
  std::vector<double> next;
  for (int tok : tokens) {
    step(params, params.input_embed.row(static_cast<std::size_t>(tok)), hidden.back(), next);
    hidden.push_back(next);
  }
  return hidden;
}

std::vector<double> softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double classifier_loss(const RnnParams& params, std::span<const ClassifierExample> batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto tr = rnn_forward(params, ex.tokens);
    total += cross_entropy(tr.logits[0], static_cast<std::size_t>(ex.label), nullptr);
  }
  return total / static_cast<double>(batch.size());
}

double lm_loss(const RnnParams& params, std::span<const LmExample> batch) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : batch) {
    const auto tr = rnn_forward(params, ex.tokens);
    for (std::size_t j = 1; j < ex.tokens.size(); ++j) {
      if (!ex.loss_mask[j]) continue;
      total += cross_entropy(tr.logits[j - 1], static_cast<std::size_t>(ex.tokens[j]), nullptr);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

LossAndGrad classifier_backward(const RnnParams& params, std::span<const ClassifierExample> batch) {
  LossAndGrad out{0.0, params.zeros_like()};
  if (batch.empty()) return out;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dlogits;
  std::vector<double> dh;
  for (const auto& ex : batch) {
    const auto tr = rnn_forward(params, ex.tokens);
    out.loss += scale * cross_entropy(tr.logits[0], static_cast<std::size_t>(ex.label), &dlogits);
    output_backward(params, tr.hidden.back(), dlogits, scale, out.grad, dh);
    const std::size_t T = ex.tokens.size();
    if (T == 0) continue;
    std::vector<std::vector<double>> dh_out(T + 1, std::vector<double>(params.hidden_size, 0.0));
    dh_out[T] = dh;
    recurrent_backward(params, tr, dh_out, out.grad);
  }
  return out;
}

LossAndGrad lm_backward(const RnnParams& params, std::span<const LmExample> batch, double dropout, Rng* dropout_rng) {
  LossAndGrad out{0.0, params.zeros_like()};
  std::size_t count = 0;
  for (const auto& ex : batch) {
    for (std::size_t j = 1; j < ex.tokens.size(); ++j) count += ex.loss_mask[j] ? 1 : 0;
  }
  if (count == 0) return out;
  const double scale = 1.0 / static_cast<double>(count);
  const std::size_t H = params.hidden_size;
  const bool use_dropout = dropout > 0.0 && dropout_rng != nullptr;
  const double keep_scale = use_dropout ? 1.0 / (1.0 - dropout) : 1.0;
  std::vector<double> logits;
  std::vector<double> dlogits;
  std::vector<double> dh;
  std::vector<double> h_used(H);
  std::vector<double> mask(H);
  ForwardTrace tr;
  for (const auto& ex : batch) {
    check_tokens(params, ex.tokens);
    const std::size_t T = ex.tokens.size();
    // Only masked positions are projected; the loss never reads the others.
    tr.tokens.assign(ex.tokens.begin(), ex.tokens.end());
    tr.hidden = rnn_hidden_states(params, ex.tokens);
    std::vector<std::vector<double>> dh_out(T + 1, std::vector<double>(H, 0.0));
    bool any = false;
    for (std::size_t j = 1; j < T; ++j) {
      if (!ex.loss_mask[j]) continue;
      any = true;
      const auto& h = tr.hidden[j];
      if (use_dropout) {
        for (std::size_t k = 0; k < H; ++k) mask[k] = dropout_rng->bernoulli(dropout) ? 0.0 : keep_scale;
        for (std::size_t k = 0; k < H; ++k) h_used[k] = h[k] * mask[k];
      } else {
        std::copy(h.begin(), h.end(), h_used.begin());
      }
      project(params, h_used, logits);
      out.loss += scale * cross_entropy(logits, static_cast<std::size_t>(ex.tokens[j]), &dlogits);
      output_backward(params, h_used, dlogits, scale, out.grad, dh);
      if (use_dropout) {
        for (std::size_t k = 0; k < H; ++k) dh[k] *= mask[k];
      }
      for (std::size_t k = 0; k < H; ++k) dh_out[j][k] += dh[k];
    }
    if (any) recurrent_backward(params, tr, dh_out, out.grad);
  }
  return out;
}

}  // namespace dyind
