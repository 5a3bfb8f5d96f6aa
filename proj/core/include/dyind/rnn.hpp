#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dyind/rng.hpp"

namespace dyind {

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

enum class Task : int { kClassifier = 0, kLanguageModel = 1 };

// Single-layer Elman network:
//   h_t = tanh(w_ih e(x_t) + w_hh h_{t-1} + b_h),  h_0 = 0
//   logits = w_out h + b_out
struct RnnParams {
  Matrix input_embed;  // vocab x d_in
  Matrix w_ih;         // hidden x d_in
  Matrix w_hh;         // hidden x hidden
  std::vector<double> b_h;
  Matrix w_out;  // out x hidden
  std::vector<double> b_out;
  std::size_t hidden_size = 0;
  Task task = Task::kClassifier;
  // False for the one-hot classifier input, whose embedding is fixed.
  bool embed_trainable = true;

  std::size_t vocab() const { return input_embed.rows; }
  std::size_t d_in() const { return input_embed.cols; }
  std::size_t n_out() const { return w_out.rows; }

  // Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) weights, zero biases. A one-hot
  // input uses the identity embedding (d_in == vocab).
  static RnnParams init(Task task, std::size_t vocab, std::size_t d_in, std::size_t hidden, std::size_t n_out,
                        bool one_hot_input, Rng& rng);

  // Same shapes, all zeros.
  RnnParams zeros_like() const;

  // Field order: input_embed, w_ih, w_hh, b_h, w_out, b_out.
  std::array<std::span<double>, 6> tensors();
  std::array<std::span<const double>, 6> tensors() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  bool operator==(const RnnParams&) const = default;
};

struct ForwardTrace {
  std::vector<int> tokens;
  std::vector<std::vector<double>> hidden;  // hidden[0] = h_0, size T + 1
  std::vector<std::vector<double>> logits;  // classifier: 1 row; LM: T rows (row t from h_{t+1})
  std::vector<std::vector<double>> dropout_mask;  // LM training only, per step
};

// Throws TOKEN_OUT_OF_VOCAB. Dropout applies to the hidden state feeding the
// output layer and only when dropout_rng is given.
ForwardTrace rnn_forward(const RnnParams& params, std::span<const int> tokens,
                         double dropout = 0.0, Rng* dropout_rng = nullptr);

// One recurrence step and the output projection, for incremental decoding.
std::vector<double> rnn_step(const RnnParams& params, int token, std::span<const double> h);
std::vector<double> rnn_project(const RnnParams& params, std::span<const double> h);

// Hidden states only; no logits.
std::vector<std::vector<double>> rnn_hidden_states(const RnnParams& params, std::span<const int> tokens);

std::vector<double> softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> values);

struct ClassifierExample {
  std::vector<int> tokens;
  int label = 0;
};

struct LmExample {
  std::vector<int> tokens;
  std::vector<bool> loss_mask;  // mask[j] marks token j as a prediction target
};

// Mean cross-entropy over the final classifier logits of the batch.
double classifier_loss(const RnnParams& params, std::span<const ClassifierExample> batch);
// Mean cross-entropy over all masked positions in the batch (0 if none).
double lm_loss(const RnnParams& params, std::span<const LmExample> batch);

// Exact gradients of the mean batch loss; returns the loss.
struct LossAndGrad {
  double loss = 0.0;
  RnnParams grad;
};
LossAndGrad classifier_backward(const RnnParams& params, std::span<const ClassifierExample> batch);
LossAndGrad lm_backward(const RnnParams& params, std::span<const LmExample> batch, double dropout = 0.0,
                        Rng* dropout_rng = nullptr);

}  // namespace dyind
