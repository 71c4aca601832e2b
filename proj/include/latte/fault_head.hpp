#pragma once

// Reference forward pass of the fault-localization attention head:
//   Q = ReLU(W_q h_n), K = ReLU(W_k H), P = softmax(Q K^T), l = argmax P
// where h_n is the hidden state of the script's final token.

#include "latte/raster.hpp"

#include <Eigen/Dense>

#include <string>

namespace latte {

struct AttentionHead {
  Eigen::MatrixXd query_weights;  // d_out x d_hidden
  Eigen::MatrixXd key_weights;    // d_out x d_hidden

  AttentionHead(Eigen::MatrixXd wq, Eigen::MatrixXd wk) : query_weights(std::move(wq)), key_weights(std::move(wk)) {
    if (query_weights.rows() != key_weights.rows() || query_weights.cols() != key_weights.cols()) {
      throw Error("attention head weights must share shape");
    }
  }

  Eigen::Index hidden_size() const { return query_weights.cols(); }
};

struct FaultScores {
  Eigen::VectorXd probabilities;  // one per token
  Eigen::Index index = 0;         // argmax, lowest index on ties
};

/// `hidden` holds one hidden-state row per token (n x d_hidden); the last
/// row is the query.
inline FaultScores fl_head_forward(const Eigen::MatrixXd& hidden, const AttentionHead& head) {
  if (hidden.rows() < 1) throw Error("fl_head_forward needs at least one hidden state");
  if (hidden.cols() != head.hidden_size()) {
    throw Error("hidden size " + std::to_string(hidden.cols()) + " does not match head (" +
                std::to_string(head.hidden_size()) + ")");
  }
  const Eigen::VectorXd q = (head.query_weights * hidden.row(hidden.rows() - 1).transpose()).cwiseMax(0.0);
  const Eigen::MatrixXd keys = (hidden * head.key_weights.transpose()).cwiseMax(0.0);  // n x d_out
  const Eigen::VectorXd logits = keys * q;

  FaultScores out;
  const double peak = logits.maxCoeff();
  out.probabilities = (logits.array() - peak).exp().matrix();
  out.probabilities /= out.probabilities.sum();
  // Softmax is monotone, so ranking the logits avoids rounding ties in P.
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[out.index]) out.index = i;
  }
  return out;
}

}  // namespace latte
