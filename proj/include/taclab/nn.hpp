#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "taclab/fbgsim.hpp"
#include "taclab/geometry.hpp"

namespace taclab::nn {

struct ModelConfig {
  int input_dim = 8;     // channels per timestep
  int window_len = 64;   // timesteps per window
  int feature_dim = 32;
  double alpha = 1.0;    // weight of the contact term in the combined loss
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 12;
  std::uint64_t seed = 1;

  void validate() const;
};

/// All trainable weights. Layout order here is also the flatten() and
/// checkpoint serialization order.
struct ModelParams {
  Eigen::MatrixXd enc_w;              // input_dim x feature_dim
  Eigen::RowVectorXd enc_b;           // feature_dim
  Eigen::MatrixXd attn_wq, attn_wk, attn_wv;  // feature_dim x feature_dim
  Eigen::MatrixXd pos_w;              // feature_dim x 2
  Eigen::RowVector2d pos_b;
  Eigen::VectorXd contact_w;          // feature_dim
  double contact_b = 0.0;

  static ModelParams zeros(const ModelConfig& config);
  /// Seeded uniform init in +/- 1/sqrt(fan_in); biases zero.
  static ModelParams init(const ModelConfig& config);

  std::int64_t size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
};

/// Raw head outputs before any wrapping/clamping (training operates here).
struct RawOutput {
  double pos_u = 0.0;
  double pos_v = 0.0;
  double contact_logit = 0.0;
};

/// Inference-time output: u wrapped mod 1, v clamped to [0, 1].
struct Prediction {
  NormalizedPoint position;
  double contact_prob = 0.5;
};

/// Per-window supervision. Windows without a position target (has_position
/// = false) contribute only to the contact term.
struct Target {
  bool contact = false;
  bool has_position = false;
  double u = 0.0;
  double v = 0.0;
};

/// Windows referencing a backing frame matrix; signals are normalized per
/// channel at gather time: x' = mask * (x - shift) / scale.
struct Dataset {
  struct Sample {
    std::int64_t start = 0;   // first frame of the window
    bool positive = false;
    bool has_position = false;
    double u = 0.0;
    double v = 0.0;
    std::int32_t group = -1;  // owning event / episode id
  };

  const FrameMatrix* frames = nullptr;
  Eigen::VectorXd shift, scale;  // per channel; empty = identity
  Eigen::VectorXd channel_mask;  // per channel 0/1; empty = all ones
  int window_len = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// Materialize window i as a (window_len x channels) matrix.
  void gather(std::size_t i, Eigen::MatrixXd& out) const;
  Target target(std::size_t i) const;
  void validate() const;
};

/// Per-timestep affine encoder with ReLU: F[t] = max(0, S[t] W_e + b_e).
Eigen::MatrixXd encode(const ModelParams& params, const Eigen::MatrixXd& window);

/// Single-head scaled dot-product self-attention with residual:
/// A = softmax(Q K^T / sqrt(dim_f)), out = A V + F.
Eigen::MatrixXd self_attention(const ModelParams& params, const Eigen::MatrixXd& feats);

/// Full forward pass: encoder, attention, mean-over-time pooling, heads.
RawOutput forward(const ModelParams& params, const Eigen::MatrixXd& window);

Prediction predict(const ModelParams& params, const Eigen::MatrixXd& window);

double sigmoid(double z);

/// Positional loss with wraparound on u. Per masked sample, the squared u
/// error is the best of the candidates {du, du+1, du-1}; v is plain squared
/// error; the two components are averaged, then the mean over samples is
/// returned. Empty mask -> 0.
double positional_loss(std::span<const RawOutput> preds,
                       std::span<const Target> targets);

/// Mean binary cross-entropy over all samples, computed from logits.
double contact_loss(std::span<const RawOutput> preds, std::span<const Target> targets);

/// Combined loss: positional_loss + alpha * contact_loss.
double total_loss(std::span<const RawOutput> preds, std::span<const Target> targets,
                  double alpha);

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;
};

/// Deterministic minibatch training with Adam. Throws NumericError when the
/// loss stops being finite.
TrainResult train(const Dataset& train_set, const ModelConfig& config);

/// Loss of `params` over every sample of `set` (the quantity train()
/// minimizes); used by evaluation and the finite-difference check.
double dataset_loss(const ModelParams& params, const Dataset& set, double alpha);

/// Central finite-difference gradient of an arbitrary scalar function.
Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double epsilon);

/// Max relative error between the analytic gradient of the combined loss
/// and a central finite difference, over all parameters.
double gradient_check(const ModelParams& params, const Dataset& batch, double alpha,
                      double epsilon);

}  // namespace taclab::nn
