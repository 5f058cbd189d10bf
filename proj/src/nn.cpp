#include "taclab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "taclab/errors.hpp"
#include "taclab/rng.hpp"

namespace taclab::nn {

namespace {

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rng.uniform(-bound, bound);
    }
  }
}

void append_flat(Eigen::VectorXd& out, std::int64_t& at, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[at++] = m(i, j);
  }
}

void take_flat(const Eigen::VectorXd& in, std::int64_t& at, Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in[at++];
  }
}

/// Squared-error-minimizing angular candidate among {du, du+1, du-1};
/// ties keep the earlier candidate in that order.
double best_u_delta(double du) {
  double best = du;
  if ((du + 1.0) * (du + 1.0) < best * best) best = du + 1.0;
  if ((du - 1.0) * (du - 1.0) < best * best) best = du - 1.0;
  return best;
}

/// Numerically stable BCE from a logit: max(z,0) - z*y + log(1 + e^-|z|).
double bce_from_logit(double z, bool label) {
  const double y = label ? 1.0 : 0.0;
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

struct Workspace {
  Eigen::MatrixXd window;       // T x ds
  Eigen::MatrixXd pre, feats;   // T x df
  Eigen::MatrixXd q, k, v;      // T x df
  Eigen::MatrixXd attn;         // T x T (logits, then softmax rows)
  Eigen::MatrixXd refined;      // T x df
  Eigen::RowVectorXd pooled;    // df

  // backward scratch
  Eigen::MatrixXd d_refined, d_feats, d_q, d_k, d_v, d_pre;
  Eigen::MatrixXd d_attn;

  void resize(int t, int ds, int df) {
    window.resize(t, ds);
    pre.resize(t, df);
    feats.resize(t, df);
    q.resize(t, df);
    k.resize(t, df);
    v.resize(t, df);
    attn.resize(t, t);
    refined.resize(t, df);
    pooled.resize(df);
    d_refined.resize(t, df);
    d_feats.resize(t, df);
    d_q.resize(t, df);
    d_k.resize(t, df);
    d_v.resize(t, df);
    d_pre.resize(t, df);
    d_attn.resize(t, t);
  }
};

struct Gradients {
  Eigen::MatrixXd enc_w;
  Eigen::RowVectorXd enc_b;
  Eigen::MatrixXd attn_wq, attn_wk, attn_wv;
  Eigen::MatrixXd pos_w;
  Eigen::RowVector2d pos_b;
  Eigen::VectorXd contact_w;
  double contact_b = 0.0;

  void resize_like(const ModelParams& p) {
    enc_w.resizeLike(p.enc_w);
    enc_b.resizeLike(p.enc_b);
    attn_wq.resizeLike(p.attn_wq);
    attn_wk.resizeLike(p.attn_wk);
    attn_wv.resizeLike(p.attn_wv);
    pos_w.resizeLike(p.pos_w);
    contact_w.resizeLike(p.contact_w);
    zero();
  }

  void zero() {
    enc_w.setZero();
    enc_b.setZero();
    attn_wq.setZero();
    attn_wk.setZero();
    attn_wv.setZero();
    pos_w.setZero();
    pos_b.setZero();
    contact_w.setZero();
    contact_b = 0.0;
  }

  Eigen::VectorXd flatten() const {
    ModelParams view;  // reuse the params flattening order
    view.enc_w = enc_w;
    view.enc_b = enc_b;
    view.attn_wq = attn_wq;
    view.attn_wk = attn_wk;
    view.attn_wv = attn_wv;
    view.pos_w = pos_w;
    view.pos_b = pos_b;
    view.contact_w = contact_w;
    view.contact_b = contact_b;
    return view.flatten();
  }
};

void forward_ws(const ModelParams& p, Workspace& ws, RawOutput& out) {
  const double inv_sqrt_df = 1.0 / std::sqrt(static_cast<double>(p.enc_w.cols()));
  ws.pre.noalias() = ws.window * p.enc_w;
  ws.pre.rowwise() += p.enc_b;
  ws.feats = ws.pre.cwiseMax(0.0);

  ws.q.noalias() = ws.feats * p.attn_wq;
  ws.k.noalias() = ws.feats * p.attn_wk;
  ws.v.noalias() = ws.feats * p.attn_wv;

  ws.attn.noalias() = ws.q * ws.k.transpose();
  ws.attn *= inv_sqrt_df;
  for (Eigen::Index t = 0; t < ws.attn.rows(); ++t) {
    auto row = ws.attn.row(t);
    const double zmax = row.maxCoeff();
    row = (row.array() - zmax).exp().matrix();
    row /= row.sum();
  }

  ws.refined.noalias() = ws.attn * ws.v;
  ws.refined += ws.feats;
  ws.pooled = ws.refined.colwise().mean();

  const Eigen::RowVector2d pos = ws.pooled * p.pos_w + p.pos_b;
  out.pos_u = pos[0];
  out.pos_v = pos[1];
  out.contact_logit = ws.pooled.dot(p.contact_w.transpose()) + p.contact_b;
}

/// Backprop one window given head gradients; accumulates into g.
void backward_ws(const ModelParams& p, Workspace& ws, const Eigen::RowVector2d& d_pos,
                 double d_logit, Gradients& g) {
  const double inv_sqrt_df = 1.0 / std::sqrt(static_cast<double>(p.enc_w.cols()));
  const auto t_len = ws.window.rows();

  // heads
  Eigen::RowVectorXd d_pooled = d_pos * p.pos_w.transpose();
  d_pooled += d_logit * p.contact_w.transpose();
  g.pos_w.noalias() += ws.pooled.transpose() * d_pos;
  g.pos_b += d_pos;
  g.contact_w.noalias() += d_logit * ws.pooled.transpose();
  g.contact_b += d_logit;

  // mean pooling spreads the gradient evenly over timesteps
  ws.d_refined = (d_pooled / static_cast<double>(t_len)).replicate(t_len, 1);

  // residual
  ws.d_feats = ws.d_refined;

  // attention
  ws.d_v.noalias() = ws.attn.transpose() * ws.d_refined;
  ws.d_attn.noalias() = ws.d_refined * ws.v.transpose();
  for (Eigen::Index t = 0; t < ws.d_attn.rows(); ++t) {
    const double dot = ws.d_attn.row(t).dot(ws.attn.row(t));
    ws.d_attn.row(t) =
        (ws.attn.row(t).array() * (ws.d_attn.row(t).array() - dot)).matrix();
  }
  ws.d_attn *= inv_sqrt_df;
  ws.d_q.noalias() = ws.d_attn * ws.k;
  ws.d_k.noalias() = ws.d_attn.transpose() * ws.q;

  g.attn_wq.noalias() += ws.feats.transpose() * ws.d_q;
  g.attn_wk.noalias() += ws.feats.transpose() * ws.d_k;
  g.attn_wv.noalias() += ws.feats.transpose() * ws.d_v;

  ws.d_feats.noalias() += ws.d_q * p.attn_wq.transpose();
  ws.d_feats.noalias() += ws.d_k * p.attn_wk.transpose();
  ws.d_feats.noalias() += ws.d_v * p.attn_wv.transpose();

  // encoder (ReLU subgradient 0 at the kink)
  ws.d_pre = (ws.pre.array() > 0.0).select(ws.d_feats, 0.0);
  g.enc_w.noalias() += ws.window.transpose() * ws.d_pre;
  g.enc_b += ws.d_pre.colwise().sum();
}

/// Combined loss and gradient over the index set. Returns the loss.
double batch_gradient(const ModelParams& params, const Dataset& set,
                      std::span<const std::size_t> indices, double alpha,
                      Workspace& ws, Gradients& grads) {
  std::int64_t n_pos = 0;
  for (std::size_t idx : indices) {
    const auto& s = set.samples[idx];
    if (s.positive && s.has_position) ++n_pos;
  }
  const double batch_n = static_cast<double>(indices.size());

  double loss_pos = 0.0, loss_con = 0.0;
  for (std::size_t idx : indices) {
    const auto& s = set.samples[idx];
    set.gather(idx, ws.window);
    RawOutput out;
    forward_ws(params, ws, out);

    Eigen::RowVector2d d_pos = Eigen::RowVector2d::Zero();
    if (s.positive && s.has_position) {
      const double du = best_u_delta(out.pos_u - s.u);
      const double dv = out.pos_v - s.v;
      loss_pos += 0.5 * (du * du + dv * dv);
      d_pos[0] = du / static_cast<double>(n_pos);
      d_pos[1] = dv / static_cast<double>(n_pos);
    }
    const double prob = sigmoid(out.contact_logit);
    loss_con += bce_from_logit(out.contact_logit, s.positive);
    const double d_logit = alpha * (prob - (s.positive ? 1.0 : 0.0)) / batch_n;

    backward_ws(params, ws, d_pos, d_logit, grads);
  }
  const double l_pos = n_pos > 0 ? loss_pos / static_cast<double>(n_pos) : 0.0;
  return l_pos + alpha * loss_con / batch_n;
}

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  std::int64_t t = 0;

  explicit Adam(double learning_rate, std::int64_t dim)
      : lr(learning_rate),
        m(Eigen::VectorXd::Zero(dim)),
        v(Eigen::VectorXd::Zero(dim)) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    theta -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (input_dim < 1 || window_len < 1 || feature_dim < 1) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (alpha < 0.0) throw ConfigError("model: alpha must be >= 0");
  if (learning_rate < 0.0) throw ConfigError("model: learning_rate must be >= 0");
  if (batch_size < 1 || epochs < 0) {
    throw ConfigError("model: batch_size must be >= 1 and epochs >= 0");
  }
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  ModelParams p;
  p.enc_w = Eigen::MatrixXd::Zero(config.input_dim, config.feature_dim);
  p.enc_b = Eigen::RowVectorXd::Zero(config.feature_dim);
  p.attn_wq = Eigen::MatrixXd::Zero(config.feature_dim, config.feature_dim);
  p.attn_wk = Eigen::MatrixXd::Zero(config.feature_dim, config.feature_dim);
  p.attn_wv = Eigen::MatrixXd::Zero(config.feature_dim, config.feature_dim);
  p.pos_w = Eigen::MatrixXd::Zero(config.feature_dim, 2);
  p.pos_b.setZero();
  p.contact_w = Eigen::VectorXd::Zero(config.feature_dim);
  p.contact_b = 0.0;
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config) {
  ModelParams p = zeros(config);
  Rng rng = Rng(config.seed).fork(0);
  fill_uniform(p.enc_w, 1.0 / std::sqrt(config.input_dim), rng);
  const double fb = 1.0 / std::sqrt(config.feature_dim);
  fill_uniform(p.attn_wq, fb, rng);
  fill_uniform(p.attn_wk, fb, rng);
  fill_uniform(p.attn_wv, fb, rng);
  fill_uniform(p.pos_w, fb, rng);
  Eigen::MatrixXd cw(config.feature_dim, 1);
  fill_uniform(cw, fb, rng);
  p.contact_w = cw.col(0);
  return p;
}

std::int64_t ModelParams::size() const {
  return enc_w.size() + enc_b.size() + attn_wq.size() + attn_wk.size() +
         attn_wv.size() + pos_w.size() + pos_b.size() + contact_w.size() + 1;
}

Eigen::VectorXd ModelParams::flatten() const {
  Eigen::VectorXd out(size());
  std::int64_t at = 0;
  append_flat(out, at, enc_w);
  append_flat(out, at, enc_b);
  append_flat(out, at, attn_wq);
  append_flat(out, at, attn_wk);
  append_flat(out, at, attn_wv);
  append_flat(out, at, pos_w);
  append_flat(out, at, pos_b);
  append_flat(out, at, contact_w);
  out[at++] = contact_b;
  return out;
}

void ModelParams::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != size()) throw ConfigError("params: flat vector size mismatch");
  std::int64_t at = 0;
  Eigen::MatrixXd tmp;
  take_flat(theta, at, enc_w);
  tmp = enc_b;
  take_flat(theta, at, tmp);
  enc_b = tmp;
  take_flat(theta, at, attn_wq);
  take_flat(theta, at, attn_wk);
  take_flat(theta, at, attn_wv);
  take_flat(theta, at, pos_w);
  tmp = pos_b;
  take_flat(theta, at, tmp);
  pos_b = tmp;
  tmp = contact_w;
  take_flat(theta, at, tmp);
  contact_w = tmp;
  contact_b = theta[at++];
}

void Dataset::gather(std::size_t i, Eigen::MatrixXd& out) const {
  const auto& s = samples[i];
  const int t_len = window_len;
  const int ch = static_cast<int>(frames->cols());
  out.resize(t_len, ch);
  const bool affine = shift.size() == ch && scale.size() == ch;
  const bool masked = channel_mask.size() == ch;
  for (int c = 0; c < ch; ++c) {
    const double sh = affine ? shift[c] : 0.0;
    const double sc = affine ? scale[c] : 1.0;
    const double mk = masked ? channel_mask[c] : 1.0;
    for (int r = 0; r < t_len; ++r) {
      out(r, c) = mk * ((*frames)(s.start + r, c) - sh) / sc;
    }
  }
}

Target Dataset::target(std::size_t i) const {
  const auto& s = samples[i];
  return Target{s.positive, s.has_position, s.u, s.v};
}

void Dataset::validate() const {
  if (frames == nullptr) throw ConfigError("dataset: no backing frame matrix");
  if (window_len < 1) throw ConfigError("dataset: window_len must be >= 1");
  for (const auto& s : samples) {
    if (s.start < 0 || s.start + window_len > frames->rows()) {
      throw ConfigError("dataset: window outside the backing stream");
    }
  }
}

Eigen::MatrixXd encode(const ModelParams& params, const Eigen::MatrixXd& window) {
  if (window.cols() != params.enc_w.rows()) {
    throw ConfigError("encode: window channel count does not match the encoder");
  }
  Eigen::MatrixXd pre = window * params.enc_w;
  pre.rowwise() += params.enc_b;
  return pre.cwiseMax(0.0);
}

Eigen::MatrixXd self_attention(const ModelParams& params, const Eigen::MatrixXd& feats) {
  const double inv_sqrt_df = 1.0 / std::sqrt(static_cast<double>(feats.cols()));
  const Eigen::MatrixXd q = feats * params.attn_wq;
  const Eigen::MatrixXd k = feats * params.attn_wk;
  const Eigen::MatrixXd v = feats * params.attn_wv;
  Eigen::MatrixXd attn = q * k.transpose() * inv_sqrt_df;
  for (Eigen::Index t = 0; t < attn.rows(); ++t) {
    auto row = attn.row(t);
    const double zmax = row.maxCoeff();
    row = (row.array() - zmax).exp().matrix();
    row /= row.sum();
  }
  return attn * v + feats;
}

RawOutput forward(const ModelParams& params, const Eigen::MatrixXd& window) {
  const Eigen::MatrixXd refined = self_attention(params, encode(params, window));
  const Eigen::RowVectorXd pooled = refined.colwise().mean();
  const Eigen::RowVector2d pos = pooled * params.pos_w + params.pos_b;
  RawOutput out;
  out.pos_u = pos[0];
  out.pos_v = pos[1];
  out.contact_logit = pooled.dot(params.contact_w.transpose()) + params.contact_b;
  return out;
}

Prediction predict(const ModelParams& params, const Eigen::MatrixXd& window) {
  const RawOutput raw = forward(params, window);
  Prediction p;
  p.position.u = wrap_unit(raw.pos_u);
  p.position.v = std::clamp(raw.pos_v, 0.0, 1.0);
  p.contact_prob = sigmoid(raw.contact_logit);
  return p;
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double positional_loss(std::span<const RawOutput> preds,
                       std::span<const Target> targets) {
  if (preds.size() != targets.size()) {
    throw ConfigError("positional_loss: prediction/target count mismatch");
  }
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& t = targets[i];
    if (!(t.contact && t.has_position)) continue;
    const double du = best_u_delta(preds[i].pos_u - t.u);
    const double dv = preds[i].pos_v - t.v;
    sum += 0.5 * (du * du + dv * dv);
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double contact_loss(std::span<const RawOutput> preds, std::span<const Target> targets) {
  if (preds.size() != targets.size()) {
    throw ConfigError("contact_loss: prediction/target count mismatch");
  }
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sum += bce_from_logit(preds[i].contact_logit, targets[i].contact);
  }
  return sum / static_cast<double>(preds.size());
}

double total_loss(std::span<const RawOutput> preds, std::span<const Target> targets,
                  double alpha) {
  return positional_loss(preds, targets) + alpha * contact_loss(preds, targets);
}

TrainResult train(const Dataset& train_set, const ModelConfig& config) {
  config.validate();
  train_set.validate();
  if (train_set.size() == 0) throw ConfigError("train: empty training set");
  if (train_set.frames->cols() != config.input_dim) {
    throw ConfigError("train: dataset channel count != config.input_dim");
  }
  if (train_set.window_len != config.window_len) {
    throw ConfigError("train: dataset window length != config.window_len");
  }

  TrainResult result;
  result.params = ModelParams::init(config);
  Eigen::VectorXd theta = result.params.flatten();
  Adam adam(config.learning_rate, theta.size());
  Rng shuffle_rng = Rng(config.seed).fork(1);

  Workspace ws;
  ws.resize(config.window_len, config.input_dim, config.feature_dim);
  Gradients grads;
  grads.resize_like(result.params);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t len = std::min<std::size_t>(config.batch_size,
                                                    order.size() - at);
      grads.zero();
      const double loss = batch_gradient(
          result.params, train_set, std::span(order).subspan(at, len), config.alpha,
          ws, grads);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch offset " + std::to_string(at));
      }
      adam.step(theta, grads.flatten());
      result.params.unflatten(theta);
      epoch_loss += loss * static_cast<double>(len);
      seen += len;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }
  return result;
}

double dataset_loss(const ModelParams& params, const Dataset& set, double alpha) {
  std::vector<RawOutput> preds(set.size());
  std::vector<Target> targets(set.size());
  Eigen::MatrixXd window;
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.gather(i, window);
    preds[i] = forward(params, window);
    targets[i] = set.target(i);
  }
  return total_loss(preds, targets, alpha);
}

Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double epsilon) {
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + epsilon;
    const double up = f(probe);
    probe[i] = x[i] - epsilon;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double gradient_check(const ModelParams& params, const Dataset& batch, double alpha,
                      double epsilon) {
  batch.validate();
  if (batch.size() == 0) throw ConfigError("gradient_check: empty batch");

  Workspace ws;
  ws.resize(batch.window_len, static_cast<int>(batch.frames->cols()),
            static_cast<int>(params.enc_w.cols()));
  Gradients grads;
  grads.resize_like(params);
  std::vector<std::size_t> indices(batch.size());
  std::iota(indices.begin(), indices.end(), 0);
  batch_gradient(params, batch, indices, alpha, ws, grads);
  const Eigen::VectorXd analytic = grads.flatten();

  ModelParams probe = params;
  const auto f = [&](const Eigen::VectorXd& theta) {
    probe.unflatten(theta);
    return dataset_loss(probe, batch, alpha);
  };
  const Eigen::VectorXd numeric =
      finite_difference_gradient(f, params.flatten(), epsilon);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max(std::abs(analytic[i]) + std::abs(numeric[i]), 1e-4);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace taclab::nn
