#pragma once

#include "lfsd/rng.hpp"
#include "lfsd/schedule.hpp"
#include "lfsd/types.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace lfsd {

enum class Activation { silu, tanh };

struct DenoiserConfig {
  int data_dim = 2;
  std::vector<int> hidden_dims{64, 64};
  int time_embed_dim = 16;
  int vocab_size = 2;
  int cond_embed_dim = 8;
  Activation activation = Activation::silu;

  int input_dim() const { return data_dim + time_embed_dim + cond_embed_dim; }

  void validate() const {
    auto positive = [](int v, const char* field) {
      if (v < 1) throw ConfigError(std::string("model.") + field + " must be >= 1");
    };
    positive(data_dim, "data_dim");
    positive(time_embed_dim, "time_embed_dim");
    positive(cond_embed_dim, "cond_embed_dim");
    if (hidden_dims.empty()) throw ConfigError("model.hidden_dims must not be empty");
    for (int h : hidden_dims) positive(h, "hidden_dims");
    if (vocab_size < 2)
      throw ConfigError("model.vocab_size must be >= 2 (null token plus one concept)");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

// Sinusoidal embedding of the position of a step within its schedule.
// The step is mapped onto a 1000-unit axis, frequencies are geometric in
// [1e-4, 1].
template <typename Scalar>
void time_embedding(Step step, int dim, Eigen::Ref<VectorX<Scalar>> out) {
  const Scalar position = Scalar(1000) * Scalar(step.index + 1) / Scalar(step.count);
  const int half = dim / 2;
  out.setZero();
  for (int k = 0; k < half; ++k) {
    const Scalar freq =
        half > 1 ? std::pow(Scalar(10), Scalar(-4) * Scalar(k) / Scalar(half - 1)) : Scalar(1);
    out[k] = std::sin(freq * position);
    out[half + k] = std::cos(freq * position);
  }
}

// Fully connected noise predictor eps(z_t, t, c(token)). All parameters live
// in one flat vector; layers and the token-embedding table are views into it.
template <typename Scalar>
class BasicDenoiser {
 public:
  using Vec = VectorX<Scalar>;
  using Mat = MatrixX<Scalar>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Vec>;
  using ConstVecMap = Eigen::Map<const Vec>;

  struct LayerShape {
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
    int rows;
    int cols;
  };

  // Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Mat> pre;   // pre-activations of hidden layers
    std::vector<Mat> post;  // post[0] = network input, post[l] = hidden output l
    std::vector<TokenId> tokens;
  };

  BasicDenoiser() = default;

  explicit BasicDenoiser(DenoiserConfig config) : config_(std::move(config)) {
    config_.validate();
    Eigen::Index offset = 0;
    int in = config_.input_dim();
    std::vector<int> outs = config_.hidden_dims;
    outs.push_back(config_.data_dim);
    for (int out : outs) {
      layers_.push_back({offset, offset + Eigen::Index(out) * in, out, in});
      offset += Eigen::Index(out) * in + out;
      in = out;
    }
    embedding_offset_ = offset;
    offset += Eigen::Index(config_.cond_embed_dim) * config_.vocab_size;
    params_ = Vec::Zero(offset);
  }

  const DenoiserConfig& config() const { return config_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  Eigen::Index embedding_offset() const { return embedding_offset_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  MatMap weight(std::size_t l) {
    const auto& s = layers_[l];
    return MatMap(params_.data() + s.weight_offset, s.rows, s.cols);
  }
  ConstMatMap weight(std::size_t l) const {
    const auto& s = layers_[l];
    return ConstMatMap(params_.data() + s.weight_offset, s.rows, s.cols);
  }
  VecMap bias(std::size_t l) {
    return VecMap(params_.data() + layers_[l].bias_offset, layers_[l].rows);
  }
  ConstVecMap bias(std::size_t l) const {
    return ConstVecMap(params_.data() + layers_[l].bias_offset, layers_[l].rows);
  }
  // cond_embed_dim x vocab_size; column k embeds token k.
  MatMap embedding() {
    return MatMap(params_.data() + embedding_offset_, config_.cond_embed_dim, config_.vocab_size);
  }
  ConstMatMap embedding() const {
    return ConstMatMap(params_.data() + embedding_offset_, config_.cond_embed_dim,
                       config_.vocab_size);
  }

  void check_token(TokenId token) const {
    if (token < 0 || token >= config_.vocab_size)
      throw TokenError("token " + std::to_string(token) + " outside vocabulary of size " +
                       std::to_string(config_.vocab_size));
  }

  // Batched forward pass. Column j of z is conditioned on steps[j] and
  // tokens[j].
  Mat forward(const Eigen::Ref<const Mat>& z, std::span<const Step> steps,
              std::span<const TokenId> tokens, Tape* tape = nullptr) const {
    const Eigen::Index n = z.cols();
    if (z.rows() != config_.data_dim)
      throw ShapeError("denoiser input has " + std::to_string(z.rows()) + " rows, expected " +
                       std::to_string(config_.data_dim));
    if (Eigen::Index(steps.size()) != n || Eigen::Index(tokens.size()) != n)
      throw ShapeError("denoiser: steps/tokens length differs from batch size");

    Mat x(config_.input_dim(), n);
    const int d = config_.data_dim;
    const int te = config_.time_embed_dim;
    const auto emb = embedding();
    Vec temb(te);
    Step cached{-1, 0};
    for (Eigen::Index j = 0; j < n; ++j) {
      check_token(tokens[j]);
      const Step s = steps[j];
      if (s.index < 0 || s.index >= s.count)
        throw IndexError("denoiser: step index " + std::to_string(s.index) + " outside [0, " +
                         std::to_string(s.count) + ")");
      if (s.index != cached.index || s.count != cached.count) {
        time_embedding<Scalar>(s, te, temb);
        cached = s;
      }
      x.col(j).head(d) = z.col(j);
      x.col(j).segment(d, te) = temb;
      x.col(j).tail(config_.cond_embed_dim) = emb.col(tokens[j]);
    }

    Mat h = std::move(x);
    if (tape) {
      tape->pre.clear();
      tape->post.clear();
      tape->tokens.assign(tokens.begin(), tokens.end());
    }
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      Mat a = weight(l) * h;
      a.colwise() += bias(l);
      if (tape) tape->post.push_back(std::move(h));
      h = activate(a);
      if (tape) tape->pre.push_back(std::move(a));
    }
    const std::size_t last = layers_.size() - 1;
    Mat out = weight(last) * h;
    out.colwise() += bias(last);
    if (tape) tape->post.push_back(std::move(h));
    return out;
  }

  Mat forward(const Eigen::Ref<const Mat>& z, Step step, TokenId token) const {
    const std::vector<Step> steps(z.cols(), step);
    const std::vector<TokenId> tokens(z.cols(), token);
    return forward(z, steps, tokens);
  }

  // Accumulates dLoss/dparams into `grad` given dLoss/doutput.
  void backward(const Tape& tape, const Eigen::Ref<const Mat>& d_out, Vec& grad) const {
    if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
    const std::size_t depth = layers_.size();
    Mat delta = d_out;
    for (std::size_t l = depth; l-- > 0;) {
      const auto& s = layers_[l];
      const Mat& input = tape.post[l];
      MatMap(grad.data() + s.weight_offset, s.rows, s.cols).noalias() += delta * input.transpose();
      VecMap(grad.data() + s.bias_offset, s.rows) += delta.rowwise().sum();
      Mat d_input = weight(l).transpose() * delta;
      if (l > 0) {
        delta = d_input.cwiseProduct(activate_derivative(tape.pre[l - 1]));
      } else {
        // Only the token-embedding slice of the input carries parameters.
        const int ce = config_.cond_embed_dim;
        MatMap g_emb(grad.data() + embedding_offset_, ce, config_.vocab_size);
        for (Eigen::Index j = 0; j < d_input.cols(); ++j)
          g_emb.col(tape.tokens[j]) += d_input.col(j).tail(ce);
      }
    }
  }

 private:
  Mat activate(const Mat& a) const {
    if (config_.activation == Activation::tanh) return a.array().tanh().matrix();
    return (a.array() / (Scalar(1) + (-a.array()).exp())).matrix();
  }

  Mat activate_derivative(const Mat& a) const {
    if (config_.activation == Activation::tanh) {
      auto t = a.array().tanh();
      return (Scalar(1) - t * t).matrix();
    }
    auto sig = Scalar(1) / (Scalar(1) + (-a.array()).exp());
    return (sig * (Scalar(1) + a.array() * (Scalar(1) - sig))).matrix();
  }

  DenoiserConfig config_;
  std::vector<LayerShape> layers_;
  Eigen::Index embedding_offset_ = 0;
  Vec params_;
};

using Denoiser = BasicDenoiser<double>;

// Variance-scaled normal weights (std 1/sqrt(fan_in)), zero biases, unit
// normal token embeddings.
template <typename Scalar = double>
BasicDenoiser<Scalar> init_denoiser(const DenoiserConfig& config, Rng& rng) {
  BasicDenoiser<Scalar> model(config);
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    auto w = model.weight(l);
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * Scalar(rng.normal());
  }
  auto emb = model.embedding();
  for (Eigen::Index j = 0; j < emb.cols(); ++j)
    for (Eigen::Index i = 0; i < emb.rows(); ++i) emb(i, j) = Scalar(rng.normal());
  return model;
}

template <typename Scalar>
VectorX<Scalar> predict_noise(const BasicDenoiser<Scalar>& model, const VectorX<Scalar>& z_t,
                              Step t, TokenId token) {
  return model.forward(z_t, t, token).col(0);
}

// Deep copy; used for the frozen teacher of a session.
template <typename Scalar>
BasicDenoiser<Scalar> snapshot(const BasicDenoiser<Scalar>& model) {
  return model;
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  VectorX<Scalar> grad;
};

// ||eps - model(z_t, t, token)||^2 with z_t = forward_noise(z0, t, eps).
template <typename Scalar>
LossAndGrad<Scalar> loss_dm(const BasicDenoiser<Scalar>& model, const VectorX<Scalar>& z0, int t,
                            TokenId token, const VectorX<Scalar>& eps,
                            const NoiseSchedule<Scalar>& sched) {
  const MatrixX<Scalar> z_t = forward_noise(z0, t, eps, sched);
  typename BasicDenoiser<Scalar>::Tape tape;
  const Step step[] = {sched.step(t)};
  const TokenId tok[] = {token};
  const MatrixX<Scalar> pred = model.forward(z_t, step, tok, &tape);
  const MatrixX<Scalar> diff = pred - eps;
  LossAndGrad<Scalar> out;
  out.loss = diff.squaredNorm();
  out.grad = VectorX<Scalar>::Zero(model.parameter_count());
  model.backward(tape, Scalar(2) * diff, out.grad);
  return out;
}

// ||teacher(z, tau, token) - student(z, tau, token)||^2; gradient w.r.t. the
// student only.
template <typename Scalar>
LossAndGrad<Scalar> loss_kd(const BasicDenoiser<Scalar>& student,
                            const BasicDenoiser<Scalar>& teacher, const VectorX<Scalar>& z_star,
                            Step tau, TokenId token) {
  if (!(student.config() == teacher.config()))
    throw ShapeError("loss_kd: student and teacher configurations differ");
  const MatrixX<Scalar> target = teacher.forward(z_star, tau, token);
  typename BasicDenoiser<Scalar>::Tape tape;
  const Step step[] = {tau};
  const TokenId tok[] = {token};
  const MatrixX<Scalar> pred = student.forward(z_star, step, tok, &tape);
  const MatrixX<Scalar> diff = pred - target;
  LossAndGrad<Scalar> out;
  out.loss = diff.squaredNorm();
  out.grad = VectorX<Scalar>::Zero(student.parameter_count());
  student.backward(tape, Scalar(2) * diff, out.grad);
  return out;
}

}  // namespace lfsd
