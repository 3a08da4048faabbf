#include "lfsd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lfsd {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
  if (T_tau < 1) throw ConfigError("train.T_tau must be >= 1");
  if (!(cond_dropout >= 0.0 && cond_dropout < 1.0))
    throw ConfigError("train.cond_dropout must lie in [0, 1)");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
}

void PretrainConfig::validate() const {
  if (steps < 1) throw ConfigError("pretrain.steps must be >= 1");
  if (samples_per_concept < 1) throw ConfigError("pretrain.samples_per_concept must be >= 1");
  if (batch < 1) throw ConfigError("pretrain.batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (!(cond_dropout >= 0.0 && cond_dropout < 1.0))
    throw ConfigError("pretrain.cond_dropout must lie in [0, 1)");
}

namespace {

void require_finite(double loss, long step) {
  if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", step);
}

// A minibatch of noised few-shot samples for the diffusion loss.
struct DataBatch {
  Matrix z_t;
  Matrix eps;
  std::vector<Step> steps;
  std::vector<TokenId> tokens;
};

// Draw order per item (data stream): sample index, prompt, dropout coin,
// step, noise vector.
DataBatch draw_data_batch(const FewShotDataset& fewshot, std::span<const TokenId> prompts,
                          double cond_dropout, const Schedule& sched, int batch, Rng& rng) {
  const Eigen::Index d = fewshot.samples.rows();
  DataBatch out;
  Matrix z0(d, batch);
  out.eps.resize(d, batch);
  for (int b = 0; b < batch; ++b) {
    z0.col(b) = fewshot.samples.col(rng.index(int(fewshot.samples.cols())));
    TokenId token = prompts[rng.index(int(prompts.size()))];
    if (rng.uniform() < cond_dropout) token = kNullToken;
    out.tokens.push_back(token);
    out.steps.push_back(sched.step(rng.index(sched.steps)));
    out.eps.col(b) = rng.normal_vector(d);
  }
  out.z_t.resize(d, batch);
  for (int b = 0; b < batch; ++b)
    out.z_t.col(b) = forward_noise(z0.col(b), out.steps[b].index, out.eps.col(b), sched);
  return out;
}

class SessionTrainer {
 public:
  SessionTrainer(Denoiser& student, const Denoiser& teacher, const TrainConfig& config,
                 const Schedule& train_sched, const Schedule& distill_sched, LossTrace* trace,
                 SessionCounters* counters)
      : student_(student),
        teacher_(teacher),
        config_(config),
        train_sched_(train_sched),
        distill_sched_(distill_sched),
        adam_(student.parameter_count()),
        trace_(trace),
        counters_(counters) {}

  void plain_step(const DataBatch& data, long step) {
    Denoiser::Tape tape;
    const Matrix pred = student_.forward(data.z_t, data.steps, data.tokens, &tape);
    const Matrix diff = pred - data.eps;
    const double batch = double(data.z_t.cols());
    const double l_dm = diff.squaredNorm() / batch;
    require_finite(l_dm, step);
    Vector grad = Vector::Zero(student_.parameter_count());
    student_.backward(tape, (2.0 / batch) * diff, grad);
    apply(grad);
    count_student();
    record(step, l_dm, 0.0);
  }

  // Regularization on the current session's noised samples only.
  void lwf_step(const DataBatch& data, const std::vector<TokenId>& reg_tokens, long step) {
    const Eigen::Index n = data.z_t.cols();
    const Matrix target = teacher_.forward(data.z_t, data.steps, reg_tokens);
    count_teacher();
    Vector grad = Vector::Zero(student_.parameter_count());
    const double l_dm = add_diffusion_grad(data, 1.0, grad);
    Denoiser::Tape tape;
    const Matrix diff_kd = student_.forward(data.z_t, data.steps, reg_tokens, &tape) - target;
    count_student();
    const double l_kd = diff_kd.squaredNorm() / double(n);
    require_finite(l_dm + l_kd, step);
    student_.backward(tape, (2.0 * config_.lambda / double(n)) * diff_kd, grad);
    apply(grad);
    record(step, l_dm, l_kd);
  }

  // Data-free distillation along a teacher rollout that starts from the
  // noise used for the diffusion loss.
  void data_free_step(const DataBatch& data, const std::vector<TokenId>& reg_tokens, Rng& rng,
                      long step) {
    const Eigen::Index n = data.z_t.cols();
    const Eigen::Index d = data.z_t.rows();
    const bool per_tau = config_.update == UpdateMode::per_tau;
    const bool follow_student = config_.trajectory == Trajectory::student;
    Matrix z_teacher = data.eps;
    Matrix z_student = data.eps;

    // With one update per outer step the parameters are fixed across the
    // rollout, so the diffusion term is computed once and the distillation
    // terms are averaged.
    Vector grad_accum;
    double l_dm_first = 0.0;
    if (!per_tau) {
      grad_accum = Vector::Zero(student_.parameter_count());
      l_dm_first = add_diffusion_grad(data, 1.0, grad_accum);
      require_finite(l_dm_first, step);
    }

    double l_kd_sum = 0.0;
    const int T_tau = distill_sched_.steps;
    for (int tau = T_tau - 1; tau >= 0; --tau) {
      const std::vector<Step> tau_steps(n, distill_sched_.step(tau));
      const Matrix eps_teacher = teacher_.forward(z_teacher, tau_steps, reg_tokens);
      count_teacher();
      Denoiser::Tape tape;
      const Matrix eps_student =
          student_.forward(follow_student ? z_student : z_teacher, tau_steps, reg_tokens, &tape);
      count_student();

      Matrix noise;
      if (tau > 0) noise = rng.normal(d, n);
      const Matrix* noise_ptr = tau > 0 ? &noise : nullptr;
      Matrix next_teacher = ddpm_step(z_teacher, tau, eps_teacher, distill_sched_, noise_ptr);

      double l_kd = 0.0;
      Matrix d_kd;
      if (follow_student) {
        Matrix next_student = ddpm_step(z_student, tau, eps_student, distill_sched_, noise_ptr);
        const Matrix gap = next_student - next_teacher;
        l_kd = gap.squaredNorm() / double(n);
        d_kd = (2.0 * posterior_mean_eps_gain(tau, distill_sched_) / double(n)) * gap;
        z_student = std::move(next_student);
      } else {
        const Matrix diff_kd = eps_student - eps_teacher;
        l_kd = diff_kd.squaredNorm() / double(n);
        d_kd = (2.0 / double(n)) * diff_kd;
      }
      l_kd_sum += l_kd;

      if (per_tau) {
        Vector grad = Vector::Zero(student_.parameter_count());
        const double l_dm = add_diffusion_grad(data, 1.0, grad);
        require_finite(l_dm + l_kd, step);
        if (tau == T_tau - 1) l_dm_first = l_dm;
        student_.backward(tape, config_.lambda * d_kd, grad);
        apply(grad);
      } else {
        require_finite(l_kd, step);
        student_.backward(tape, (config_.lambda / double(T_tau)) * d_kd, grad_accum);
      }
      z_teacher = std::move(next_teacher);
    }
    if (!per_tau) apply(grad_accum);
    record(step, l_dm_first, l_kd_sum / double(T_tau));
  }

 private:
  // Adds scale * dL_DM/dparams to grad and returns L_DM.
  double add_diffusion_grad(const DataBatch& data, double scale, Vector& grad) {
    Denoiser::Tape tape;
    const Matrix diff = student_.forward(data.z_t, data.steps, data.tokens, &tape) - data.eps;
    const double batch = double(data.z_t.cols());
    student_.backward(tape, (2.0 * scale / batch) * diff, grad);
    return diff.squaredNorm() / batch;
  }

  void apply(const Vector& grad) {
    optimizer_step(student_.params(), grad, adam_, config_.lr);
    if (counters_) ++counters_->optimizer_steps;
  }
  void count_teacher() {
    if (counters_) ++counters_->teacher_predictions;
  }
  void count_student() {
    if (counters_) ++counters_->student_predictions;
  }
  void record(long step, double l_dm, double l_kd) {
    if (trace_) trace_->push_back({step, l_dm, l_kd, l_dm + config_.lambda * l_kd});
  }

  Denoiser& student_;
  const Denoiser& teacher_;
  const TrainConfig& config_;
  const Schedule& train_sched_;
  const Schedule& distill_sched_;
  AdamState<double> adam_;
  LossTrace* trace_;
  SessionCounters* counters_;
};

}  // namespace

Denoiser pretrain_base(const PretrainConfig& config, const DenoiserConfig& model_config,
                       std::span<const ConceptSpec> base_concepts, const Schedule& sched, Rng& rng,
                       LossTrace* trace) {
  config.validate();
  if (base_concepts.empty()) throw ConfigError("pretraining needs at least one base concept");
  Rng init_rng = rng.split();
  Rng data_rng = rng.split();
  Rng batch_rng = rng.split();

  Denoiser model = init_denoiser(model_config, init_rng);
  const int per = config.samples_per_concept;
  const int count = int(base_concepts.size());
  Matrix data(model_config.data_dim, Eigen::Index(per) * count);
  std::vector<TokenId> labels;
  for (int c = 0; c < count; ++c) {
    data.middleCols(Eigen::Index(c) * per, per) = sample_concept(base_concepts[c], per, data_rng);
    labels.insert(labels.end(), per, base_concepts[c].token);
  }

  AdamState<double> adam(model.parameter_count());
  const int B = config.batch;
  const Eigen::Index d = data.rows();
  for (long step = 0; step < config.steps; ++step) {
    Matrix z_t(d, B);
    Matrix eps = batch_rng.normal(d, B);
    std::vector<Step> steps(B);
    std::vector<TokenId> tokens(B);
    for (int b = 0; b < B; ++b) {
      const int i = batch_rng.index(int(data.cols()));
      steps[b] = sched.step(batch_rng.index(sched.steps));
      tokens[b] = batch_rng.uniform() < config.cond_dropout ? kNullToken : labels[i];
      z_t.col(b) = forward_noise(data.col(i), steps[b].index, eps.col(b), sched);
    }
    Denoiser::Tape tape;
    const Matrix diff = model.forward(z_t, steps, tokens, &tape) - eps;
    const double loss = diff.squaredNorm() / double(B);
    require_finite(loss, step);
    Vector grad = Vector::Zero(model.parameter_count());
    model.backward(tape, (2.0 / double(B)) * diff, grad);
    // Linear decay to 10% of the base rate over the run.
    const double lr = config.lr * (1.0 - 0.9 * double(step) / double(config.steps));
    optimizer_step(model.params(), grad, adam, lr);
    if (trace) trace->push_back({step, loss, 0.0, loss});
  }
  return model;
}

ContextBank::Entry capture_vision_context(const FewShotDataset& fewshot, int m, Rng& rng) {
  const int K = int(fewshot.samples.cols());
  if (K == 0) throw ConfigError("vision context needs a nonempty few-shot set");
  if (m == 0) m = K;
  if (m < 1 || m > K) throw ConfigError("context size m must lie in [1, K]");
  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  for (int i = K - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  order.resize(m);
  std::sort(order.begin(), order.end());
  LatentSet latents(fewshot.samples.rows(), m);
  for (int j = 0; j < m; ++j) latents.col(j) = fewshot.samples.col(order[j]);
  return {fewshot.spec.token, std::move(latents)};
}

SessionState train_session(const SessionState& state, const FewShotDataset& fewshot,
                           const PromptSets& prompts, const TrainConfig& config,
                           const Schedule& train_sched, const Schedule& distill_sched, Rng& rng,
                           int context_size, LossTrace* trace, SessionCounters* counters) {
  config.validate();
  if (fewshot.samples.cols() == 0) throw ConfigError("few-shot dataset is empty");
  if (prompts.session_prompts.empty()) throw ConfigError("session prompt set is empty");
  if (!state.model.params().allFinite())
    throw TrainingError("incoming model has non-finite parameters", 0);
  const bool distill = config.distillation != Distillation::none && config.lambda > 0.0;
  if (config.distillation != Distillation::none && config.lambda > 0.0 &&
      prompts.regularization_prompts.empty())
    throw ConfigError("distillation with lambda > 0 needs a nonempty regularization prompt set");
  if (config.distillation == Distillation::data_free && distill_sched.steps != config.T_tau)
    throw ConfigError("distillation schedule length differs from train.T_tau");

  Rng data_rng = rng.split();
  Rng distill_rng = rng.split();
  Rng context_rng = rng.split();

  const Denoiser teacher = snapshot(state.model);
  SessionState next;
  next.session_index = state.session_index + 1;
  next.model = snapshot(state.model);
  next.context_bank = state.context_bank;
  next.ia_history = state.ia_history;

  SessionTrainer trainer(next.model, teacher, config, train_sched, distill_sched, trace, counters);
  const auto& reg = prompts.regularization_prompts;
  for (long step = 0; step < config.steps; ++step) {
    const DataBatch data = draw_data_batch(fewshot, prompts.session_prompts, config.cond_dropout,
                                           train_sched, config.batch, data_rng);
    if (!distill) {
      trainer.plain_step(data, step);
      continue;
    }
    std::vector<TokenId> reg_tokens(config.batch);
    for (auto& token : reg_tokens) token = reg[distill_rng.index(int(reg.size()))];
    if (config.distillation == Distillation::lwf)
      trainer.lwf_step(data, reg_tokens, step);
    else
      trainer.data_free_step(data, reg_tokens, distill_rng, step);
  }

  auto entry = capture_vision_context(fewshot, context_size, context_rng);
  next.context_bank.add(next.session_index, entry.token, std::move(entry.latents));
  return next;
}

}  // namespace lfsd
