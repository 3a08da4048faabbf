#include "doctest.h"

#include "lfsd/metrics.hpp"
#include "lfsd/sampler.hpp"
#include "lfsd/trainer.hpp"

#include <cmath>
#include <set>

using namespace lfsd;

namespace {

DenoiserConfig net(int vocab) {
  DenoiserConfig c;
  c.hidden_dims = {16, 16};
  c.time_embed_dim = 8;
  c.cond_embed_dim = 4;
  c.vocab_size = vocab;
  return c;
}

struct Fixture {
  std::vector<ConceptSpec> base;
  ConceptSpec novel;
  FewShotDataset fewshot;
  PromptSets prompts;
  Schedule train_sched = make_scaled_schedule(25, 1e-4, 0.02);
  Schedule distill_sched = make_scaled_schedule(25, 1e-4, 0.02);
  SessionState state;

  explicit Fixture(std::uint64_t seed) {
    for (int k = 0; k < 2; ++k) {
      ConceptSpec s;
      s.name = "b" + std::to_string(k);
      s.token = TokenId(k + 1);
      s.family = k == 0 ? Family::ring : Family::blobs;
      s.center = Vec2(k == 0 ? -2.0 : 2.0, 0.0);
      s.noise_std = 0.1;
      base.push_back(s);
    }
    novel = derive_session_concept(base[0], {Vec2(0.0, 2.0), 0.5}, 3, {1, 2});
    Rng rng(seed);
    fewshot = make_fewshot(novel, 5, rng);
    const std::vector<TokenId> vocab{1, 2};
    const std::vector<SessionConcept> sessions{{3, 1}};
    prompts = build_prompt_sets(1, vocab, sessions);
    state.model = init_denoiser(net(4), rng);
  }

  TrainConfig config(Distillation d, double lambda, int steps = 12) const {
    TrainConfig c;
    c.steps = steps;
    c.lambda = lambda;
    c.T_tau = distill_sched.steps;
    c.batch = 3;
    c.distillation = d;
    return c;
  }
};

// Independent plain fine-tuning loop with the trainer's stream layout.
Denoiser reference_finetune(const Fixture& f, const TrainConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Rng data_rng = rng.split();
  Denoiser model = f.state.model;
  AdamState<double> adam(model.parameter_count());
  const auto& prompts = f.prompts.session_prompts;
  for (int step = 0; step < config.steps; ++step) {
    Matrix z(2, config.batch), eps(2, config.batch);
    std::vector<Step> steps;
    std::vector<TokenId> tokens;
    for (int b = 0; b < config.batch; ++b) {
      const Vector z0 = f.fewshot.samples.col(data_rng.index(int(f.fewshot.samples.cols())));
      TokenId token = prompts[data_rng.index(int(prompts.size()))];
      if (data_rng.uniform() < config.cond_dropout) token = kNullToken;
      tokens.push_back(token);
      const int t = data_rng.index(f.train_sched.steps);
      steps.push_back(Step{t, f.train_sched.steps});
      eps.col(b) = data_rng.normal_vector(2);
      const double ab = f.train_sched.alpha_bars[t];
      z.col(b) = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps.col(b);
    }
    Denoiser::Tape tape;
    const Matrix diff = model.forward(z, steps, tokens, &tape) - eps;
    Vector grad = Vector::Zero(model.parameter_count());
    model.backward(tape, (2.0 / config.batch) * diff, grad);
    optimizer_step(model.params(), grad, adam, config.lr);
  }
  return model;
}

}  // namespace

TEST_CASE("zero lambda reproduces plain fine-tuning bit for bit") {
  const Fixture f(1);
  for (auto d : {Distillation::none, Distillation::data_free, Distillation::lwf}) {
    for (auto mode : {UpdateMode::per_outer, UpdateMode::per_tau}) {
      TrainConfig config = f.config(d, d == Distillation::none ? 1.0 : 0.0);
      config.update = mode;
      Rng rng(42);
      const SessionState next =
          train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, rng);
      CHECK(next.model.params() == reference_finetune(f, config, 42).params());
    }
  }
}

TEST_CASE("teacher is not modified by a session") {
  const Fixture f(2);
  const Vector before = f.state.model.params();
  for (auto d : {Distillation::data_free, Distillation::lwf}) {
    Rng rng(3);
    const SessionState next = train_session(f.state, f.fewshot, f.prompts, f.config(d, 1.0),
                                            f.train_sched, f.distill_sched, rng);
    CHECK(f.state.model.params() == before);
    CHECK(next.model.params() != before);
  }
}

TEST_CASE("distillation rollout uses T_tau predictions of each model per outer step") {
  const Fixture f(3);
  const int steps = 7;
  const int T_tau = f.distill_sched.steps;
  SUBCASE("one update per outer step") {
    Rng rng(4);
    SessionCounters counters;
    train_session(f.state, f.fewshot, f.prompts, f.config(Distillation::data_free, 1.0, steps),
                  f.train_sched, f.distill_sched, rng, 0, nullptr, &counters);
    CHECK(counters.teacher_predictions == long(steps) * T_tau);
    CHECK(counters.student_predictions == long(steps) * T_tau);
    CHECK(counters.optimizer_steps == steps);
  }
  SUBCASE("one update per distillation step") {
    TrainConfig config = f.config(Distillation::data_free, 1.0, steps);
    config.update = UpdateMode::per_tau;
    Rng rng(4);
    SessionCounters counters;
    train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, rng, 0,
                  nullptr, &counters);
    CHECK(counters.teacher_predictions == long(steps) * T_tau);
    CHECK(counters.student_predictions == long(steps) * T_tau);
    CHECK(counters.optimizer_steps == long(steps) * T_tau);
  }
  SUBCASE("student trajectory") {
    TrainConfig config = f.config(Distillation::data_free, 1.0, steps);
    config.trajectory = Trajectory::student;
    Rng rng(4);
    SessionCounters counters;
    train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, rng, 0,
                  nullptr, &counters);
    CHECK(counters.teacher_predictions == long(steps) * T_tau);
    CHECK(counters.student_predictions == long(steps) * T_tau);
  }
  SUBCASE("mismatched distillation schedule") {
    TrainConfig config = f.config(Distillation::data_free, 1.0, steps);
    config.T_tau = T_tau + 1;
    Rng rng(4);
    CHECK_THROWS_AS(train_session(f.state, f.fewshot, f.prompts, config, f.train_sched,
                                  f.distill_sched, rng),
                    ConfigError);
  }
}

TEST_CASE("first distillation loss is zero while student equals teacher") {
  const Fixture f(5);
  for (auto trajectory : {Trajectory::teacher, Trajectory::student}) {
    for (auto d : {Distillation::data_free, Distillation::lwf}) {
      TrainConfig config = f.config(d, 1.0, 3);
      config.trajectory = trajectory;
      Rng rng(6);
      LossTrace trace;
      train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, rng, 0,
                    &trace);
      REQUIRE(trace.size() == 3);
      CHECK(trace[0].l_kd == 0.0);
      CHECK(trace[1].l_kd > 0.0);
      CHECK(trace[0].l_train == trace[0].l_dm);
    }
  }
}

TEST_CASE("sessions are deterministic under a seed") {
  const Fixture f(7);
  Rng a(8), b(8);
  const auto config = f.config(Distillation::data_free, 1.0);
  const SessionState x = train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, a);
  const SessionState y = train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, b);
  CHECK(x.model.params() == y.model.params());
  CHECK(x.context_bank == y.context_bank);
}

TEST_CASE("vision context capture") {
  const Fixture f(9);
  Rng rng(10);
  const auto one = capture_vision_context(f.fewshot, 1, rng);
  REQUIRE(one.latents.cols() == 1);
  bool member = false;
  for (int k = 0; k < f.fewshot.K; ++k) member = member || one.latents.col(0) == f.fewshot.samples.col(k);
  CHECK(member);
  CHECK(one.token == f.novel.token);
  CHECK(capture_vision_context(f.fewshot, f.fewshot.K, rng).latents == f.fewshot.samples);
  CHECK(capture_vision_context(f.fewshot, 0, rng).latents == f.fewshot.samples);
  CHECK_THROWS_AS(capture_vision_context(f.fewshot, f.fewshot.K + 1, rng), ConfigError);
}

TEST_CASE("the bank gains one entry per session") {
  Fixture f(11);
  std::vector<SessionConcept> sessions;
  std::vector<ConceptSpec> concepts;
  std::set<TokenId> used{1, 2};
  for (int i = 0; i < 3; ++i) {
    const TokenId token = TokenId(3 + i);
    concepts.push_back(derive_session_concept(f.base[i % 2], {Vec2(0.0, 1.0 + i)}, token, used));
    used.insert(token);
    sessions.push_back({token, f.base[i % 2].token});
  }
  Rng init_rng(0);
  f.state.model = init_denoiser(net(6), init_rng);
  SessionState state = f.state;
  const std::vector<TokenId> vocab{1, 2};
  for (int i = 1; i <= 3; ++i) {
    Rng rng(100 + i);
    const FewShotDataset data = make_fewshot(concepts[i - 1], 4, rng);
    state = train_session(state, data, build_prompt_sets(i, vocab, sessions),
                          f.config(Distillation::data_free, 1.0, 3), f.train_sched, f.distill_sched,
                          rng, 2);
    CHECK(state.session_index == i);
    CHECK(state.context_bank.size() == std::size_t(i));
    CHECK(state.context_bank.find(concepts[i - 1].token)->latents.cols() == 2);
  }
}

TEST_CASE("invalid sessions fail loudly") {
  Fixture f(12);
  Rng rng(1);
  TrainConfig bad = f.config(Distillation::none, 1.0);
  bad.lambda = -1.0;
  CHECK_THROWS_AS(train_session(f.state, f.fewshot, f.prompts, bad, f.train_sched, f.distill_sched, rng),
                  ConfigError);
  PromptSets no_reg = f.prompts;
  no_reg.regularization_prompts.clear();
  CHECK_THROWS_AS(train_session(f.state, f.fewshot, no_reg, f.config(Distillation::lwf, 1.0),
                                f.train_sched, f.distill_sched, rng),
                  ConfigError);
  f.state.model.params()[0] = std::nan("");
  CHECK_THROWS_AS(train_session(f.state, f.fewshot, f.prompts, f.config(Distillation::none, 1.0),
                                f.train_sched, f.distill_sched, rng),
                  TrainingError);
}

TEST_CASE("divergent training raises a training error") {
  Fixture f(13);
  TrainConfig config = f.config(Distillation::none, 1.0, 200);
  config.lr = 1e200;
  Rng rng(2);
  CHECK_THROWS_AS(train_session(f.state, f.fewshot, f.prompts, config, f.train_sched, f.distill_sched, rng),
                  TrainingError);
}

TEST_CASE("a session improves alignment with its new concept") {
  // Averaged over five seeds on a briefly pretrained toy backbone.
  double before_sum = 0.0, after_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture f(seed);
    PretrainConfig pc;
    pc.steps = 600;
    pc.samples_per_concept = 500;
    pc.batch = 64;
    Rng rng(seed + 50);
    f.state.model = pretrain_base(pc, net(4), f.base, f.train_sched, rng);
    Rng ref_rng(seed + 60);
    const LatentSet reference = sample_concept(f.novel, 300, ref_rng);
    Rng s0(seed + 70), s1(seed + 70);
    before_sum += image_alignment(sample(f.state.model, 3, f.train_sched, 1.0, s0, 300), reference);
    Rng train_rng(seed + 80);
    const SessionState next = train_session(f.state, f.fewshot, f.prompts, f.config(Distillation::data_free, 1.0, 200),
                                            f.train_sched, f.distill_sched, train_rng);
    after_sum += image_alignment(sample(next.model, 3, f.train_sched, 1.0, s1, 300), reference);
  }
  CHECK(after_sum > before_sum);
}

TEST_CASE("pretraining is deterministic and records its loss") {
  const Fixture f(14);
  PretrainConfig pc;
  pc.steps = 20;
  pc.batch = 16;
  pc.samples_per_concept = 50;
  Rng a(1), b(1);
  LossTrace trace;
  const Denoiser x = pretrain_base(pc, net(4), f.base, f.train_sched, a, &trace);
  const Denoiser y = pretrain_base(pc, net(4), f.base, f.train_sched, b);
  CHECK(x.params() == y.params());
  CHECK(trace.size() == 20);
  pc.steps = 0;
  CHECK_THROWS_AS(pretrain_base(pc, net(4), f.base, f.train_sched, a), ConfigError);
}
