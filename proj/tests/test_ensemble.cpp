#include "l1box/ensemble.hpp"
#include "l1box/geometry.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace l1box;

namespace {

EnsembleConfig small_config() {
  EnsembleConfig cfg;
  cfg.ce_restarts = 2;
  cfg.ce_iters = 20;
  cfg.tdlr_restarts = 2;
  cfg.tdlr_iters = 20;
  cfg.square_queries = 200;
  cfg.seed = 3;
  return cfg;
}

struct Suite {
  LinearSoftmaxModel model;
  LabeledDataset data;
};

Suite trained_suite(std::size_t n, int classes, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset data = make_blobs(12, n, classes, 3.0, rng, 0.15);
  LinearSoftmaxModel model = LinearSoftmaxModel::random(12, classes, 0.1, rng);
  SgdConfig sgd;
  sgd.epochs = 30;
  train_plain(model, data, sgd, rng);
  return {model, data};
}

ExampleReport robust_example(std::size_t id) {
  ExampleReport r;
  r.example_id = id;
  r.clean_correct = true;
  r.robust = true;
  return r;
}

EvalReport report_of(std::vector<bool> robust) {
  EvalReport rep;
  for (std::size_t i = 0; i < robust.size(); ++i) {
    ExampleReport r = robust_example(i);
    r.robust = robust[i];
    if (!r.robust) r.stage_broken = Stage::Attack;
    rep.per_example.push_back(r);
  }
  finalize(rep);
  return rep;
}

}  // namespace

TEST(Slide, StepScalesWithRadius) {
  const SlideConfig cfg;
  EXPECT_NEAR(cfg.step_for(12.0), 3.06, 1e-12);
  EXPECT_NEAR(cfg.step_for(2000.0 / 255.0), 2.0, 1e-12);
  SlideConfig fixed;
  fixed.eta = 0.5;
  EXPECT_EQ(fixed.step_for(12.0), 0.5);
}

TEST(Slide, SingleCoordinateSteps) {
  Rng rng(1);
  const auto model = LinearSoftmaxModel::random(20, 3, 1.0, rng);
  const Vector x = fixtures::uniform_vector(20, 0.2, 0.8, rng);
  const int y = predict(model.logits(x));
  SlideConfig cfg;
  cfg.k = 1.0 / 20.0;
  cfg.eta = 0.05;
  cfg.n_iter = 1;
  Vector step;
  slide_attack(model, x, y, 1.0, cfg, rng, [&](int, const Vector& z, double) { step = z - x; });
  EXPECT_EQ(count_nonzero(step), 1);
  EXPECT_NEAR(step.lpNorm<1>(), 0.05, 1e-15);
}

TEST(Slide, FeasibleUnderBothProjections) {
  Rng rng(2);
  const auto model = LinearSoftmaxModel::random(50, 4, 1.0, rng);
  const Vector x = fixtures::uniform_vector(50, 0.0, 1.0, rng);
  const int y = predict(model.logits(x));
  const ThreatModel tm(x, 2.0);
  for (bool exact : {false, true}) {
    SlideConfig cfg;
    cfg.k = 0.1;
    cfg.n_iter = 40;
    cfg.exact_projection = exact;
    const auto r = slide_attack(model, x, y, 2.0, cfg, rng,
                                [&](int, const Vector& z, double) { EXPECT_TRUE(tm.contains(z, 1e-9)); });
    EXPECT_TRUE(tm.contains(r.x_adv, 1e-9));
    EXPECT_EQ(r.gradient_evals, 40);
    EXPECT_EQ(r.forward_evals, 1);
  }
}

TEST(RobustAccuracy, Fractions) {
  EXPECT_EQ(robust_accuracy(report_of({true, true})), 1.0);
  EXPECT_EQ(robust_accuracy(report_of({false, false, false})), 0.0);
  EXPECT_EQ(robust_accuracy(report_of({true, false, true, true})), 0.75);
  EXPECT_THROW(robust_accuracy(EvalReport{}), ParameterError);
}

TEST(WorstCaseMerge, SingleReportIsIdentity) {
  const EvalReport a = report_of({true, false, true});
  const EvalReport m = worst_case_merge({a});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(m.per_example[i].robust, a.per_example[i].robust);
  EXPECT_EQ(m.robust_accuracy, a.robust_accuracy);
}

TEST(WorstCaseMerge, BelowBothAndOrderFree) {
  const EvalReport a = report_of({true, false, true, true});
  const EvalReport b = report_of({true, true, false, true});
  const EvalReport c = report_of({false, true, true, true});
  const EvalReport ab = worst_case_merge({a, b});
  EXPECT_LE(ab.robust_accuracy, std::min(a.robust_accuracy, b.robust_accuracy));
  const EvalReport ba = worst_case_merge({b, a});
  const EvalReport left = worst_case_merge({worst_case_merge({a, b}), c});
  const EvalReport right = worst_case_merge({a, worst_case_merge({b, c})});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ab.per_example[i].robust, ba.per_example[i].robust);
    EXPECT_EQ(left.per_example[i].robust, right.per_example[i].robust);
  }
  EXPECT_EQ(left.robust_accuracy, 0.25);
}

TEST(WorstCaseMerge, RejectsMismatchedExamples) {
  EXPECT_THROW(worst_case_merge({report_of({true}), report_of({true, true})}), ParameterError);
  EvalReport shifted = report_of({true, true});
  shifted.per_example[1].example_id = 7;
  EXPECT_THROW(worst_case_merge({report_of({true, true}), shifted}), ParameterError);
  EXPECT_THROW(worst_case_merge({}), ParameterError);
}

TEST(InferImageShape, Layouts) {
  EXPECT_EQ(infer_image_shape(192).h, 8);
  EXPECT_EQ(infer_image_shape(192).c, 3);
  EXPECT_EQ(infer_image_shape(49).c, 1);
  EXPECT_EQ(infer_image_shape(10).h, 1);
  EXPECT_EQ(infer_image_shape(10).c, 10);
}

TEST(AutoAttack, MisclassifiedPointsSpendNothing) {
  const auto s = trained_suite(20, 3, 1);
  LabeledDataset flipped = s.data;
  for (std::size_t i = 0; i < flipped.size(); ++i)
    flipped.labels[i] = (predict(s.model.logits(flipped.inputs[i])) + 1) % 3;
  const EvalReport rep = autoattack(s.model, flipped, 1.0, small_config());
  EXPECT_EQ(rep.robust_accuracy, 0.0);
  EXPECT_EQ(rep.clean_accuracy, 0.0);
  for (const auto& e : rep.per_example) {
    EXPECT_EQ(e.stage_broken, Stage::Clean);
    for (const auto& b : e.budget) EXPECT_EQ(b.gradient_evals + b.forward_evals, 0);
  }
}

TEST(AutoAttack, TiedConstantModelHasNoRobustPoints) {
  const ConstantModel model(Vector::Constant(4, 1.0), 6);
  LabeledDataset data;
  for (int i = 0; i < 5; ++i) {
    data.inputs.push_back(Vector::Constant(6, 0.5));
    data.labels.push_back(i % 4);
  }
  const EvalReport rep = autoattack(model, data, 1.0, small_config());
  EXPECT_EQ(rep.robust_accuracy, 0.0);
}

TEST(AutoAttack, NotAboveAnyComponent) {
  const auto s = trained_suite(40, 4, 2);
  const EnsembleConfig cfg = small_config();
  const double eps = 1.5;
  const EvalReport aa = autoattack(s.model, s.data, eps, cfg);
  for (Stage st : {Stage::ApgdCe, Stage::ApgdTdlr, Stage::Square}) {
    const EvalReport comp = evaluate_component(s.model, s.data, eps, cfg, st);
    for (std::size_t i = 0; i < s.data.size(); ++i)
      if (!comp.per_example[i].robust) EXPECT_FALSE(aa.per_example[i].robust) << to_string(st) << " " << i;
    EXPECT_LE(aa.robust_accuracy, comp.robust_accuracy);
  }
  EXPECT_LE(aa.robust_accuracy, aa.clean_accuracy);
}

TEST(AutoAttack, BudgetLedgerAndShortCircuit) {
  const auto s = trained_suite(30, 4, 4);
  const EnsembleConfig cfg = small_config();
  const EvalReport aa = autoattack(s.model, s.data, 1.5, cfg);
  for (const auto& e : aa.per_example) {
    if (!e.clean_correct) continue;
    const auto& ce = e.budget[0];
    const auto& tdlr = e.budget[1];
    const auto& sq = e.budget[2];
    EXPECT_LE(ce.gradient_evals, cfg.ce_restarts * cfg.ce_iters);
    EXPECT_LE(tdlr.gradient_evals, cfg.tdlr_restarts * cfg.tdlr_iters);
    EXPECT_EQ(sq.gradient_evals, 0);
    EXPECT_LE(sq.forward_evals, cfg.square_queries);
    if (e.stage_broken == Stage::ApgdCe) EXPECT_EQ(tdlr.gradient_evals + tdlr.forward_evals + sq.forward_evals, 0);
    if (e.stage_broken == Stage::ApgdTdlr) EXPECT_EQ(sq.forward_evals, 0);
    if (e.robust) {
      EXPECT_EQ(ce.gradient_evals, cfg.ce_restarts * cfg.ce_iters);
      EXPECT_EQ(ce.forward_evals, cfg.ce_restarts * 3);
      EXPECT_EQ(tdlr.gradient_evals, cfg.tdlr_restarts * cfg.tdlr_iters);
      EXPECT_EQ(sq.forward_evals, cfg.square_queries);
    }
  }
}

TEST(AutoAttack, DeterministicAcrossThreadCounts) {
  const auto s = trained_suite(24, 4, 5);
  EnsembleConfig cfg = small_config();
  const EvalReport one = autoattack(s.model, s.data, 1.5, cfg);
  cfg.threads = 4;
  const EvalReport four = autoattack(s.model, s.data, 1.5, cfg);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    EXPECT_EQ(one.per_example[i].robust, four.per_example[i].robust);
    EXPECT_EQ(one.per_example[i].best_loss, four.per_example[i].best_loss);
  }
}

TEST(AutoAttack, RejectsEmptyDataset) {
  const ConstantModel model(Vector::Constant(3, 0.0), 4);
  EXPECT_THROW(autoattack(model, LabeledDataset{}, 1.0, small_config()), ParameterError);
}
