#include <catch2/catch_amalgamated.hpp>

#include "iml/forge/bundle.hpp"
#include "iml/train.hpp"

using namespace iml;
using namespace iml::forge;

namespace {

DatasetBundle tiny_bundle(uint64_t seed = 13, int vars = 40) {
  ForgeSpec s;
  s.source = "set_inclusion";
  s.seed = seed;
  s.set_inclusion.variable_count = vars;
  return build_bundle(s);
}

ModelConfig tiny_model_config(int vocab) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = vocab;
  c.max_context_length = 16;
  return c;
}

}  // namespace

TEST_CASE("exact_match trims whitespace and is case-sensitive") {
  CHECK(exact_match("Queen", {"Queen"}));
  CHECK(exact_match(" Queen ", {"Queen"}));
  CHECK_FALSE(exact_match("France", {"Italy", "Spain"}));
  CHECK_FALSE(exact_match("queen", {"Queen"}));
  CHECK(exact_match("Spain", {"Italy", "Spain"}));
}

TEST_CASE("two-stage run: determinism, stage structure, balanced-eval behavior") {
  auto bundle = tiny_bundle();
  Vocab vocab = build_set_inclusion_vocab(bundle);
  auto eval_sets = build_eval_sets(bundle);
  REQUIRE(eval_sets.size() == 4);  // D1, D2 val + D5, D6 test

  auto run_once = [&]() {
    auto model = init_model<float>(tiny_model_config(vocab.size()), 11);
    OptimConfig oc;  // adafactor defaults
    StageSpec s1{{SubsetId::d1_cons_qa1, SubsetId::d2_incons_qa2}, Stage::x1, "stage1", 3, 16,
                 mix_seed(11, 1), true};
    StageSpec s2{{SubsetId::d5_cons, SubsetId::d6_cons}, Stage::x2, "stage2", 2, 16,
                 mix_seed(11, 2), true};
    return run_two_stage(model, oc, bundle, vocab, s1, s2, eval_sets);
  };
  TwoStageResult a = run_once();
  TwoStageResult b = run_once();

  REQUIRE(a.stage1.rows.size() == b.stage1.rows.size());
  for (size_t i = 0; i < a.stage1.rows.size(); ++i) {
    CHECK(a.stage1.rows[i].value == b.stage1.rows[i].value);
    CHECK(a.stage1.rows[i].metric == b.stage1.rows[i].metric);
  }

  // stage 2 trains on definitions only: no QA train-loss rows
  for (const auto& r : a.stage2.rows) CHECK(r.metric != "train_loss_qa");
  bool saw_def_loss = false;
  for (const auto& r : a.stage2.rows)
    if (r.metric == "train_loss_def") saw_def_loss = true;
  CHECK(saw_def_loss);

  // after some training the model answers in the Yes/No alphabet, so the
  // balanced eval sets score near one half at this scale
  double d5 = -1;
  for (const auto& r : a.stage2.rows)
    if (r.epoch == 2 && r.subset == "D5cons" && r.metric == "em" && r.family == "membership")
      d5 = r.value;
  REQUIRE(d5 >= 0.0);
  CHECK(d5 >= 0.2);
  CHECK(d5 <= 0.8);

  // predictions captured for the final epoch of each stage
  CHECK(a.predictions.count("stage1_D1consQA1_membership") == 1);
  CHECK(a.predictions.count("stage2_D5cons_membership") == 1);
  const auto& preds = a.predictions.at("stage1_D1consQA1_membership");
  CHECK(preds.size() == 32);  // 16 X1-half vars in D1 x 2 val questions
}

TEST_CASE("a memorizing model re-scores its train questions at EM 1.0") {
  auto bundle = tiny_bundle(17, 10);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  ModelConfig mc = tiny_model_config(vocab.size());
  auto model = init_model<float>(mc, 3);
  OptimConfig oc{.kind = "adamw", .lr = 4e-3};
  Optimizer<float> opt(oc, model);
  auto docs = encode_stage_train_docs(bundle, vocab, 16, Stage::x1);
  StageSpec spec{{SubsetId::d1_cons_qa1, SubsetId::d2_incons_qa2}, Stage::x1, "stage1", 120, 16,
                 5, false};
  run_stage(model, opt, docs, spec, {}, vocab);

  // re-evaluate the training questions as eval prompts
  EvalSet train_qs;
  train_qs.subset = SubsetId::d1_cons_qa1;
  train_qs.family = "membership";
  for (const auto& d : bundle.docs) {
    if (d.is_definition() || d.split != Split::train) continue;
    auto qmark = d.text.find('?');
    REQUIRE(qmark != std::string::npos);
    train_qs.items.push_back(
        {d.text.substr(0, qmark + 1), {trim(d.text.substr(qmark + 1))}, d.entity_id});
  }
  double em = eval_subset(model, vocab, train_qs);
  CHECK(em == 1.0);
}

TEST_CASE("run_joint trains on the union of both stages") {
  auto bundle = tiny_bundle(19, 20);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  auto model = init_model<float>(tiny_model_config(vocab.size()), 7);
  OptimConfig oc;
  StageSpec spec{{}, Stage::x1, "joint", 2, 32, 9, true};
  auto res = run_joint(model, oc, bundle, vocab, spec, build_eval_sets(bundle));
  std::set<std::string> loss_subsets;
  for (const auto& r : res.stage1.rows) {
    CHECK(r.stage == "joint");
    if (r.metric == "train_loss_def") loss_subsets.insert(r.subset);
  }
  // definitions from both stages appear in the joint train stream
  CHECK(loss_subsets.count("D1consQA1") == 1);
  CHECK(loss_subsets.count("D5cons") == 1);
}

TEST_CASE("full-batch training takes one optimizer step per epoch") {
  auto bundle = tiny_bundle(23, 10);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  auto model = init_model<float>(tiny_model_config(vocab.size()), 29);
  OptimConfig oc;
  Optimizer<float> opt(oc, model);
  auto docs = encode_stage_train_docs(bundle, vocab, 16, Stage::x1);
  StageSpec spec{{}, Stage::x1, "full", 3, static_cast<int>(docs.size()), 2, false};
  run_stage(model, opt, docs, spec, {}, vocab);
  CHECK(opt.step_count() == 3);

  // smaller batches take ceil(N/B) steps per epoch
  auto model2 = init_model<float>(tiny_model_config(vocab.size()), 29);
  Optimizer<float> opt2(oc, model2);
  StageSpec spec2{{}, Stage::x1, "b16", 1, 16, 2, false};
  run_stage(model2, opt2, docs, spec2, {}, vocab);
  CHECK(opt2.step_count() == (static_cast<int64_t>(docs.size()) + 15) / 16);
}

TEST_CASE("batch_size_sweep converges and tags reports by size") {
  auto bundle = tiny_bundle(29, 10);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  ModelConfig mc = tiny_model_config(vocab.size());
  OptimConfig oc{.kind = "adamw", .lr = 4e-3};
  auto reports = batch_size_sweep<float>(mc, 31, oc, bundle, vocab, {16, 106}, {}, 37, 40);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].first == 16);
  CHECK(reports[1].first == 106);  // full batch: 8 X1 vars x 13 docs + 2 X2 defs
  for (const auto& [size, rep] : reports) {
    CHECK(!rep.rows.empty());
    for (const auto& r : rep.rows) CHECK(r.stage == "joint_bs" + std::to_string(size));
  }
}
