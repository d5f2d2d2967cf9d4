#include <gtest/gtest.h>

#include "protex/error.hpp"
#include "protex/faithfulness.hpp"
#include "protex/synthetic.hpp"
#include "protex/trainer.hpp"
#include "test_util.hpp"

using namespace protex;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

struct Planted {
  PlantedTask task;
  Model model;
};

const Planted& planted() {
  static const Planted p = [] {
    Planted p;
    PlantedSpec spec;
    spec.n_train = 80;
    spec.n_val = 20;
    spec.n_test = 20;
    spec.seed = 4;
    p.task = make_planted_task(spec);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.lr_base = 0.01;  // cosine logits need head weights well above 1 to get confident
    cfg.prototypes = 2;
    cfg.seed = 1;
    cfg.head_finetune_epochs = 10;
    p.model = train(p.task.data, init_model(cfg, p.task.data), cfg).model;
    return p;
  }();
  return p;
}

// Sentence-mode model with hand-set prototypes and head.
Model hand_model(const std::vector<std::vector<double>>& protos, const std::vector<int>& cls,
                 const std::vector<double>& weights) {
  Model m;
  m.dim = protos[0].size();
  m.classes = 2;
  m.protos.vecs = Mat(0, m.dim);
  for (const auto& p : protos) m.protos.vecs.append_row(std::span<const double>(p));
  m.protos.class_of = cls;
  m.protos.frozen.assign(protos.size(), 0);
  m.protos.display.assign(protos.size(), std::nullopt);
  m.head = Mat(2, protos.size(), 0.0);
  for (std::size_t j = 0; j < protos.size(); ++j) m.head(static_cast<std::size_t>(cls[j]), j) = weights[j];
  return m;
}

PatchedSplit split_of(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys) {
  PatchedSplit s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    PatchedExample e;
    e.label = ys[i];
    e.patches = Mat(0, xs[i].size());
    e.patches.append_row(std::span<const double>(xs[i]));
    s.examples.push_back(std::move(e));
    s.source.push_back(i);
  }
  return s;
}

}  // namespace

TEST(Rationales, ParseFormatAndValidate) {
  const auto rs = parse_rationales("{\"id\": \"b\", \"mask\": [0, 1]}\n\n{\"id\": \"a\", \"mask\": [true, false, false]}\n",
                                   "r.jsonl");
  ASSERT_EQ(rs.masks.size(), 2u);
  EXPECT_EQ(rs.masks.at("a"), (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(format_rationales(rs), "{\"id\":\"a\",\"mask\":[1,0,0]}\n{\"id\":\"b\",\"mask\":[0,1]}\n");
  EXPECT_EQ(format_rationales(parse_rationales(format_rationales(rs), "x")), format_rationales(rs));

  EXPECT_EQ(code_of([] { parse_rationales("{\"id\": \"a\", \"mask\": [2]}", "r"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_rationales("{\"id\": \"a\", \"mask\": [1]}\n{\"id\": \"a\", \"mask\": [0]}", "r"); }),
            ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_rationales("not json", "r"); }), ErrorCode::ParseError);

  const auto& ds = planted().task.data;
  RationaleSet bad;
  bad.masks["e0"] = {1};
  EXPECT_EQ(code_of([&] { bad.validate(ds); }), ErrorCode::MaskLengthMismatch);
  bad.masks.clear();
  bad.masks["nope"] = {1};
  EXPECT_EQ(code_of([&] { bad.validate(ds); }), ErrorCode::UnknownExample);
  bad.masks.clear();
  bad.masks["e0"] = std::vector<std::uint8_t>(ds.examples[0].tokens.size(), 0);
  EXPECT_EQ(code_of([&] { bad.validate(ds); }), ErrorCode::EmptyInput);
  EXPECT_NO_THROW(planted().task.rationales.validate(ds));
}

TEST(CompSuff, IdentityPerturbationsAreExactlyZero) {
  const auto& p = planted();
  const auto enc = p.task.encoder();
  RationaleSet all, none;
  for (const auto& ex : p.task.data.examples) {
    all.masks[ex.id] = std::vector<std::uint8_t>(ex.tokens.size(), 1);
    none.masks[ex.id] = std::vector<std::uint8_t>(ex.tokens.size(), 0);
  }
  const auto a = comp_suff(p.model, p.task.data, all, enc);
  EXPECT_EQ(a.suff_evaluated, p.task.data.examples.size());
  EXPECT_EQ(a.comp_evaluated, 0u);
  EXPECT_EQ(a.comp_skipped, p.task.data.examples.size());
  EXPECT_EQ(a.sufficiency, 0.0);
  const auto n = comp_suff(p.model, p.task.data, none, enc);
  EXPECT_EQ(n.comp_evaluated, p.task.data.examples.size());
  EXPECT_EQ(n.comprehensiveness, 0.0);
  EXPECT_EQ(n.suff_skipped, p.task.data.examples.size());
}

TEST(CompSuff, PlantedTokenCarriesThePrediction) {
  const auto& p = planted();
  const auto r = comp_suff(p.model, p.task.data, p.task.rationales, p.task.encoder());
  EXPECT_GT(r.comprehensiveness, 0.3);
  EXPECT_LT(r.sufficiency, 0.05);
  StoredOnlyProvider stored(p.task.data.dim);
  EXPECT_EQ(code_of([&] { comp_suff(p.model, p.task.data, p.task.rationales, stored); }),
            ErrorCode::ProviderCapability);
}

TEST(PrototypeRemoval, OnePerClassZeroesTheLogit) {
  const Model m = hand_model({{1, 1}, {1, -1}}, {0, 1}, {2.0, 3.0});
  const std::vector<double> sims{0.9, 0.2};
  const auto l0 = masked_logits(m, sims, 0);
  EXPECT_EQ(l0[0], 0.0);
  EXPECT_DOUBLE_EQ(l0[1], 0.6);
  const auto split = split_of({{2, 1}, {2, -1}, {1, 0.8}, {1, -0.5}}, {0, 1, 0, 1});
  const auto r = prototype_removal(m, split);
  EXPECT_EQ(r.acc_before, 1.0);
  EXPECT_EQ(r.acc_after, 0.0);  // positive cosine everywhere: the other class always wins
  EXPECT_EQ(r.removed, (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(PrototypeRemoval, ZeroWeightAndDuplicates) {
  const auto split = split_of({{2, 1}, {2, -1}, {1, 0.8}, {1, -0.5}}, {0, 1, 0, 1});
  // a zero-weight prototype is never the top explanation when a positive one exists; masking
  // it explicitly changes no logit
  const Model z = hand_model({{1, 1}, {1, -1}, {0, 1}}, {0, 1, 0}, {1.0, 1.0, 0.0});
  const std::vector<double> sims{0.5, 0.1, 0.7};
  const auto full = logits_from_sims(z, sims);
  EXPECT_EQ(masked_logits(z, sims, 2), full);

  const Model dup = hand_model({{1, 1}, {1, 1}, {1, -1}, {1, -1}}, {0, 0, 1, 1}, {1.0, 1.0, 1.0, 1.0});
  const auto r = prototype_removal(dup, split);
  EXPECT_EQ(r.acc_after, r.acc_before);

  const auto g = prototype_removal(dup, split, true);
  EXPECT_EQ(g.removed, std::vector<std::size_t>(4, 0));  // most frequent top, lowest index on ties
  const Model one = hand_model({{1, 1}}, {0}, {1.0});
  EXPECT_EQ(code_of([&] { prototype_removal(one, split); }), ErrorCode::InvalidState);
}

TEST(Faithfulness, ReportJson) {
  const auto& p = planted();
  const auto enc = p.task.encoder();
  const auto rep = evaluate_faithfulness(p.model, p.task.data, &p.task.rationales, &enc);
  const auto j = rep.to_json(true);
  EXPECT_TRUE(j.contains("prototype_removal"));
  EXPECT_EQ(j["prototype_removal"]["mode"], "per_example");
  EXPECT_EQ(j["comp_suff"]["details"].size(), p.task.data.examples.size());
  const auto no_cs = evaluate_faithfulness(p.model, p.task.data, nullptr, nullptr);
  EXPECT_FALSE(no_cs.comp_suff.has_value());
  const double b = no_cs.removal.acc_before, a = no_cs.removal.acc_after;
  EXPECT_TRUE(b >= 0 && b <= 1 && a >= 0 && a <= 1);
}
