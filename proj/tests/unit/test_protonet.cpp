#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "protex/checkpoint.hpp"
#include "protex/error.hpp"
#include "protex/protonet.hpp"
#include "test_util.hpp"

using namespace protex;

namespace {

double cosine_oracle(const std::vector<double>& a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Protonet, ForwardMatchesDenseComputation) {
  std::mt19937_64 g(21);
  for (SimKind sim : {SimKind::cosine, SimKind::neg_l2}) {
    const Model model = test::random_model(g, Mode::sentence, 5, 6, 3, sim);
    const auto x = test::random_vec(g, 5);
    PatchedExample ex;
    ex.patches = Mat(0, 5);
    ex.patches.append_row(std::span<const double>(x));
    const auto fr = forward(ex, model);

    // oracle: dense C x m product with the mask applied, then softmax
    const Mat mask = model.class_mask();
    std::vector<double> logits(3, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 6; ++j) {
        double s = 0;
        if (sim == SimKind::cosine) {
          s = cosine_oracle(x, model.protos.vecs.row(j));
        } else {
          for (std::size_t k = 0; k < 5; ++k) s += std::pow(x[k] - model.protos.vecs(j, k), 2);
          s = -std::sqrt(s);
        }
        logits[c] += mask(c, j) * model.head(c, j) * s;
      }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(fr.logits[c], logits[c], 1e-12);
      EXPECT_NEAR(fr.probs[c], std::exp(logits[c]) / z, 1e-12);
    }
  }
}

TEST(Protonet, WordModeTakesBestPatch) {
  std::mt19937_64 g(4);
  Model model = test::random_model(g, Mode::word, 3, 2, 2, SimKind::cosine);
  model.selector = SelectorConfig{SelectorKind::brute_force, 2, 0, 10, 1000};
  EmbeddedExample ex;
  ex.id = "w";
  ex.tokens = {"a", "b", "c", "d"};
  FMat toks(4, 3);
  std::normal_distribution<float> n;
  for (auto& v : toks.flat()) v = n(g);
  ex.token_vecs = toks;
  const auto fr = forward(ex, model);
  const auto patches = enumerate_patches(toks, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    double best = -2;
    for (const auto& p : patches) best = std::max(best, cosine_oracle(p.vec, model.protos.vecs.row(j)));
    EXPECT_DOUBLE_EQ(fr.sims[j], best);
  }
  const auto e = explain(ex, model, 4);
  ASSERT_EQ(e.items.size(), 1u);  // one prototype per class
  EXPECT_EQ(e.items[0].patch_tokens.size(), 2u);
}

TEST(Protonet, ExplainRanksPredictedClassByImportance) {
  std::mt19937_64 g(9);
  const Model model = test::random_model(g, Mode::sentence, 6, 12, 2, SimKind::cosine);
  EmbeddedExample ex;
  ex.id = "q";
  const auto x = test::random_vec(g, 6);
  ex.sentence_vec = std::vector<float>(x.begin(), x.end());
  const auto full = explain(ex, model, 100);
  ASSERT_EQ(full.items.size(), 6u);
  for (std::size_t i = 0; i < full.items.size(); ++i) {
    const auto& it = full.items[i];
    EXPECT_EQ(model.protos.class_of[it.prototype], full.predicted_class);
    EXPECT_NEAR(it.importance, it.similarity * it.head_weight, 1e-9);
    EXPECT_EQ(it.head_weight, model.head(static_cast<std::size_t>(full.predicted_class), it.prototype));
    if (i) EXPECT_GE(full.items[i - 1].importance, it.importance);
  }
  const auto top = explain(ex, model, 3);
  ASSERT_EQ(top.items.size(), 3u);
  EXPECT_EQ(top.items[0].prototype, full.items[0].prototype);
}

TEST(Protonet, FormatImportance) {
  EXPECT_EQ(format_importance(0.52, 8.07), "0.52·8.07 = 4.20");
  EXPECT_EQ(format_importance(1.0, 0.0), "1.00·0.00 = 0.00");
}

TEST(Protonet, HeadConstraintsAndStructuralEdits) {
  std::mt19937_64 g(2);
  Model model = test::random_model(g, Mode::sentence, 3, 4, 2, SimKind::cosine);
  model.head(0, 1) = 5.0;   // off-mask
  model.head(0, 0) = -1.0;  // negative
  model.enforce_head_constraints();
  EXPECT_EQ(model.head(0, 1), 0.0);
  EXPECT_EQ(model.head(0, 0), 0.0);

  const auto d0 = model.digest();
  const std::vector<double> v{1, 2, 3};
  const auto j = model.append_prototype(v, 1, 0.7, PrototypeDisplay{"x", "text"});
  EXPECT_EQ(j, 4u);
  EXPECT_EQ(model.head(1, 4), 0.7);
  EXPECT_EQ(model.head(0, 4), 0.0);
  EXPECT_NE(model.digest(), d0);
  model.remove_prototype(4);
  EXPECT_EQ(model.digest(), d0);
  EXPECT_NO_THROW(model.check_consistent());
  EXPECT_THROW(model.remove_prototype(10), Error);
}

TEST(Protonet, ProjectionMovesOntoNearestSameClassExample) {
  std::vector<std::vector<double>> xs{{1, 0}, {0.9, 0.1}, {0, 1}, {0.2, 1}};
  const Dataset ds = test::sentence_dataset(xs, {0, 0, 1, 1}, {Split::train, Split::train, Split::train, Split::train}, 2);
  Model model;
  model.dim = 2;
  model.classes = 2;
  model.protos.vecs = Mat(2, 2);
  model.protos.vecs(0, 0) = 0.8;  // closest overall is x1, and x1 is class 0
  model.protos.vecs(0, 1) = 0.2;
  model.protos.vecs(1, 0) = 0.9;  // class 1 prototype near class 0 data
  model.protos.vecs(1, 1) = 0.05;
  model.protos.class_of = {0, 1};
  model.protos.frozen = {0, 0};
  model.protos.display.assign(2, std::nullopt);
  model.head = Mat(2, 2, 0.0);
  model.head(0, 0) = model.head(1, 1) = 1.0;
  const std::vector<std::size_t> cand{0, 1, 2, 3};
  const auto rep = project(model, ds, cand);
  ASSERT_EQ(rep.entries.size(), 2u);
  EXPECT_EQ(rep.entries[0].source_id, "x1");
  EXPECT_EQ(rep.entries[1].source_id, "x3");  // must stay within class 1
  EXPECT_EQ(model.protos.vecs(1, 0), static_cast<double>(0.2f));
  EXPECT_NEAR(rep.entries[1].sim_after, 1.0, 1e-15);
  EXPECT_EQ(model.protos.display[1]->text, ds.examples[3].text);

  model.mode = Mode::word;
  EXPECT_THROW(project(model, ds, cand), Error);
}

TEST(Protonet, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 g(33);
  Model model = test::random_model(g, Mode::word, 7, 6, 3, SimKind::neg_l2);
  model.selector = SelectorConfig{SelectorKind::attention, 3, 1, 8, 500};
  model.protos.frozen[2] = 1;
  model.protos.display[1] = PrototypeDisplay{"id-1", "téxt with \"quotes\""};
  model.protos.vecs(0, 0) = -0.0;
  model.seed = 99;
  model.epoch = 17;
  const auto bytes = serialize_checkpoint(model);
  const Model back = parse_checkpoint(bytes);
  EXPECT_EQ(back, model);
  EXPECT_TRUE(std::signbit(back.protos.vecs(0, 0)));
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  test::TempDir dir;
  save_checkpoint(model, dir / "m.ptck");
  EXPECT_EQ(test::slurp(dir / "m.ptck"), bytes);
  EXPECT_EQ(load_checkpoint(dir / "m.ptck"), model);
}

TEST(Protonet, CheckpointRejectsCorruption) {
  std::mt19937_64 g(1);
  const auto bytes = serialize_checkpoint(test::random_model(g, Mode::sentence, 3, 2, 2, SimKind::cosine));
  auto code = [](std::string_view b) {
    try {
      parse_checkpoint(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  std::string bad = bytes;
  bad[0] ^= 1;
  EXPECT_EQ(code(bad), ErrorCode::MagicMismatch);
  EXPECT_NE(code(bytes.substr(0, bytes.size() - 1)), ErrorCode::IoError);
  EXPECT_NE(code(bytes + "x"), ErrorCode::IoError);
}
