// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "protex/checkpoint.hpp"
#include "protex/faithfulness.hpp"
#include "protex/interaction.hpp"
#include "protex/synthetic.hpp"
#include "protex/trainer.hpp"
#include "support/grad_cases.hpp"

using namespace protex;

namespace {

struct Check {
  bool pass = true;
  std::ostringstream why;

  // Records a failed condition; returns it for chaining.
  bool expect(bool cond, const std::string& what) {
    if (!cond) {
      if (pass) why << what;
      pass = false;
    }
    return cond;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// ---------------------------------------------------------------- gradients

Check gradients(std::string& summary) {
  Check c;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0, ties = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto gc = testsupport::make_grad_case(seed);
    for (const auto& t : testsupport::check_grad_case(gc)) {
      worst = std::max(worst, t.report.max_rel_error);
      checked += t.report.checked;
      ties += t.report.excluded_ties;
      c.expect(t.report.passed && t.report.max_rel_error < 1e-4,
               "seed " + std::to_string(seed) + " term " + t.term + " rel " + num(t.report.max_rel_error) + " (" +
                   gc.describe + ")");
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + num(secs) + " s >= 60 s");
  summary = "100 configs, " + std::to_string(checked) + " coords, " + std::to_string(ties) +
            " tie coords excluded, max rel err " + num(worst, 3) + ", " + num(secs, 3) + " s";
  return c;
}

// ---------------------------------------------------------------- patches

std::set<std::vector<std::size_t>> bitmask_subsets(std::size_t l, std::size_t k) {
  std::set<std::vector<std::size_t>> out;
  for (std::uint32_t mask = 0; mask < (1u << l); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < l; ++i)
      if (mask & (1u << i)) s.push_back(i);
    out.insert(std::move(s));
  }
  return out;
}

FMat random_tokens(std::mt19937_64& g, std::size_t l, std::size_t d) {
  FMat m(l, d);
  std::normal_distribution<float> n;
  for (auto& v : m.flat()) v = n(g);
  return m;
}

Check patch_oracle(std::string& summary) {
  Check c;
  const auto t0 = Clock::now();
  std::mt19937_64 g(2024);
  std::size_t cases = 0;
  for (std::size_t l = 1; l <= 10; ++l) {
    const FMat toks = random_tokens(g, l, 5);
    for (std::size_t k = 1; k <= std::min<std::size_t>(3, l); ++k) {
      const auto oracle = bitmask_subsets(l, k);
      const auto brute = enumerate_patches(toks, k);
      std::set<std::vector<std::size_t>> got;
      for (const auto& p : brute) got.insert(p.token_indices);
      c.expect(brute.size() == oracle.size() && got == oracle,
               "brute force l=" + std::to_string(l) + " k=" + std::to_string(k));
      for (std::size_t dil = 0; dil <= 2; ++dil) {
        const std::size_t span = (k - 1) * (dil + 1) + 1;
        if (span > l) continue;
        const auto sl = sliding_patches(toks, k, dil);
        c.expect(sl.size() == l - span + 1, "sliding count l=" + std::to_string(l) + " k=" + std::to_string(k) +
                                                " dil=" + std::to_string(dil));
        for (const auto& p : sl) c.expect(oracle.count(p.token_indices) == 1, "sliding patch outside brute force");
        ++cases;
      }
      const SelectorConfig cfg{SelectorKind::attention, k, 0, 10, 1'000'000};
      const auto sel = attention_select(toks, cfg);
      const std::size_t n_w = std::min({std::size_t{10}, 2 * k, l});
      c.expect(sel.selected.size() == n_w, "attention n_w l=" + std::to_string(l) + " k=" + std::to_string(k));
      c.expect(sel.patches.size() == bitmask_subsets(n_w, k).size(),
               "attention count l=" + std::to_string(l) + " k=" + std::to_string(k));
      for (const auto& p : sel.patches) {
        c.expect(oracle.count(p.token_indices) == 1, "attention patch outside brute force");
        for (auto t : p.token_indices)
          c.expect(std::binary_search(sel.selected.begin(), sel.selected.end(), t), "attention patch uses unselected token");
      }
      ++cases;
    }
  }
  // k = 4, k_lim = 10 on a long input: n_w = 8, |Z| = C(8,4)
  const FMat long_toks = random_tokens(g, 14, 5);
  const auto sel = attention_select(long_toks, SelectorConfig{SelectorKind::attention, 4, 0, 10, 1'000'000});
  c.expect(sel.selected.size() == 8 && sel.patches.size() == 70,
           "k=4 pool gave n_w=" + std::to_string(sel.selected.size()) + " |Z|=" + std::to_string(sel.patches.size()));
  const double secs = seconds_since(t0);
  c.expect(secs < 10.0, "runtime " + num(secs) + " s >= 10 s");
  summary = std::to_string(cases) + " (l,k,dil) cases, |Z|=" + std::to_string(sel.patches.size()) + " for k=4, " +
            num(secs, 3) + " s";
  return c;
}

// ---------------------------------------------------------------- end-to-end

struct EndToEnd {
  ClusterSpec spec;
  Dataset ds;
  TrainConfig cfg;
  TrainResult result;
  double seconds = 0;
};

const EndToEnd& end_to_end() {
  static const EndToEnd e = [] {
    EndToEnd e;
    e.spec.seed = 42;
    e.ds = make_gaussian_clusters(e.spec);
    e.cfg.epochs = 100;
    e.cfg.prototypes = 4;
    e.cfg.seed = 42;
    const auto t0 = Clock::now();
    e.result = train(e.ds, init_model(e.cfg, e.ds), e.cfg);
    e.seconds = seconds_since(t0);
    return e;
  }();
  return e;
}

Check synthetic(std::string& summary) {
  Check c;
  const auto& e = end_to_end();
  const auto& rep = e.result.report;
  c.expect(rep.test_bacc >= 0.98, "test balanced accuracy " + num(rep.test_bacc) + " < 0.98");
  c.expect(e.seconds < 30.0, "training took " + num(e.seconds) + " s");
  const double pre = rep.pre_projection_test_bacc.value_or(-1.0);
  c.expect(rep.pre_projection_test_bacc.has_value(), "no pre-projection accuracy recorded");
  c.expect(pre - rep.test_bacc <= 0.02, "projection drop " + num(pre - rep.test_bacc));
  const auto cents = cluster_centroids(e.spec);
  double min_cos = 2.0;
  const auto& m = e.result.model;
  for (std::size_t j = 0; j < m.num_prototypes(); ++j) {
    const double cs = similarity(m.protos.vecs.row(j), cents[static_cast<std::size_t>(m.protos.class_of[j])],
                                 SimKind::cosine);
    min_cos = std::min(min_cos, cs);
  }
  c.expect(min_cos >= 0.9, "prototype-centroid cosine " + num(min_cos));
  summary = "test bacc " + num(rep.test_bacc) + " (pre-projection " + num(pre) + "), min centroid cosine " +
            num(min_cos) + ", " + num(e.seconds, 3) + " s";
  return c;
}

// ---------------------------------------------------------------- interaction

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

InteractionCommand command(nlohmann::json j) { return InteractionCommand::from_json(j); }

Check interaction(std::string& summary) {
  Check c;
  const auto& e = end_to_end();
  const Model& base = e.result.model;
  const auto test = prepare_dataset(e.ds, base.mode, e.cfg.selector).test;
  const double base_acc = evaluate(base, test);

  // first training example of each class
  auto first_of = [&](int cls) {
    for (auto i : e.ds.indices(Split::train))
      if (e.ds.examples[i].label == cls) return e.ds.examples[i].id;
    return std::string();
  };

  const std::size_t j = 1;
  const std::string other = first_of(1 - base.protos.class_of[j]);
  Model hard = base, soft1 = base, soft0 = base;
  apply(hard, command({{"op", "replace"}, {"target", j}, {"example_id", other}}), e.ds, e.cfg);
  apply(soft1, command({{"op", "soft_replace"}, {"target", j}, {"example_id", other}, {"certainty", 1.0}}), e.ds,
        e.cfg);
  c.expect(hard == soft1 && serialize_checkpoint(hard) == serialize_checkpoint(soft1),
           "soft_replace(c=1) differs from replace");
  apply(soft0, command({{"op", "soft_replace"}, {"target", j}, {"example_id", other}, {"certainty", 0.0}}), e.ds,
        e.cfg);
  c.expect(same_bits(soft0.protos.vecs.row(j), base.protos.vecs.row(j)), "soft_replace(c=0) moved the prototype");

  // certainty grid: similarity to the feedback never decreases in c
  std::size_t grid_points = 0;
  for (std::size_t p = 0; p < base.num_prototypes(); ++p) {
    const std::string ex_id = first_of(1 - base.protos.class_of[p]);
    const auto& tv = *e.ds.find(ex_id)->sentence_vec;
    const std::vector<double> target(tv.begin(), tv.end());
    double prev = -2.0;
    for (double cert : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      Model m = base;
      const auto out = apply(m, command({{"op", "soft_replace"}, {"target", p}, {"example_id", ex_id}, {"certainty", cert}}),
                             e.ds, e.cfg);
      const double s = similarity(target, m.protos.vecs.row(*out.prototype), m.sim);
      c.expect(s >= prev, "grid not monotone at prototype " + std::to_string(p) + " c=" + num(cert));
      prev = s;
      ++grid_points;
    }
  }

  // edits in the style of a user correcting one prototype with a same-class example
  double worst = 0.0;
  const std::string same = first_of(base.protos.class_of[0]);
  std::vector<nlohmann::json> edits{{{"op", "reinit"}, {"target", 0}}};
  for (double cert : {0.5, 0.9, 1.0})
    edits.push_back({{"op", "soft_replace"}, {"target", 0}, {"example_id", same}, {"certainty", cert}});
  for (const auto& ed : edits) {
    Model m = base;
    apply(m, command(ed), e.ds, e.cfg);
    const double acc = evaluate(m, test);
    worst = std::max(worst, std::abs(acc - base_acc));
    c.expect(std::abs(acc - base_acc) <= 0.02, "edit " + ed.dump() + " moved test bacc to " + num(acc));
  }
  summary = "replace == soft(1), soft(0) bit-identical, " + std::to_string(grid_points) +
            " grid points monotone, max edit drift " + num(worst, 3) + " from " + num(base_acc);
  return c;
}

// ---------------------------------------------------------------- explanations

Check explanations(std::string& summary) {
  Check c;
  const auto& e = end_to_end();
  const Model& m = e.result.model;
  const auto test = prepare_dataset(e.ds, m.mode, e.cfg.selector).test;
  double worst = 0.0;
  for (const auto& ex : test.examples) {
    const auto fw = forward(ex, m);
    const auto r = explain(ex, m, m.num_prototypes());
    for (std::size_t i = 0; i < r.items.size(); ++i) {
      const auto& it = r.items[i];
      const double expect = fw.sims[it.prototype] * m.head(static_cast<std::size_t>(r.predicted_class), it.prototype);
      worst = std::max(worst, std::abs(it.importance - expect));
      worst = std::max(worst, std::abs(it.importance - it.similarity * it.head_weight));
      if (i) c.expect(r.items[i - 1].importance >= it.importance, "ranking not non-increasing");
    }
  }
  c.expect(worst <= 1e-9, "importance error " + num(worst));
  const auto rendered = format_importance(0.52, 8.07);
  c.expect(rendered == "0.52·8.07 = 4.20", "rendered '" + rendered + "'");
  summary = "max |importance - sim*w| " + num(worst, 3) + " over " + std::to_string(test.examples.size()) +
            " examples, renders '" + rendered + "'";
  return c;
}

// ---------------------------------------------------------------- faithfulness

Check faithfulness(std::string& summary) {
  Check c;
  // planted-token task: the label is carried by one token
  PlantedSpec ps;
  ps.seed = 11;
  const auto task = make_planted_task(ps);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr_base = 0.01;  // bounded cosine logits: the head must grow past 1 for confident predictions
  cfg.prototypes = 2;
  cfg.seed = 11;
  cfg.head_finetune_epochs = 20;
  const auto planted = train(task.data, init_model(cfg, task.data), cfg).model;
  const auto enc = task.encoder();
  const auto cs = comp_suff(planted, task.data, task.rationales, enc);
  c.expect(cs.comprehensiveness > 0.3, "comprehensiveness " + num(cs.comprehensiveness));
  c.expect(cs.sufficiency < 0.05, "sufficiency " + num(cs.sufficiency));

  // identity perturbations
  RationaleSet all, none;
  for (const auto& ex : task.data.examples) {
    all.masks[ex.id] = std::vector<std::uint8_t>(ex.tokens.size(), 1);
    none.masks[ex.id] = std::vector<std::uint8_t>(ex.tokens.size(), 0);
  }
  const auto id_suff = comp_suff(planted, task.data, all, enc);
  const auto id_comp = comp_suff(planted, task.data, none, enc);
  c.expect(id_suff.suff_evaluated > 0 && id_suff.sufficiency == 0.0, "identity sufficiency " + num(id_suff.sufficiency));
  c.expect(id_comp.comp_evaluated > 0 && id_comp.comprehensiveness == 0.0,
           "identity comprehensiveness " + num(id_comp.comprehensiveness));

  // one prototype per class on clusters whose centroids have positive cosine
  ClusterSpec spec;
  spec.seed = 5;
  spec.centroids = {{6, 3, 0, 0, 0, 0, 0, 0}, {6, -3, 0, 0, 0, 0, 0, 0}};
  const auto ds = make_gaussian_clusters(spec);
  TrainConfig rcfg;
  rcfg.epochs = 40;
  rcfg.prototypes = 2;
  rcfg.seed = 5;
  const auto model = train(ds, init_model(rcfg, ds), rcfg).model;
  const auto test = prepare_dataset(ds, model.mode, rcfg.selector).test;
  const auto rem = prototype_removal(model, test);
  const double drop = rem.acc_before - rem.acc_after;
  c.expect(drop >= 0.20, "removal drop " + num(drop));
  summary = "comp " + num(cs.comprehensiveness) + ", suff " + num(cs.sufficiency) + ", removal " +
            num(rem.acc_before) + " -> " + num(rem.acc_after) + ", identity comp/suff " +
            num(id_comp.comprehensiveness) + "/" + num(id_suff.sufficiency);
  return c;
}

// ---------------------------------------------------------------- determinism & formats

Check determinism(std::string& summary) {
  Check c;
  ClusterSpec spec;
  spec.n_train = 120;
  spec.n_val = 30;
  spec.n_test = 30;
  spec.seed = 9;
  const auto ds = make_gaussian_clusters(spec);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.prototypes = 4;
  cfg.seed = 9;
  const auto a = train(ds, init_model(cfg, ds), cfg);
  const auto b = train(ds, init_model(cfg, ds), cfg);
  const auto ca = serialize_checkpoint(a.model), cb = serialize_checkpoint(b.model);
  c.expect(ca == cb, "checkpoints differ");
  c.expect(a.report.to_json().dump() == b.report.to_json().dump(), "reports differ");

  // checkpoint round trip
  const auto back = parse_checkpoint(ca);
  c.expect(back == a.model && serialize_checkpoint(back) == ca, "checkpoint round trip not bit-exact");

  // dataset round trips in both modes
  const auto dir = std::filesystem::temp_directory_path() / ("protex_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  write_dataset_dir(ds, dir / "sentence");
  c.expect(bit_equal(load_dataset_dir(dir / "sentence"), ds), "sentence dataset round trip");
  PlantedSpec ps;
  ps.mode = Mode::word;
  ps.n_train = 30;
  ps.n_val = ps.n_test = 10;
  const auto words = make_planted_task(ps).data;
  write_dataset_dir(words, dir / "word");
  c.expect(bit_equal(load_dataset_dir(dir / "word"), words), "word dataset round trip");
  std::filesystem::remove_all(dir);

  TrainConfig sched;
  sched.epochs = 200;
  const double lr5 = lr_at(5, sched);
  c.expect(lr5 == 0.0005, "lr_at(5) = " + num(lr5, 17));
  summary = "checkpoint " + a.model.digest().substr(0, 12) + " x2 identical, round trips bit-exact, lr_at(5)=" +
            num(lr5, 6);
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Check(std::string&)> run;
  };
  const Criterion criteria[] = {
      {"gradient-suite", gradients},
      {"patch-oracle", patch_oracle},
      {"synthetic-end-to-end", synthetic},
      {"interaction-semantics", interaction},
      {"explanation-arithmetic", explanations},
      {"faithfulness-harness", faithfulness},
      {"determinism-and-formats", determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    std::string summary;
    Check res;
    try {
      res = cr.run(summary);
    } catch (const std::exception& ex) {
      res.pass = false;
      res.why << "exception: " << ex.what();
    }
    if (!res.pass) ++failed;
    std::printf("%s %s: %s%s%s\n", res.pass ? "PASS" : "FAIL", cr.name, summary.c_str(),
                res.pass ? "" : " -- ", res.pass ? "" : res.why.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed ? 1 : 0;
}
