// protex: train, evaluate, explain and edit prototype classifiers.

#include <pthread.h>
#include <signal.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "protex/checkpoint.hpp"
#include "protex/config.hpp"
#include "protex/error.hpp"
#include "protex/faithfulness.hpp"
#include "protex/gateway/http_provider.hpp"
#include "protex/gateway/server.hpp"
#include "protex/gateway/session.hpp"
#include "protex/interaction.hpp"
#include "protex/trainer.hpp"

namespace fs = std::filesystem;
using namespace protex;

namespace {

struct Options {
  std::string data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> sim;
  std::optional<std::string> selector;
  std::optional<std::size_t> k, dilation, k_lim;
  std::optional<std::size_t> prototypes;
  std::optional<std::size_t> epochs;
  std::string checkpoint;
  std::string report;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string split = "test";
  std::optional<std::string> id;
  std::optional<std::string> text;
  std::size_t top = 4;
  std::string op;
  std::optional<std::size_t> proto;
  std::optional<std::string> example_id;
  std::optional<double> certainty;
  double prune_threshold = 0.8;
  std::optional<int> cls;
  std::string out;
  std::string rationales;
  bool global = false;
  bool details = false;
};

fs::path data_dir(const Options& o) {
  if (o.data.empty()) throw Error(ErrorCode::ConfigInvalid, "--data is required");
  return fs::path(o.data);
}

Dataset load_data(const Options& o) {
  auto ds = load_dataset_dir(data_dir(o));
  if (o.mode && parse_mode(*o.mode) != ds.mode)
    throw Error(ErrorCode::ModeMismatch,
                "--mode " + *o.mode + " but " + o.data + " holds " + std::string(to_string(ds.mode)) + " embeddings");
  return ds;
}

TrainConfig load_train_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.sim) cfg.sim = parse_sim_kind(*o.sim);
  if (o.selector) cfg.selector.kind = parse_selector_kind(*o.selector);
  if (o.k) cfg.selector.k = *o.k;
  if (o.dilation) cfg.selector.dilation = *o.dilation;
  if (o.k_lim) cfg.selector.k_lim = *o.k_lim;
  if (o.prototypes) cfg.prototypes = *o.prototypes;
  if (o.epochs) cfg.epochs = *o.epochs;
  cfg.validate();
  return cfg;
}

fs::path checkpoint_path(const Options& o) {
  return o.checkpoint.empty() ? data_dir(o) / "model.ptck" : fs::path(o.checkpoint);
}

std::unique_ptr<EmbeddingProvider> load_provider(const Options& o, std::size_t dim) {
  return gateway::make_gateway_provider(load_provider_spec(data_dir(o), dim));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const PatchedSplit& pick_split(const PatchedData& pd, const std::string& name) {
  switch (parse_split(name)) {
    case Split::train: return pd.train;
    case Split::val: return pd.val;
    case Split::test: return pd.test;
  }
  return pd.test;
}

int cmd_train(const Options& o) {
  const auto ds = load_data(o);
  const auto cfg = load_train_config(o);
  const auto res = train(ds, init_model(cfg, ds), cfg);
  const auto ck = checkpoint_path(o);
  save_checkpoint(res.model, ck);
  const fs::path rp = o.report.empty() ? fs::path(ck.string() + ".report.json") : fs::path(o.report);
  std::ofstream(rp, std::ios::binary) << res.report.to_json().dump(2) << "\n";
  std::cout << "epochs " << cfg.epochs << ", prototypes " << res.model.num_prototypes() << ", seed " << cfg.seed
            << "\n";
  if (res.report.joint_best_val_bacc)
    std::cout << "joint phase best epoch " << *res.report.joint_best_epoch << ", val bacc "
              << fmt("%.4f", *res.report.joint_best_val_bacc) << ", test bacc before projection "
              << fmt("%.4f", res.report.pre_projection_test_bacc.value_or(0.0)) << "\n";
  std::cout << "best epoch " << res.report.best_epoch << ", val bacc " << fmt("%.4f", res.report.best_val_bacc)
            << ", test bacc " << fmt("%.4f", res.report.test_bacc) << (res.report.diverged ? " (diverged)" : "")
            << "\n";
  std::cout << "checkpoint " << ck.string() << "\nreport " << rp.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto ds = load_data(o);
  const auto model = load_checkpoint(checkpoint_path(o));
  const auto pd = prepare_dataset(ds, model.mode, model.selector);
  const double b = evaluate(model, pick_split(pd, o.split));
  std::cout << "balanced accuracy (" << o.split << "): " << fmt("%.4f", b) << "\n";
  return 0;
}

int cmd_explain(const Options& o) {
  const auto ds = load_data(o);
  const auto model = load_checkpoint(checkpoint_path(o));
  std::optional<EmbeddedExample> query;
  const EmbeddedExample* ex = nullptr;
  if (o.id) {
    ex = ds.find(*o.id);
    if (!ex) throw Error(ErrorCode::UnknownExample, "no example with id '" + *o.id + "'");
  } else if (o.text) {
    const auto provider = load_provider(o, ds.dim);
    if (!provider->supports_novel_text())
      throw Error(ErrorCode::ProviderCapability, "explaining raw text needs a provider.json with novel-text support");
    query = embed_example("query", 0, split_whitespace(*o.text), model.mode, *provider);
    ex = &*query;
  } else {
    throw Error(ErrorCode::ConfigInvalid, "explain needs --id or --text");
  }
  const auto r = explain(*ex, model, o.top);
  std::cout << "query " << (query ? std::string("<text>") : ex->id) << ": " << ex->text << "\n";
  std::cout << "predicted class " << r.predicted_class << " (p = "
            << fmt("%.4f", r.probs[static_cast<std::size_t>(r.predicted_class)]) << ")";
  if (!query) std::cout << ", label " << ex->label;
  std::cout << "\n\n";
  // the middle dot is two bytes in UTF-8, hence the manual padding
  const auto pad = [](const std::string& s) { return static_cast<int>(s.size() < 26 ? 26 - s.size() : 0); };
  const std::string head = "importance = sim·weight";
  std::printf("%-5s %-6s %s%*s %s\n", "rank", "proto", head.c_str(), pad(head), "", "prototype");
  for (std::size_t i = 0; i < r.items.size(); ++i) {
    const auto& it = r.items[i];
    std::string shown = it.display.empty() ? "(no display text)" : it.display;
    if (!it.patch_tokens.empty()) {
      shown += "  [matched:";
      for (auto t : it.patch_tokens) shown += " " + ex->tokens[t];
      shown += "]";
    }
    const auto imp = format_importance(it.similarity, it.head_weight);
    std::printf("%-5zu %-6zu %s%*s %s\n", i + 1, it.prototype, imp.c_str(), pad(imp), "", shown.c_str());
  }
  return 0;
}

int cmd_interact(const Options& o) {
  const auto ds = load_data(o);
  const auto ck = checkpoint_path(o);
  auto model = load_checkpoint(ck);
  auto cfg = load_train_config(o);
  InteractionCommand cmd;
  cmd.op = parse_interaction_op(o.op);
  cmd.target = o.proto;
  cmd.example_id = o.example_id;
  cmd.text = o.text;
  cmd.certainty = o.certainty;
  cmd.prune_threshold = o.prune_threshold;
  cmd.cls = o.cls;
  const auto provider = load_provider(o, ds.dim);
  const auto outcome = apply(model, cmd, ds, cfg, provider.get());
  std::cout << "op " << to_string(cmd.op) << ": " << (outcome.accepted ? "accepted" : "rejected") << " ("
            << outcome.message << ")\n";
  std::cout << "balanced accuracy (val) before " << fmt("%.4f", outcome.acc_before) << ", after "
            << fmt("%.4f", outcome.acc_after) << "\n";
  std::cout << "digest " << outcome.digest_before << " -> " << outcome.digest_after << "\n";
  if (outcome.prototype && *outcome.prototype < model.num_prototypes()) {
    const auto& d = model.protos.display[*outcome.prototype];
    std::cout << "prototype " << *outcome.prototype << " (class " << model.protos.class_of[*outcome.prototype]
              << "): " << (d ? d->text : std::string("(no display text)")) << "\n";
  }
  if (outcome.accepted) {
    const fs::path out = o.out.empty() ? ck : fs::path(o.out);
    save_checkpoint(model, out);
    std::cout << "checkpoint " << out.string() << "\n";
  }
  return 0;
}

int cmd_faithfulness(const Options& o) {
  const auto ds = load_data(o);
  const auto model = load_checkpoint(checkpoint_path(o));
  const fs::path rpath = o.rationales.empty() ? data_dir(o) / "rationales.jsonl" : fs::path(o.rationales);
  std::optional<RationaleSet> rs;
  if (!o.rationales.empty() || fs::exists(rpath)) rs = load_rationales(rpath);
  const auto provider = load_provider(o, ds.dim);
  const auto rep = evaluate_faithfulness(model, ds, rs ? &*rs : nullptr, provider.get(), o.global);
  std::cout << "prototype removal (" << (o.global ? "global" : "per example")
            << "): balanced accuracy before " << fmt("%.4f", rep.removal.acc_before) << ", after "
            << fmt("%.4f", rep.removal.acc_after) << "\n";
  if (rep.comp_suff) {
    const auto& c = *rep.comp_suff;
    std::cout << "comprehensiveness " << fmt("%.4f", c.comprehensiveness) << " (" << c.comp_evaluated
              << " evaluated, " << c.comp_skipped << " skipped)\n";
    std::cout << "sufficiency       " << fmt("%.4f", c.sufficiency) << " (" << c.suff_evaluated << " evaluated, "
              << c.suff_skipped << " skipped)\n";
  } else {
    std::cout << "comprehensiveness/sufficiency: no rationales given\n";
  }
  if (!o.out.empty()) std::ofstream(o.out, std::ios::binary) << rep.to_json(o.details).dump(2) << "\n";
  return 0;
}

int cmd_serve(const Options& o) {
  // block termination signals before any thread starts; main waits for them
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  auto ds = load_data(o);
  auto cfg = load_train_config(o);
  auto provider = load_provider(o, ds.dim);
  std::optional<Model> model;
  if (!o.checkpoint.empty() || fs::exists(checkpoint_path(o))) model = load_checkpoint(checkpoint_path(o));
  std::optional<RationaleSet> rs;
  if (const auto rp = data_dir(o) / "rationales.jsonl"; fs::exists(rp)) rs = load_rationales(rp);
  gateway::Session session(std::move(ds), cfg, std::move(provider), std::move(model), std::move(rs));
  gateway::Server server(session);
  const int port = server.bind(o.host, o.port);
  server.start();
  std::cout << "listening on http://" << o.host << ":" << port << "/v1" << std::endl;
  int sig = 0;
  sigwait(&sigs, &sig);
  std::cout << "shutting down" << std::endl;
  server.stop();
  return 0;
}

int cmd_export(const Options& o) {
  const auto model = load_checkpoint(checkpoint_path(o));
  auto j = gateway::prototypes_json(model);
  for (std::size_t i = 0; i < model.num_prototypes(); ++i) {
    const auto row = model.protos.vecs.row(i);
    j["prototypes"][i]["vector"] = std::vector<double>(row.begin(), row.end());
  }
  if (o.out.empty()) std::cout << j.dump(2) << "\n";
  else std::ofstream(o.out, std::ios::binary) << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable prototype classifiers over frozen embeddings"};
  app.fallthrough();
  app.require_subcommand(1);
  Options o;

  app.add_option("--data", o.data, "Dataset directory (dataset.jsonl, embeddings.bin[, offsets.idx])");
  app.add_option("--config", o.config, "Training config file (key = value)");
  app.add_option("--seed", o.seed, "Random seed");
  app.add_option("--mode", o.mode, "Expected dataset mode")->check(CLI::IsMember({"sentence", "word"}));
  app.add_option("--sim", o.sim, "Similarity")->check(CLI::IsMember({"cosine", "l2"}));
  app.add_option("--selector", o.selector, "Word patch selector")
      ->check(CLI::IsMember({"sliding", "attention", "brute"}));
  app.add_option("--k", o.k, "Patch length");
  app.add_option("--dilation", o.dilation, "Sliding-window dilation");
  app.add_option("--k-lim", o.k_lim, "Attention token limit");
  app.add_option("--port", o.port, "HTTP port (serve)");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <data>/model.ptck)");

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + report");
  train->add_option("--epochs", o.epochs, "Epochs");
  train->add_option("--prototypes", o.prototypes, "Number of prototypes m");
  train->add_option("--report", o.report, "Report path (default <checkpoint>.report.json)");

  auto* eval = app.add_subcommand("eval", "Print balanced accuracy");
  eval->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* expl = app.add_subcommand("explain", "Rank the predicted class's prototypes for one input");
  expl->add_option("--id", o.id, "Stored example id");
  expl->add_option("--text", o.text, "Raw text (needs a novel-text provider)");
  expl->add_option("--top", o.top, "Rows to print");

  auto* inter = app.add_subcommand("interact", "Apply one interaction command to a checkpoint");
  inter->add_option("--op", o.op, "remove|add|replace|reinit|finetune|prune|soft_replace")->required();
  inter->add_option("--proto", o.proto, "Target prototype id");
  inter->add_option("--example-id", o.example_id, "Payload: stored example");
  inter->add_option("--text", o.text, "Payload: raw text");
  inter->add_option("--certainty", o.certainty, "Certainty for soft_replace, in [0,1]");
  inter->add_option("--prune-threshold", o.prune_threshold, "Minimum cosine to accept a pruned prototype");
  inter->add_option("--class", o.cls, "Class of an added prototype");
  inter->add_option("--out", o.out, "Output checkpoint (default: overwrite --checkpoint)");

  auto* faith = app.add_subcommand("faithfulness", "Comprehensiveness/sufficiency and prototype removal");
  faith->add_option("--rationales", o.rationales, "rationales.jsonl (default <data>/rationales.jsonl)");
  faith->add_flag("--global", o.global, "Delete the most frequent top prototype for all examples");
  faith->add_flag("--details", o.details, "Include per-example rows in --out");
  faith->add_option("--out", o.out, "Write the JSON report here");

  auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
  serve->add_option("--host", o.host, "Bind address");

  auto* exp = app.add_subcommand("export-prototypes", "Dump prototypes as JSON");
  exp->add_option("--out", o.out, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*expl) return cmd_explain(o);
    if (*inter) return cmd_interact(o);
    if (*faith) return cmd_faithfulness(o);
    if (*serve) return cmd_serve(o);
    if (*exp) return cmd_export(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
