// protex-synth: write synthetic datasets in the on-disk format.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "protex/config.hpp"
#include "protex/error.hpp"
#include "protex/synthetic.hpp"

namespace fs = std::filesystem;
using namespace protex;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic datasets for smoke tests and demos"};
  app.require_subcommand(1);
  std::string out;

  ClusterSpec cs;
  auto* clusters = app.add_subcommand("clusters", "Gaussian blobs, sentence mode (no novel-text provider)");
  clusters->add_option("--out", out, "Output directory")->required();
  clusters->add_option("--dim", cs.dim);
  clusters->add_option("--classes", cs.classes);
  clusters->add_option("--n-train", cs.n_train);
  clusters->add_option("--n-val", cs.n_val);
  clusters->add_option("--n-test", cs.n_test);
  clusters->add_option("--radius", cs.radius);
  clusters->add_option("--noise", cs.noise);
  clusters->add_option("--seed", cs.seed);

  PlantedSpec ps;
  std::string mode = "sentence";
  auto* planted = app.add_subcommand("planted", "Token task keyed on one planted token, with toy provider + rationales");
  planted->add_option("--out", out, "Output directory")->required();
  planted->add_option("--mode", mode)->check(CLI::IsMember({"sentence", "word"}));
  planted->add_option("--dim", ps.dim);
  planted->add_option("--classes", ps.classes);
  planted->add_option("--n-train", ps.n_train);
  planted->add_option("--n-val", ps.n_val);
  planted->add_option("--n-test", ps.n_test);
  planted->add_option("--filler", ps.filler_len, "Filler tokens per example");
  planted->add_option("--vocab", ps.vocab);
  planted->add_option("--scale", ps.planted_scale, "Norm of the planted token vectors");
  planted->add_option("--seed", ps.seed);
  planted->add_option("--encoder-seed", ps.encoder_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out);
    if (*clusters) {
      const auto ds = make_gaussian_clusters(cs);
      write_dataset_dir(ds, out);
      std::cout << "wrote " << ds.examples.size() << " examples to " << out << "\n";
    } else {
      ps.mode = parse_mode(mode);
      const auto task = make_planted_task(ps);
      write_dataset_dir(task.data, out);
      ProviderSpec spec;
      spec.kind = ProviderKind::toy;
      spec.dim = ps.dim;
      spec.seed = ps.encoder_seed;
      spec.table = task.table;
      save_provider_spec(spec, out);
      save_rationales(task.rationales, fs::path(out) / "rationales.jsonl");
      std::cout << "wrote " << task.data.examples.size() << " examples, provider.json and rationales.jsonl to "
                << out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
