// Command-line front end for the radiograph batch pipeline.
//
//   chexkit ingest|prepare|train|eval|detect-eval|run --config pipeline.conf
//   chexkit make-fixtures --dir corpus
//
// Global flags override config file values; --set key=value accepts any
// config key.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <chexkit/chexkit.hpp>

namespace {

using chexkit::pipeline::PipelineConfig;

struct GlobalFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;
  int threads = 0;
};

PipelineConfig make_config(const GlobalFlags& flags) {
  PipelineConfig cfg;
  if (!flags.config_path.empty()) {
    cfg = chexkit::pipeline::load_config(flags.config_path);
  }
  for (const auto& assignment : flags.sets) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
      chexkit::fail(chexkit::errc::bad_config,
                    "--set expects key=value, got '" + assignment + "'");
    }
    auto strip = [](std::string s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
      return s;
    };
    chexkit::pipeline::set_config_value(cfg, strip(assignment.substr(0, eq)),
                                        strip(assignment.substr(eq + 1)));
  }
  if (flags.seed_given) cfg.seed = flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.threads > 0) cfg.threads = flags.threads;
  return cfg;
}

template <typename F>
void exec_stage(const char* stage, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    std::cerr << "error in stage " << stage << ": " << e.what() << "\n";
    std::exit(1);
  }
}

int run_fixtures(const std::string& dir, std::size_t n_images, std::uint64_t seed) {
  namespace fs = std::filesystem;
  chexkit::fixtures::CorpusSpec spec;
  spec.n_images = n_images;
  spec.seed = seed;
  const auto corpus = chexkit::fixtures::write_pipeline_corpus(dir, spec);

  chexkit::write_file_atomic(
      corpus.root / "reference_labels.csv",
      chexkit::labels::to_csv(chexkit::fixtures::reference_distribution_labels()));

  const std::string conf =
      "# generated demo configuration\n"
      "labels_csv = labels.csv\n"
      "images_dir = images\n"
      "boxes_csv = boxes_truth.csv\n"
      "features_csv = features.csv\n"
      "truth_boxes_csv = boxes_truth.csv\n"
      "pred_boxes_csv = boxes_pred.csv\n"
      "out_dir = out\n"
      "resize_to = 64\n"
      "hidden_dim = 32\n"
      "batch_size = 8\n"
      "epochs = 8\n"
      "lr0 = 0.01\n"
      "seed = 17\n";
  chexkit::write_file_atomic(corpus.root / "pipeline.conf", conf);

  std::cout << "wrote corpus with " << n_images << " images under "
            << fs::path(dir).string() << "\n"
            << "try: chexkit run --config " << (fs::path(dir) / "pipeline.conf").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"batch toolkit for smartphone-photographed chest radiographs"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "pipeline configuration file");
  app.add_option("--set", flags.sets, "override a config key (key=value, repeatable)");
  auto* seed_opt = app.add_option("--seed", flags.seed, "top-level random seed");
  app.add_option("--out", flags.out_dir, "output directory");
  app.add_option("--threads", flags.threads, "worker threads for image preparation");

  auto* cmd_ingest = app.add_subcommand("ingest", "parse labels, split, write distribution");
  auto* cmd_prepare = app.add_subcommand("prepare", "crop, normalize, resize (and augment) images");
  auto* cmd_train = app.add_subcommand("train", "train the classifier head on feature files");
  auto* cmd_eval = app.add_subcommand("eval", "tune thresholds on validation and report metrics");
  auto* cmd_detect = app.add_subcommand("detect-eval", "box agreement and average precision");
  auto* cmd_run = app.add_subcommand("run", "all configured stages in order");

  auto* cmd_fixtures = app.add_subcommand("make-fixtures", "write a synthetic demo corpus");
  std::string fixtures_dir = "corpus";
  std::size_t fixtures_images = 24;
  std::uint64_t fixtures_seed = 17;
  cmd_fixtures->add_option("--dir", fixtures_dir, "corpus output directory");
  cmd_fixtures->add_option("--images", fixtures_images, "number of synthetic images");
  cmd_fixtures->add_option("--fixture-seed", fixtures_seed, "corpus generation seed");

  CLI11_PARSE(app, argc, argv);
  flags.seed_given = seed_opt->count() > 0;

  if (*cmd_fixtures) {
    try {
      return run_fixtures(fixtures_dir, fixtures_images, fixtures_seed);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  PipelineConfig cfg;
  try {
    cfg = make_config(flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  chexkit::pipeline::Runner runner(cfg);

  if (*cmd_ingest) exec_stage("ingest", [&] { runner.ingest(); });
  if (*cmd_prepare) exec_stage("prepare", [&] { runner.prepare(); });
  if (*cmd_train) exec_stage("train", [&] { runner.train(); });
  if (*cmd_eval) exec_stage("eval", [&] { runner.eval(); });
  if (*cmd_detect) exec_stage("detect-eval", [&] { runner.detect_eval(); });
  if (*cmd_run) {
    const auto& c = runner.config();
    exec_stage("ingest", [&] { runner.ingest(); });
    if (!c.images_dir.empty() && !c.boxes_csv.empty()) {
      exec_stage("prepare", [&] { runner.prepare(); });
    }
    if (!c.features_csv.empty()) exec_stage("train", [&] { runner.train(); });
    if (!c.scores_csv.empty() || !c.features_csv.empty()) {
      exec_stage("eval", [&] { runner.eval(); });
    }
    if (!c.truth_boxes_csv.empty() && !c.pred_boxes_csv.empty()) {
      exec_stage("detect-eval", [&] { runner.detect_eval(); });
    }
  }
  exec_stage("manifest", [&] { runner.finish(); });
  return 0;
}
