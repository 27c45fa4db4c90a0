#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include <chexkit/fixtures.hpp>
#include <chexkit/pipeline.hpp>

#include "support.hpp"

using chexkit::errc;
using testsupport::error_code_of;
using testsupport::error_message_of;
using testsupport::TempDir;
namespace pipeline = chexkit::pipeline;
namespace labels = chexkit::labels;
namespace metrics = chexkit::metrics;
namespace head = chexkit::head;
namespace image = chexkit::image;
namespace fixtures = chexkit::fixtures;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  REQUIRE(out.good());
}

// Small corpus + config so an end-to-end run stays well under a second.
pipeline::PipelineConfig corpus_config(const fixtures::CorpusPaths& corpus,
                                       const fs::path& out_dir) {
  pipeline::PipelineConfig cfg;
  cfg.labels_csv = corpus.labels_csv.string();
  cfg.images_dir = corpus.images_dir.string();
  cfg.boxes_csv = corpus.truth_boxes_csv.string();
  cfg.features_csv = corpus.features_csv.string();
  cfg.truth_boxes_csv = corpus.truth_boxes_csv.string();
  cfg.pred_boxes_csv = corpus.predicted_boxes_csv.string();
  cfg.out_dir = out_dir.string();
  cfg.seed = 5;
  cfg.resize_to = 32;
  cfg.train.hidden_dim = 16;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 8;
  cfg.train.lr0 = 0.01;
  return cfg;
}

}  // namespace

TEST_CASE("config text parses with comments, spacing, and later duplicates") {
  const std::string text =
      "# run settings\n"
      "\n"
      "seed = 9\n"
      "resize_to=48\n"
      "  p_rotate =  0.25  # trailing comment\n"
      "schedule = cosine\n"
      "threshold_mode = fixed\n"
      "fixed_threshold = 0.4\n"
      "rotation_min_degrees = -5\n"
      "rotation_max_degrees = 5\n"
      "group_by_patient = true\n"
      "labels_csv = data/labels.csv\n"
      "seed = 11\n";
  const auto cfg = pipeline::parse_config(text, "/base");

  CHECK(cfg.seed == 11);  // the later assignment wins
  CHECK(cfg.resize_to == 48);
  CHECK(cfg.augment.p_rotate == 0.25);
  CHECK(cfg.train.schedule == head::Schedule::cosine);
  CHECK(cfg.threshold_mode == metrics::ThresholdMode::fixed);
  CHECK(cfg.fixed_threshold == 0.4);
  CHECK(cfg.augment.rotation_lo_deg == -5.0);
  CHECK(cfg.augment.rotation_hi_deg == 5.0);
  CHECK(cfg.group_by_patient);
  CHECK(cfg.base_dir == fs::path("/base"));
  CHECK(cfg.resolve(cfg.labels_csv) == fs::path("/base/data/labels.csv"));
  CHECK(cfg.resolve("/abs/labels.csv") == fs::path("/abs/labels.csv"));
}

TEST_CASE("config text rejects malformed input") {
  auto parse = [](const std::string& text) {
    return [text] { pipeline::parse_config(text, "."); };
  };

  SECTION("unknown key names the line") {
    CHECK(error_code_of(parse("seed = 1\nbogus_key = 3\n")) == errc::bad_config);
    const auto msg = error_message_of(parse("seed = 1\nbogus_key = 3\n"));
    CHECK(msg.find("unknown config key 'bogus_key'") != std::string::npos);
    CHECK(msg.find("(line 2)") != std::string::npos);
  }
  SECTION("missing equals sign") {
    const auto msg = error_message_of(parse("seed 9\n"));
    CHECK(msg.find("expected key=value on line 1") != std::string::npos);
  }
  SECTION("empty key") {
    CHECK(error_code_of(parse("= 9\n")) == errc::bad_config);
  }
  SECTION("bad boolean") {
    const auto msg = error_message_of(parse("augment_train = maybe\n"));
    CHECK(msg.find("true/false on line 1") != std::string::npos);
  }
  SECTION("bad number") {
    CHECK(error_code_of(parse("lr0 = fast\n")) == errc::bad_config);
    CHECK(error_code_of(parse("seed = 1.5\n")) == errc::bad_config);
  }
  SECTION("bad enum values") {
    const auto s = error_message_of(parse("schedule = linear\n"));
    CHECK(s.find("step_halve or cosine") != std::string::npos);
    const auto t = error_message_of(parse("threshold_mode = magic\n"));
    CHECK(t.find("youden, fixed or file") != std::string::npos);
  }
}

TEST_CASE("config files resolve relative paths against their own directory") {
  TempDir tmp;
  spit(tmp / "conf/run.cfg",
       "labels_csv = data/labels.csv\n"
       "out_dir = results\n"
       "seed = 3\n");
  const auto cfg = pipeline::load_config(tmp / "conf/run.cfg");
  CHECK(cfg.base_dir == tmp.path / "conf");
  CHECK(cfg.resolve(cfg.labels_csv) == tmp.path / "conf/data/labels.csv");
  CHECK(cfg.resolve(cfg.out_dir) == tmp.path / "conf/results");
  CHECK(cfg.seed == 3);
}

TEST_CASE("config dump is canonical and drives the hash") {
  pipeline::PipelineConfig a;
  a.out_dir = "somewhere";
  a.threads = 7;
  pipeline::PipelineConfig b;
  b.out_dir = "elsewhere";
  b.threads = 1;

  SECTION("output location and thread count never change the dump or hash") {
    CHECK(pipeline::dump_config(a) == pipeline::dump_config(b));
    CHECK(pipeline::config_hash(a) == pipeline::config_hash(b));
  }
  SECTION("hash format") {
    const auto h = pipeline::config_hash(a);
    CHECK(h.size() == 16);
    CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  }
  SECTION("semantic changes move the hash") {
    b.seed = 1;
    CHECK(pipeline::config_hash(a) != pipeline::config_hash(b));
  }
  SECTION("dump is alphabetical key = value lines") {
    const auto dump = pipeline::dump_config(a);
    CHECK(dump.rfind("agreement_iou = 0.5\n", 0) == 0);
    CHECK(dump.find("rotation_max_degrees = 15\n") != std::string::npos);
    CHECK(dump.find("out_dir") == std::string::npos);
    CHECK(dump.find("threads") == std::string::npos);

    std::vector<std::string> keys;
    std::istringstream lines(dump);
    std::string line;
    while (std::getline(lines, line)) {
      keys.push_back(line.substr(0, line.find(" = ")));
    }
    CHECK(std::is_sorted(keys.begin(), keys.end()));
  }
  SECTION("dump round-trips through the parser") {
    pipeline::PipelineConfig cfg;
    cfg.seed = 123;
    cfg.split_ratio = 0.75;
    cfg.train.lr0 = 0.00125;
    cfg.train.schedule = head::Schedule::cosine;
    cfg.threshold_mode = metrics::ThresholdMode::from_set;
    cfg.thresholds_json = "thresholds.json";
    cfg.augment.p_rotate = 0.125;
    cfg.labels_csv = "labels.csv";
    const auto dump = pipeline::dump_config(cfg);
    const auto again = pipeline::parse_config(dump, cfg.base_dir);
    CHECK(pipeline::dump_config(again) == dump);
    CHECK(pipeline::config_hash(again) == pipeline::config_hash(cfg));
  }
}

TEST_CASE("scores CSV parsing validates probabilities") {
  const std::vector<std::string> obs = {"A", "B"};

  SECTION("happy path") {
    const auto f = pipeline::parse_scores_csv(
        "image_path,B,A\n"
        "x.png,0.25,1\n"
        "y.png,0,0.5\n",
        obs);
    REQUIRE(f.paths == std::vector<std::string>{"x.png", "y.png"});
    // Columns follow the observation order, not the file order.
    CHECK(f.values(0, 0) == 1.0);
    CHECK(f.values(0, 1) == 0.25);
    CHECK(f.values(1, 0) == 0.5);
    CHECK(f.values(1, 1) == 0.0);
  }
  SECTION("missing observation column") {
    CHECK(error_code_of([&] {
            pipeline::parse_scores_csv("image_path,A\nx.png,0.5\n", obs);
          }) == errc::missing_column);
  }
  SECTION("out-of-range score") {
    const auto msg = error_message_of([&] {
      pipeline::parse_scores_csv("image_path,A,B\nx.png,0.5,1.5\n", obs);
    });
    CHECK(msg.find("score out of [0,1] on line 2") != std::string::npos);
  }
  SECTION("non-numeric score") {
    const auto msg = error_message_of([&] {
      pipeline::parse_scores_csv("image_path,A,B\nx.png,0.5,0.5\ny.png,oops,0.5\n", obs);
    });
    CHECK(msg.find("bad score on line 3") != std::string::npos);
  }
}

TEST_CASE("score alignment demands an exact path bijection") {
  labels::LabelTable table;
  table.observations = {"A"};
  table.records.push_back({"a.png", {labels::LabelState::positive}});
  table.records.push_back({"b.png", {labels::LabelState::negative}});

  head::FeatureFile scores;
  scores.paths = {"b.png", "a.png"};
  scores.values.resize(2, 1);
  scores.values << 0.2, 0.9;

  SECTION("rows are reordered to match the table") {
    const auto aligned = pipeline::align_scores(scores, table);
    CHECK(aligned(0, 0) == 0.9);
    CHECK(aligned(1, 0) == 0.2);
  }
  SECTION("a table row without scores fails") {
    table.records.push_back({"c.png", {labels::LabelState::positive}});
    const auto msg =
        error_message_of([&] { pipeline::align_scores(scores, table); });
    CHECK(msg.find("no score row for image c.png") != std::string::npos);
  }
  SECTION("a score row without a table entry fails") {
    scores.paths.push_back("d.png");
    scores.values.conservativeResize(3, 1);
    scores.values(2, 0) = 0.5;
    const auto msg =
        error_message_of([&] { pipeline::align_scores(scores, table); });
    CHECK(msg.find("score row for unknown image d.png") != std::string::npos);
  }
}

TEST_CASE("evaluation samples keep only definite states") {
  labels::LabelTable table;
  table.observations = {"A"};
  table.records.push_back({"a.png", {labels::LabelState::positive}});
  table.records.push_back({"b.png", {labels::LabelState::negative}});
  table.records.push_back({"c.png", {labels::LabelState::uncertain}});
  table.records.push_back({"d.png", {labels::LabelState::missing}});

  Eigen::MatrixXd scores(4, 1);
  scores << 0.9, 0.1, 0.8, 0.7;

  const auto samples = pipeline::make_samples(table, scores);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].name == "A");
  CHECK(samples[0].scores == std::vector<double>{0.9, 0.1});
  CHECK(samples[0].labels == std::vector<int>{1, 0});
}

TEST_CASE("full run produces a complete, self-consistent manifest") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");
  const auto cfg = corpus_config(corpus, tmp / "out");

  pipeline::Runner runner(cfg);
  runner.run_all();
  runner.finish();

  const fs::path out = tmp / "out";
  REQUIRE(fs::exists(out / "manifest.json"));
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));

  SECTION("header fields") {
    CHECK(manifest.at("config_hash").get<std::string>() == pipeline::config_hash(cfg));
    CHECK_FALSE(manifest.at("tool_version").get<std::string>().empty());
    CHECK_FALSE(manifest.contains("started_at"));  // timestamps are opt-in
    CHECK_FALSE(manifest.contains("finished_at"));
  }

  SECTION("stage records reconcile inputs against outputs plus skips") {
    std::vector<std::string> names;
    for (const auto& s : manifest.at("stages")) {
      names.push_back(s.at("name").get<std::string>());
    }
    CHECK(names == std::vector<std::string>{"ingest", "prepare", "train", "eval",
                                            "detect-eval"});
    const auto& stages = manifest.at("stages");
    CHECK(stages[0].at("inputs") == 24);
    CHECK(stages[0].at("outputs") == 24);  // every row lands in a split
    CHECK(stages[1].at("inputs") == 24);
    CHECK(stages[1].at("outputs").get<std::size_t>() +
              stages[1].at("skipped").get<std::size_t>() ==
          24);
    CHECK(stages[1].at("skipped") == 0);
    CHECK(stages[2].at("outputs") == 3);  // one checkpoint per epoch
    CHECK(stages[3].at("outputs") == 5);  // one report row per observation
    CHECK(stages[4].at("inputs") == 48);
  }

  SECTION("output files are sorted, unique, and all present") {
    const auto files = manifest.at("output_files").get<std::vector<std::string>>();
    CHECK(std::is_sorted(files.begin(), files.end()));
    CHECK(std::adjacent_find(files.begin(), files.end()) == files.end());
    for (const auto& rel : files) {
      INFO(rel);
      CHECK(fs::exists(out / rel));
    }
    const std::set<std::string> set(files.begin(), files.end());
    for (const char* expect :
         {"distribution.json", "labels_train.csv", "labels_val.csv", "train_log.csv",
          "best_checkpoint.json", "thresholds.json", "metrics_report.json",
          "metrics_report.txt", "detect_report.json", "config_resolved.txt",
          "manifest.json", "checkpoints/epoch_000.ckpt", "checkpoints/epoch_002.ckpt"}) {
      INFO(expect);
      CHECK(set.count(expect) == 1);
    }
    // 11 fixed artifacts + 3 checkpoints + 24 prepared images.
    CHECK(files.size() == 38);
  }

  SECTION("prepared images come out at the configured size in unit range") {
    const auto files = manifest.at("output_files").get<std::vector<std::string>>();
    std::size_t seen = 0;
    for (const auto& rel : files) {
      if (rel.rfind("prepared/", 0) != 0) continue;
      ++seen;
      const auto img = image::read_buffer(out / rel);
      CHECK(img.width == 32);
      CHECK(img.height == 32);
      CHECK(img.range == image::ValueRange::unit);
      CHECK(std::all_of(img.data.begin(), img.data.end(),
                        [](double v) { return v >= 0.0 && v <= 1.0; }));
    }
    CHECK(seen == 24);
  }

  SECTION("training log has one row per epoch") {
    const auto log = slurp(out / "train_log.csv");
    CHECK(static_cast<int>(std::count(log.begin(), log.end(), '\n')) ==
          cfg.train.epochs + 1);
    CHECK(log.rfind("epoch,train_loss,val_mean_auc,lr,steps\n", 0) == 0);
  }

  SECTION("detection report reflects the near-perfect synthetic predictions") {
    const auto report = nlohmann::json::parse(slurp(out / "detect_report.json"));
    CHECK(report.at("average_precision").get<double>() == 1.0);
    CHECK(report.at("n_ground_truth") == 24);
    CHECK(report.at("n_predictions") == 24);
    const auto& agree = report.at("agreement");
    CHECK(agree.at("n_pairs") == 24);
    CHECK(agree.at("agree_fraction").get<double>() == 1.0);
    CHECK(agree.at("mean_iou").get<double>() > 0.8);
  }

  SECTION("metrics report covers every observation") {
    const auto report = nlohmann::json::parse(slurp(out / "metrics_report.json"));
    REQUIRE(report.at("labels").size() == 5);
    for (const auto& row : report.at("labels")) {
      const double t = row.at("threshold").get<double>();
      CHECK(t >= 0.0);
      CHECK(t <= 1.0);
    }
    const auto set = metrics::threshold_set_from_json(
        nlohmann::json::parse(slurp(out / "thresholds.json")));
    CHECK(set.values.size() == 5);
  }

  SECTION("resolved config dump matches the in-memory config") {
    CHECK(slurp(out / "config_resolved.txt") == pipeline::dump_config(cfg));
  }
}

TEST_CASE("identical configurations yield byte-identical outputs") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");

  auto run = [&](const fs::path& out) {
    pipeline::Runner runner(corpus_config(corpus, out));
    runner.run_all();
    runner.finish();
  };
  run(tmp / "first");
  run(tmp / "second");

  const auto manifest = nlohmann::json::parse(slurp(tmp / "first/manifest.json"));
  const auto files = manifest.at("output_files").get<std::vector<std::string>>();
  REQUIRE(!files.empty());
  for (const auto& rel : files) {
    INFO(rel);
    CHECK(slurp(tmp / "first" / rel) == slurp(tmp / "second" / rel));
  }
}

TEST_CASE("timestamps appear only on request") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");
  auto cfg = corpus_config(corpus, tmp / "out");
  cfg.features_csv.clear();
  cfg.images_dir.clear();
  cfg.boxes_csv.clear();
  cfg.truth_boxes_csv.clear();
  cfg.pred_boxes_csv.clear();
  cfg.record_timestamps = true;

  pipeline::Runner runner(cfg);
  runner.run_all();
  runner.finish();

  const auto manifest = nlohmann::json::parse(slurp(tmp / "out/manifest.json"));
  const auto started = manifest.at("started_at").get<std::string>();
  const auto finished = manifest.at("finished_at").get<std::string>();
  CHECK(started.size() == 20);  // 2026-01-02T03:04:05Z
  CHECK(started.back() == 'Z');
  CHECK(finished.size() == 20);
  CHECK(started <= finished);
}

TEST_CASE("optional stages run only when their inputs are configured") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");
  pipeline::PipelineConfig cfg;
  cfg.labels_csv = corpus.labels_csv.string();
  cfg.out_dir = (tmp / "out").string();

  pipeline::Runner runner(cfg);
  runner.run_all();
  runner.finish();

  REQUIRE(runner.manifest().stages.size() == 1);
  CHECK(runner.manifest().stages[0].name == "ingest");
  CHECK(runner.manifest().output_files ==
        std::vector<std::string>{"config_resolved.txt", "distribution.json",
                                 "labels_train.csv", "labels_val.csv",
                                 "manifest.json"});
}

TEST_CASE("prepare skips images without a crop box and rejects duplicates") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");

  SECTION("a missing box becomes a skip, not a failure") {
    // Drop the first data line from the crop-box CSV.
    const auto text = slurp(corpus.truth_boxes_csv);
    const auto header_end = text.find('\n') + 1;
    const auto second_line = text.find('\n', header_end) + 1;
    spit(tmp / "boxes_missing.csv",
         text.substr(0, header_end) + text.substr(second_line));

    auto cfg = corpus_config(corpus, tmp / "out");
    cfg.boxes_csv = (tmp / "boxes_missing.csv").string();
    pipeline::Runner runner(cfg);
    runner.ingest();
    runner.prepare();

    const auto& stage = runner.manifest().stages.at(1);
    CHECK(stage.inputs == 24);
    CHECK(stage.skipped == 1);
    CHECK(stage.outputs == 23);
  }

  SECTION("two boxes for one image is a configuration error") {
    const auto text = slurp(corpus.truth_boxes_csv);
    const auto header_end = text.find('\n') + 1;
    const auto second_line = text.find('\n', header_end) + 1;
    spit(tmp / "boxes_dup.csv", text + text.substr(header_end, second_line - header_end));

    auto cfg = corpus_config(corpus, tmp / "out");
    cfg.boxes_csv = (tmp / "boxes_dup.csv").string();
    pipeline::Runner runner(cfg);
    runner.ingest();
    const auto msg = error_message_of([&] { runner.prepare(); });
    CHECK(msg.find("multiple crop boxes for image") != std::string::npos);
  }
}

TEST_CASE("evaluation validates its score source") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");

  SECTION("external scores and a checkpoint are mutually exclusive") {
    auto cfg = corpus_config(corpus, tmp / "out");
    cfg.scores_csv = "scores.csv";
    cfg.checkpoint = "model.ckpt";
    pipeline::Runner runner(cfg);
    const auto msg = error_message_of([&] { runner.eval(); });
    CHECK(msg.find("configure either scores_csv or a checkpoint, not both") !=
          std::string::npos);
  }
  SECTION("some score source is required") {
    pipeline::PipelineConfig cfg;
    cfg.labels_csv = corpus.labels_csv.string();
    cfg.out_dir = (tmp / "out").string();
    pipeline::Runner runner(cfg);
    const auto msg = error_message_of([&] { runner.eval(); });
    CHECK(msg.find("eval needs scores_csv") != std::string::npos);
  }
  SECTION("evaluation requires the ingest outputs") {
    auto cfg = corpus_config(corpus, tmp / "fresh");
    pipeline::Runner runner(cfg);
    auto thrown = [&] { runner.eval(); };
    CHECK(error_code_of(thrown) == errc::io_error);
    CHECK(error_message_of(thrown).find("run the ingest stage first") !=
          std::string::npos);
  }
  SECTION("a missing checkpoint pointer is reported") {
    pipeline::PipelineConfig cfg;
    cfg.labels_csv = corpus.labels_csv.string();
    cfg.features_csv = corpus.features_csv.string();
    cfg.out_dir = (tmp / "out2").string();
    pipeline::Runner runner(cfg);
    runner.ingest();
    const auto msg = error_message_of([&] { runner.eval(); });
    CHECK(msg.find("no checkpoint available") != std::string::npos);
  }
}

TEST_CASE("external scores drive the evaluation") {
  TempDir tmp;
  const auto corpus = fixtures::write_pipeline_corpus(tmp / "corpus");

  // Ingest once so the validation split exists on disk.
  pipeline::PipelineConfig base;
  base.labels_csv = corpus.labels_csv.string();
  base.out_dir = (tmp / "out").string();
  base.seed = 5;
  {
    pipeline::Runner runner(base);
    runner.ingest();
  }

  // Oracle scores for exactly the validation rows: probability 0.9 for a
  // positive state, 0.1 for a negative, 0.5 when no ground truth exists.
  const auto val = labels::parse_labels(slurp(tmp / "out/labels_val.csv"),
                                        labels::submission_observations());
  std::string csv = "image_path";
  for (const auto& name : val.observations) csv += "," + name;
  csv += "\n";
  for (const auto& rec : val.records) {
    csv += rec.image_path;
    for (const auto state : rec.states) {
      if (state == labels::LabelState::positive) csv += ",0.9";
      else if (state == labels::LabelState::negative) csv += ",0.1";
      else csv += ",0.5";
    }
    csv += "\n";
  }
  spit(tmp / "scores.csv", csv);

  auto cfg = base;
  cfg.scores_csv = (tmp / "scores.csv").string();
  pipeline::Runner runner(cfg);
  runner.eval();

  const auto report = nlohmann::json::parse(slurp(tmp / "out/metrics_report.json"));
  REQUIRE(report.at("labels").size() == 5);
  for (const auto& row : report.at("labels")) {
    if (!row.at("auc").is_null()) {
      CHECK(row.at("auc").get<double>() == 1.0);
      CHECK(row.at("threshold").get<double>() == 0.9);
      CHECK(row.at("f1").get<double>() == 1.0);
    }
  }
  CHECK(report.at("mean").at("auc").get<double>() == 1.0);
  const auto first = slurp(tmp / "out/metrics_report.json");

  // A fixed threshold changes the operating point, never the ranking metric.
  auto fixed = cfg;
  fixed.threshold_mode = metrics::ThresholdMode::fixed;
  fixed.fixed_threshold = 0.45;
  pipeline::Runner rerun(fixed);
  rerun.eval();
  const auto second = nlohmann::json::parse(slurp(tmp / "out/metrics_report.json"));
  const auto before = nlohmann::json::parse(first);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(second.at("labels")[i].at("auc") == before.at("labels")[i].at("auc"));
    CHECK(second.at("labels")[i].at("threshold").get<double>() == 0.45);
  }
}

TEST_CASE("ingest propagates label table errors") {
  TempDir tmp;
  spit(tmp / "empty.csv", "Path,Atelectasis,Cardiomegaly,Consolidation,Edema,Pleural Effusion\n");
  pipeline::PipelineConfig cfg;
  cfg.labels_csv = (tmp / "empty.csv").string();
  cfg.out_dir = (tmp / "out").string();
  pipeline::Runner runner(cfg);
  CHECK(error_code_of([&] { runner.ingest(); }) == errc::empty_table);

  SECTION("a missing labels file is an io error") {
    pipeline::PipelineConfig missing;
    missing.labels_csv = (tmp / "nope.csv").string();
    missing.out_dir = (tmp / "out").string();
    pipeline::Runner other(missing);
    auto thrown = [&] { other.ingest(); };
    CHECK(error_code_of(thrown) == errc::io_error);
    CHECK(error_message_of(thrown).find("labels_csv path does not exist") !=
          std::string::npos);
  }
  SECTION("an unconfigured labels path is a config error") {
    pipeline::PipelineConfig blank;
    blank.out_dir = (tmp / "out").string();
    pipeline::Runner other(blank);
    const auto msg = error_message_of([&] { other.ingest(); });
    CHECK(msg.find("labels_csv is not configured") != std::string::npos);
  }
}
