#include "latent_scan/pipeline.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

namespace latent_scan {
namespace {

using testing::TempDir;
using testing::slurp;
using testing::spit;

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    saved_ = warning_stream();
    warning_stream() = &warnings_;
  }
  void TearDown() override { warning_stream() = saved_; }

  // 4 background samples and 2 evaluation samples over layers "a" (2 nodes)
  // and "b" (1 node). Sample "hot" exceeds every background value.
  void write_fixture(const fs::path& dir) {
    write_activation_set(ActivationSet("background", {"b0", "b1", "b2", "b3"},
                                       {LayerActivations("a", 4, 2, {0, 1, 1, 2, 2, 3, 3, 4}),
                                        LayerActivations("b", 4, 1, {0.1f, 0.2f, 0.3f, 0.4f})}),
                         dir / "bg");
    write_activation_set(ActivationSet("evaluation", {"hot", "cold"},
                                       {LayerActivations("a", 2, 2, {9, 9, -1, -1}),
                                        LayerActivations("b", 2, 1, {9.0f, -1.0f})}),
                         dir / "ev");
  }

  ScanRunConfig scan_config(const TempDir& dir, const std::string& out) {
    ScanRunConfig cfg;
    cfg.background = dir / "bg";
    cfg.evaluation = dir / "ev";
    cfg.out = dir / out;
    return cfg;
  }

  std::ostringstream warnings_;
  std::ostream* saved_ = nullptr;
};

TEST_F(Pipeline, ScanWritesPerLayerAndAggregateTables) {
  TempDir dir;
  write_fixture(dir.path());
  const auto res = cmd_scan(scan_config(dir, "out"));
  ASSERT_EQ(res.layers.size(), 2u);

  // "hot": every p-value is 1/5, so layer a scores 2 ln 5 and layer b ln 5.
  const auto a = parse_scan_result_csv(slurp(dir / "out" / "scan_a.csv"), "a");
  EXPECT_NEAR(a.samples[0].score, 2.0 * std::log(5.0), 1e-12);
  EXPECT_EQ(a.samples[0].k_star, 2u);
  EXPECT_EQ(a.samples[1].score, 0.0);
  const auto b = parse_scan_result_csv(slurp(dir / "out" / "scan_b.csv"), "b");
  EXPECT_NEAR(b.samples[0].score, std::log(5.0), 1e-12);

  const auto t = parse_detection_table_csv(slurp(dir / "out" / "detections.csv"));
  EXPECT_NEAR(t.records[0].aggregate_score, 3.0 * std::log(5.0), 1e-12);
  EXPECT_EQ(t.records[1].aggregate_score, 0.0);

  const auto run = nlohmann::json::parse(slurp(dir / "out" / "run.json"));
  EXPECT_EQ(run["alpha_max"], 0.5);
  EXPECT_EQ(run["layers"], nlohmann::json::array({"a", "b"}));
}

TEST_F(Pipeline, ScanRerunIsByteIdentical) {
  TempDir dir;
  write_fixture(dir.path());
  cmd_scan(scan_config(dir, "one"));
  cmd_scan(scan_config(dir, "two"));
  for (const char* f : {"scan_a.csv", "scan_b.csv", "detections.csv", "run.json"})
    EXPECT_EQ(slurp(dir / "one" / f), slurp(dir / "two" / f)) << f;
}

TEST_F(Pipeline, ScanUnknownLayerIsAnError) {
  TempDir dir;
  write_fixture(dir.path());
  auto cfg = scan_config(dir, "out");
  cfg.settings.scan.layers = {"missing"};
  EXPECT_THROW(cmd_scan(cfg), InputError);
}

TEST_F(Pipeline, ScanThenEvaluate) {
  TempDir dir;
  write_fixture(dir.path());
  spit(dir / "labels.csv", "sample_id,is_ood\nhot,1\ncold,0\n");
  spit(dir / "ita.csv", "sample_id,l_mean,b_mean,ita_degrees,category\nhot,70,20,45,Light\ncold,40,10,-45,Dark\n");
  auto cfg = scan_config(dir, "scan");
  cmd_scan(cfg);

  EvaluateConfig ev;
  ev.detections = dir / "scan" / "detections.csv";
  ev.labels = dir / "labels.csv";
  ev.ita_csv = dir / "ita.csv";
  ev.scan_results = {dir / "scan" / "scan_a.csv", dir / "scan" / "scan_b.csv"};
  ev.out = dir / "eval";
  const auto rep = cmd_evaluate(ev);
  EXPECT_EQ(rep.overall.auroc, 1.0);
  EXPECT_EQ(rep.per_group.count("Light"), 1u);
  EXPECT_EQ(rep.per_group.count("Dark"), 0u);  // its only member is ID
  EXPECT_EQ(rep.layer_order, (std::vector<std::string>{"a", "b"}));
  EXPECT_NE(warnings_.str().find("Dark"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.csv"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.txt"));
  EXPECT_EQ(report_from_json(nlohmann::ordered_json::parse(slurp(dir / "eval" / "report.json"))).overall.auroc, 1.0);
}

TEST_F(Pipeline, EvaluateNeedsLabelsForEverySample) {
  TempDir dir;
  spit(dir / "det.csv", "sample_id,aggregate_score\na,1\nb,2\n");
  spit(dir / "labels.csv", "sample_id,is_ood\na,1\n");
  EvaluateConfig ev;
  ev.detections = dir / "det.csv";
  ev.out = dir / "out";
  EXPECT_THROW(cmd_evaluate(ev), InputError);
  ev.labels = dir / "labels.csv";
  EXPECT_THROW(cmd_evaluate(ev), InputError);
}

TEST_F(Pipeline, AggregateReportsMeanAndSampleStd) {
  TempDir dir;
  EvaluationReport r1, r2;
  r1.overall = {0.6, 0.5, 0.0, 1, 1};
  r2.overall = {0.8, 0.7, 0.0, 1, 1};
  spit(dir / "r1.json", report_json(r1).dump());
  spit(dir / "r2.json", report_json(r2).dump());
  const std::string csv = cmd_aggregate_reports({dir / "r1.json", dir / "r2.json"}, dir / "agg");
  const auto row = csv.find("overall,,,auroc,0.7,");
  ASSERT_NE(row, std::string::npos) << csv;
  const auto std_cell = csv.substr(row + 20, csv.find(',', row + 20) - row - 20);
  EXPECT_NEAR(parse_double_cell(std_cell, "std"), std::sqrt(0.02), 1e-12);
  EXPECT_NE(csv.find(",2\n", row), std::string::npos);
  EXPECT_EQ(slurp(dir / "agg" / "aggregate.csv"), csv);
  spit(dir / "bad.json", "{");
  EXPECT_THROW(cmd_aggregate_reports({dir / "bad.json"}, dir / "agg"), InputError);
}

TEST_F(Pipeline, ItaOverADirectory) {
  TempDir dir;
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "mask");
  write_png_rgb(dir / "img" / "c_dark.png", RgbImage::uniform(3, 3, {120, 80, 60}));
  write_png_rgb(dir / "img" / "a_light.png", RgbImage::uniform(3, 3, {235, 200, 175}));
  RgbImage mixed = RgbImage::uniform(3, 3, {200, 150, 120});
  mixed.at(1, 1) = {30, 10, 10};
  write_png_rgb(dir / "img" / "b_mid.png", mixed);
  PixelMask m = PixelMask::all(3, 3);
  m.included[4] = false;
  write_png_mask(dir / "mask" / "b_mid.png", m);

  const auto recs = cmd_ita(dir / "img", dir / "mask", dir / "out");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].sample_id, "a_light");
  EXPECT_EQ(recs[0].category, SkinTone::Light);
  EXPECT_EQ(recs[1].category, SkinTone::Intermediate);
  EXPECT_TRUE(recs[1].warnings.empty());
  EXPECT_EQ(recs[2].category, SkinTone::Dark);
  EXPECT_EQ(recs[2].warnings.size(), 1u);  // no mask
  const auto groups = parse_ita_groups_csv(slurp(dir / "out" / "ita.csv"));
  EXPECT_EQ(groups.at("b_mid"), "Intermediate");

  fs::create_directories(dir / "empty");
  EXPECT_TRUE(cmd_ita(dir / "empty", std::nullopt, dir / "out2").empty());
  EXPECT_EQ(slurp(dir / "out2" / "ita.csv"), "sample_id,l_mean,b_mean,ita_degrees,category\n");
  EXPECT_THROW(cmd_ita(dir / "nope", std::nullopt, dir / "out3"), InputError);
}

TEST_F(Pipeline, ImportCsvBuildsAStore) {
  TempDir dir;
  spit(dir / "a.csv", "sample_id,n0,n1\nx,1,2\ny,3,4\n");
  spit(dir / "b.csv", "sample_id,n0\nx,5\ny,6\n");
  spit(dir / "c.csv", "sample_id,n0\ny,5\nx,6\n");
  cmd_import_csv({{"a", dir / "a.csv"}, {"b", dir / "b.csv"}}, "evaluation", dir / "store");
  const auto set = read_activation_set(dir / "store");
  EXPECT_EQ(set.layer_names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(set.layer("b").at(1, 0), 6.0f);
  EXPECT_THROW(cmd_import_csv({{"a", dir / "a.csv"}, {"c", dir / "c.csv"}}, "e", dir / "s2"), InputError);
}

TEST_F(Pipeline, TuneOdinFromStores) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const std::vector<std::size_t> sizes{4, 8, 3};
  save_reference_net(ReferenceNet::random(sizes, rng), dir / "model");
  write_activation_set(ActivationSet("id", {"i0", "i1", "i2"},
                                     {LayerActivations("input", 3, 4, {.1f, .2f, .3f, .4f, .2f, .2f, .2f, .2f, .4f,
                                                                        .3f, .2f, .1f})}),
                       dir / "id");
  write_activation_set(ActivationSet("ood", {"o0", "o1"},
                                     {LayerActivations("input", 2, 4, {.9f, .9f, .8f, .9f, .7f, .9f, .9f, .8f})}),
                       dir / "ood");
  TuneRunConfig cfg;
  cfg.model = dir / "model";
  cfg.id_inputs = dir / "id";
  cfg.ood_inputs = dir / "ood";
  cfg.tau_grid = {1, 10};
  cfg.eps_grid = {0, 0.01};
  cfg.out = dir / "out";
  const auto r = cmd_tune_odin(cfg);
  EXPECT_EQ(r.grid.size(), 4u);
  PipelineSettings s;
  s.apply(parse_key_value(slurp(dir / "out" / "odin.conf")));
  EXPECT_EQ(s.odin.tau, r.config.tau);
  EXPECT_EQ(s.odin.epsilon, r.config.epsilon);
}

TEST_F(Pipeline, SmallDemoIsDeterministic) {
  TempDir dir;
  DemoOptions opt;
  opt.background = 60;
  opt.val_per_class = 20;
  opt.eval_per_class = 40;
  opt.tau_grid = {1, 10};
  opt.eps_grid = {0, 0.01};
  const auto s1 = run_demo(opt, dir / "one");
  run_demo(opt, dir / "two");
  for (const char* f : {"summary.csv", "summary.txt", "run.json", "report_shifted/report.json"})
    EXPECT_EQ(slurp(dir / "one" / f), slurp(dir / "two" / f)) << f;
  EXPECT_NO_THROW(s1.auroc("shifted", "ss_sum"));
  EXPECT_NO_THROW(s1.auroc("control", "ss_sum_odin_low"));
  EXPECT_NO_THROW(load_reference_net(dir / "one" / "reference_net"));
}

}  // namespace
}  // namespace latent_scan
