// latent_scan: subset scanning of classifier activations for OOD detection.
//
//   latent_scan scan        --background DIR --eval DIR [--labels CSV] [--ita-csv CSV] --out DIR
//   latent_scan evaluate    --detections CSV [--labels CSV] [--ita-csv CSV] [--scan-results CSV...] --out DIR
//   latent_scan evaluate    --aggregate RUN.json... --out DIR
//   latent_scan ita         --images DIR [--masks DIR] --out DIR
//   latent_scan import-csv  --layer NAME=FILE... --set NAME --out DIR
//   latent_scan tune-odin   --model DIR --id DIR --ood DIR --tau-grid 1,2 --eps-grid 0,0.2 --objective maximize --out DIR
//   latent_scan demo        [--seed N] --out DIR
//
// Exit codes: 0 success, 1 bad input, 2 internal invariant violation.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latent_scan/latent_scan.hpp"

namespace ls = latent_scan;

namespace {

struct CommonScanFlags {
  std::string config_file;
  std::string layers;
  std::optional<double> alpha_max;
  std::string statistic;
  std::string aggregation;
  std::optional<double> tau;
  std::optional<double> epsilon;
  std::string odin_mode;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Key-value config file");
    cmd->add_option("--layers", layers, "Comma-separated layers to scan (default: all)");
    cmd->add_option("--alpha-max", alpha_max, "Largest p-value eligible for a subset (default 0.5)");
    cmd->add_option("--statistic", statistic, "berk_jones | higher_criticism");
    cmd->add_option("--aggregation", aggregation, "sum | layer:<name>");
    cmd->add_option("--tau", tau, "Softmax temperature");
    cmd->add_option("--epsilon", epsilon, "Perturbation magnitude");
    cmd->add_option("--odin-mode", odin_mode, "off | standard | low");
  }

  // Config file first, then flags on top.
  ls::PipelineSettings resolve() const {
    std::map<std::string, std::string> kv;
    if (!config_file.empty()) kv = ls::parse_key_value(ls::detail::read_text_file(config_file));
    if (!layers.empty()) kv["layers"] = layers;
    if (alpha_max) kv["alpha_max"] = ls::format_double(*alpha_max);
    if (!statistic.empty()) kv["statistic"] = statistic;
    if (!aggregation.empty()) kv["aggregation"] = aggregation;
    if (tau) kv["tau"] = ls::format_double(*tau);
    if (epsilon) kv["epsilon"] = ls::format_double(*epsilon);
    if (!odin_mode.empty()) kv["odin_mode"] = odin_mode;
    ls::PipelineSettings s;
    s.apply(kv);
    return s;
  }
};

std::vector<double> parse_grid(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : ls::split_list(text)) out.push_back(ls::parse_double_cell(item, what));
  ls::require_input(!out.empty(), what + " is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subset scanning of classifier activations for out-of-distribution detection"};
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 0;

  // scan
  auto* scan = app.add_subcommand("scan", "Compute p-values, scan every layer and aggregate scores");
  std::string background, evaluation, labels, ita_csv;
  CommonScanFlags scan_flags;
  scan->add_option("--background", background, "Background activation store")->required();
  scan->add_option("--eval", evaluation, "Evaluation activation store")->required();
  scan->add_option("--labels", labels, "Labels CSV (sample_id,is_ood)");
  scan->add_option("--ita-csv", ita_csv, "ITA CSV used as groups");
  scan->add_option("--out", out, "Output directory")->required();
  scan->add_option("--seed", seed, "Recorded in run.json");
  scan_flags.add_to(scan);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "AUROC and max F1, overall, per group and per layer");
  std::string detections;
  std::vector<std::string> scan_results, aggregate;
  evaluate->add_option("--detections", detections, "Detection table CSV");
  evaluate->add_option("--labels", labels, "Labels CSV (sample_id,is_ood)");
  evaluate->add_option("--ita-csv", ita_csv, "ITA CSV for skin-tone stratification");
  evaluate->add_option("--scan-results", scan_results, "Per-layer scan CSVs for the per-layer report");
  evaluate->add_option("--aggregate", aggregate, "report.json files to summarise as mean and std");
  evaluate->add_option("--out", out, "Output directory")->required();

  // ita
  auto* ita = app.add_subcommand("ita", "Individual Typology Angle and skin-tone category per image");
  std::string images, masks;
  ita->add_option("--images", images, "Directory of PNG images")->required();
  ita->add_option("--masks", masks, "Directory of PNG masks with matching file names");
  ita->add_option("--out", out, "Output directory")->required();

  // import-csv
  auto* import = app.add_subcommand("import-csv", "Convert CSV layers into an activation store");
  std::vector<std::string> csv_layers;
  std::string set_name = "evaluation";
  import->add_option("--layer", csv_layers, "NAME=FILE, repeatable")->required();
  import->add_option("--set", set_name, "Set name in the store");
  import->add_option("--out", out, "Store directory")->required();

  // tune-odin
  auto* tune = app.add_subcommand("tune-odin", "Grid search of temperature and perturbation magnitude");
  std::string model, id_dir, ood_dir, tau_grid = "1,2,5,10,20,50,100,200,500,1000",
                                      eps_grid = "0,0.0002,0.0005,0.001,0.002,0.005,0.01,0.05,0.1,0.2";
  std::string objective = "maximize";
  tune->add_option("--model", model, "Reference-net parameter store")->required();
  tune->add_option("--id", id_dir, "ID validation inputs (activation store)")->required();
  tune->add_option("--ood", ood_dir, "OOD validation inputs (activation store)")->required();
  tune->add_option("--tau-grid", tau_grid, "Comma-separated temperatures");
  tune->add_option("--eps-grid", eps_grid, "Comma-separated perturbation magnitudes");
  tune->add_option("--objective", objective, "maximize | minimize")->check(CLI::IsMember({"maximize", "minimize"}));
  tune->add_option("--out", out, "Output directory")->required();

  // demo
  auto* demo = app.add_subcommand("demo", "Synthetic end-to-end run on a random reference network");
  CommonScanFlags demo_flags;
  seed = 7;
  demo->add_option("--seed", seed, "Random seed");
  demo->add_option("--out", out, "Output directory")->required();
  demo_flags.add_to(demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (scan->parsed()) {
      ls::ScanRunConfig cfg;
      cfg.background = background;
      cfg.evaluation = evaluation;
      if (!labels.empty()) cfg.labels = labels;
      if (!ita_csv.empty()) cfg.ita_csv = ita_csv;
      cfg.settings = scan_flags.resolve();
      cfg.out = out;
      cfg.seed = seed;
      const auto res = ls::cmd_scan(cfg);
      std::cout << "scanned " << res.layers.size() << " layers, " << res.table.records.size() << " samples -> "
                << out << "\n";
    } else if (evaluate->parsed()) {
      if (!aggregate.empty()) {
        std::vector<ls::fs::path> runs(aggregate.begin(), aggregate.end());
        std::cout << ls::cmd_aggregate_reports(runs, out);
      } else {
        ls::require_input(!detections.empty(), "evaluate needs --detections or --aggregate");
        ls::EvaluateConfig cfg;
        cfg.detections = detections;
        if (!labels.empty()) cfg.labels = labels;
        if (!ita_csv.empty()) cfg.ita_csv = ita_csv;
        cfg.scan_results.assign(scan_results.begin(), scan_results.end());
        cfg.out = out;
        std::cout << ls::report_text(ls::cmd_evaluate(cfg));
      }
    } else if (ita->parsed()) {
      std::optional<ls::fs::path> mask_dir;
      if (!masks.empty()) mask_dir = masks;
      const auto recs = ls::cmd_ita(images, mask_dir, out);
      std::cout << "wrote " << recs.size() << " ITA records -> " << out << "/ita.csv\n";
    } else if (import->parsed()) {
      std::vector<std::pair<std::string, ls::fs::path>> pairs;
      for (const auto& item : csv_layers) {
        const auto eq = item.find('=');
        ls::require_input(eq != std::string::npos && eq > 0, "--layer expects NAME=FILE, got '" + item + "'");
        pairs.emplace_back(item.substr(0, eq), item.substr(eq + 1));
      }
      const auto set = ls::cmd_import_csv(pairs, set_name, out);
      std::cout << "imported " << set.layers().size() << " layers, " << set.sample_count() << " samples -> "
                << out << "\n";
    } else if (tune->parsed()) {
      ls::TuneRunConfig cfg;
      cfg.model = model;
      cfg.id_inputs = id_dir;
      cfg.ood_inputs = ood_dir;
      cfg.tau_grid = parse_grid(tau_grid, "--tau-grid");
      cfg.eps_grid = parse_grid(eps_grid, "--eps-grid");
      cfg.objective = objective == "maximize" ? ls::TuneObjective::Maximize : ls::TuneObjective::Minimize;
      cfg.out = out;
      const auto res = ls::cmd_tune_odin(cfg);
      std::cout << "tau " << res.config.tau << " epsilon " << res.config.epsilon << " AUROC " << res.auroc << "\n";
    } else if (demo->parsed()) {
      ls::DemoOptions opt;
      opt.seed = seed;
      opt.scan = demo_flags.resolve().scan;
      ls::run_demo(opt, out);
      std::cout << ls::detail::read_text_file(ls::fs::path(out) / "summary.txt");
    }
  } catch (const ls::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ls::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
