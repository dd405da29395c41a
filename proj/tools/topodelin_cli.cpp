#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "topodelin/commands.hpp"
#include "topodelin/gradcheck.hpp"

namespace {

namespace td = topodelin;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

td::RunConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
  auto config = path.empty() ? td::RunConfig{} : td::RunConfig::load(path);
  config.apply(overrides);
  return config;
}

void echo(const td::RunConfig& config) {
  std::cerr << "# resolved configuration\n";
  std::istringstream lines(config.to_text());
  for (std::string line; std::getline(lines, line);) std::cerr << "#   " << line << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvilinear structure delineation with topology-aware losses and iterative refinement"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file");
    cmd->add_option("--set", overrides, "override a configuration key (key=value), repeatable");
  };

  std::filesystem::path out, data, val, checkpoint, pred, gt;
  std::size_t n = 0, stop_after = 0;
  std::optional<std::size_t> K;
  std::optional<double> rho, threshold;
  bool resume = false;
  std::uint64_t seed = 0;
  std::string precision = "double";

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_config(synth);
  synth->add_option("--out", out, "output dataset directory")->required();
  synth->add_option("--n", n, "number of samples (default synth.n)");

  auto* train = app.add_subcommand("train", "train the refinement network");
  add_config(train);
  train->add_option("--data", data, "training dataset directory")->required();
  train->add_option("--val", val, "validation dataset directory (default: hold out the tail of --data)");
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--resume", resume, "continue from the last completed epoch in --out");
  train->add_option("--stop-after", stop_after, "stop after this many epochs in total");

  auto* predict = app.add_subcommand("predict", "write refined predictions for a dataset");
  predict->add_option("--checkpoint", checkpoint, "checkpoint.tdlw written by train")->required();
  predict->add_option("--data", data, "dataset directory")->required();
  predict->add_option("--out", out, "output directory")->required();
  predict->add_option("--K", K, "refinement steps (default: the checkpoint's refine.K)");

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  add_config(eval);
  eval->add_option("--pred", pred, "prediction directory")->required();
  eval->add_option("--gt", gt, "ground-truth dataset directory")->required();
  eval->add_option("--rho", rho, "centerline tolerance in pixels (default eval.rho)");
  eval->add_option("--threshold", threshold, "binarization threshold (default: from the prediction directory)");
  eval->add_option("--out", out, "report file (tab-separated)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of all gradients");
  gradcheck->add_option("--seed", seed, "instance seed");
  gradcheck->add_option("--precision", precision, "double (reference) or single (may fail)")
      ->check(CLI::IsMember({"double", "single"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      auto config = resolve(config_path, overrides);
      echo(config);
      td::run_synth(config, out, n ? n : config.synth_count(), std::cerr);
    } else if (train->parsed()) {
      auto config = resolve(config_path, overrides);
      echo(config);
      td::run_train(config, {data, val, out, resume, stop_after}, std::cerr);
    } else if (predict->parsed()) {
      td::run_predict({checkpoint, data, out, K}, std::cerr);
    } else if (eval->parsed()) {
      auto config = resolve(config_path, overrides);
      if (rho) config.set("eval.rho", std::to_string(*rho));
      echo(config);
      const auto reports = td::run_eval(config, pred, gt, threshold);
      td::write_report(std::cout, reports);
      if (!out.empty()) {
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        std::ofstream f(out, std::ios::trunc);
        if (!f) throw td::DataError("cannot write " + out.string());
        td::write_report(f, reports);
      }
      for (const auto& r : reports)
        if (r.path_warning) std::cerr << "warning: " << r.id << ": prediction skeleton has no path of two pixels\n";
    } else if (gradcheck->parsed()) {
      const auto report =
          td::run_gradcheck(seed, precision == "single" ? td::Precision::single : td::Precision::double_);
      std::cout << report.text();
      return report.passed() ? kOk : kNumerical;
    }
  } catch (const td::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const td::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const td::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const td::WeightFormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
