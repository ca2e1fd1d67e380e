#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pottsmg/config.hpp"
#include "pottsmg/dataio.hpp"
#include "pottsmg/errors.hpp"
#include "pottsmg/mgnet.hpp"
#include "pottsmg/split.hpp"
#include "pottsmg/trainer.hpp"

namespace fs = std::filesystem;
using namespace pmg;

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw UsageError("missing value for " + a);
      out.emplace_back(a.substr(2), extras[++i]);
    }
  }
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const fs::path& p) {
  ensure_parent(p);
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

int cmd_convergence(const std::string& csv_path) {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const std::vector<double> dts{0.1, 0.05, 0.025, 0.0125};
  const auto rows = split::convergence_study(seeds, dts);
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!csv_path.empty()) {
    file = open_out(csv_path);
    out = &file;
  }
  *out << "scheme,instance-seed,dt,error,observed_order\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%llu,%.6g,%.17g,%.6f\n", r.scheme.c_str(),
                  static_cast<unsigned long long>(r.seed), r.dt, r.error, r.order);
    *out << line;
  }
  return 0;
}

int cmd_gen_data(const RunConfig& cfg) {
  const auto train = gen_dataset(cfg.data.count, cfg.data.size, cfg.data.shapes, cfg.data.seed);
  save_dataset(train, cfg.data.train_dir);
  const auto test = gen_dataset(cfg.data.test_count, cfg.data.size, cfg.data.shapes, derive_seed(cfg.data.seed, 2));
  save_dataset(test, cfg.data.test_dir);
  std::cout << "wrote " << train.size() << " training samples to " << cfg.data.train_dir << " and " << test.size()
            << " test samples to " << cfg.data.test_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, bool quiet) {
  const auto data = load_dataset(cfg.data.train_dir);
  if (data.empty()) throw InputError("no samples under " + cfg.data.train_dir);
  cfg.net.validate_image(data[0].image.rows(), data[0].image.cols());
  ControlParams theta(cfg.net);
  theta.initialize(cfg.train.seed);
  const TrainResult res = train(std::move(theta), data, cfg.train, quiet ? nullptr : &std::cerr);
  ensure_parent(cfg.data.checkpoint);
  save_checkpoint(res.theta, cfg.data.checkpoint, cfg.data.precision);
  auto log = open_out(cfg.data.log);
  write_log_csv(res.log, log);
  std::cout << "checkpoint " << cfg.data.checkpoint << " hash " << std::hex << res.theta.hash() << std::dec << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg) {
  const ControlParams theta = load_checkpoint(cfg.data.checkpoint);
  if (cfg.data.inputs.empty()) throw UsageError("infer needs --data.inputs <image>[,<image>...]");
  fs::create_directories(cfg.data.out);
  for (const std::string& in : cfg.data.inputs) {
    const Image img = read_image(in);
    const Field p = forward(img, theta);
    Field mask = Field::like(p);
    for (int i = 0; i < p.size(); ++i) mask.values[i] = p.values[i] > 0.5 ? 1.0 : 0.0;
    const std::string stem = fs::path(in).stem().string();
    write_gray(p, fs::path(cfg.data.out) / (stem + "_prob.pgm"));
    write_gray(mask, fs::path(cfg.data.out) / (stem + "_mask.pgm"));
    std::cout << in << " -> " << (fs::path(cfg.data.out) / (stem + "_mask.pgm")).string() << "\n";
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const ControlParams theta = load_checkpoint(cfg.data.checkpoint);
  const auto data = load_dataset(cfg.data.test_dir);
  if (data.empty()) throw InputError("no samples under " + cfg.data.test_dir);
  const fs::path csv = fs::path(cfg.data.out) / "eval.csv";
  auto out = open_out(csv);
  const std::string header = "sd,setting,loss,accuracy,dice\n";
  out << header;
  std::cout << header;
  char line[256];
  for (double sd : cfg.data.eval_sds) {
    const EvalRow r = evaluate(theta, data, sd, cfg.train.setting, cfg.data.seed);
    std::snprintf(line, sizeof(line), "%g,%d,%.6f,%.6f,%.6f\n", sd, static_cast<int>(cfg.train.setting), r.loss,
                  r.accuracy, r.dice);
    out << line;
    std::cout << line;
  }
  return 0;
}

int cmd_grad_check(int samples, double step, std::uint64_t seed) {
  const GradCheckReport r = grad_check(tiny_config(), 8, 2, samples, step, seed);
  std::printf("max_relative_error %.3e over %d parameters (loss %.6f)\n", r.max_relative_error, r.samples, r.loss);
  return r.max_relative_error <= 1e-5 ? 0 : 3;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return 1;
    case ErrorCategory::Data: return 2;
    case ErrorCategory::Numeric: return 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multigrid operator-splitting segmentation network"};
  app.require_subcommand(1);
  app.footer("Config keys (set in --config FILE or as --key value):\n" + describe_keys());

  std::string config_path;
  bool quiet = false;
  std::string csv_path;
  int fd_samples = 64;
  double fd_step = 1e-5;
  std::uint64_t fd_seed = 3;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->allow_extras();
    return sub;
  };
  auto* convergence = add_common(app.add_subcommand("convergence", "observed order of the splitting schemes"));
  convergence->add_option("--csv", csv_path, "write the CSV here instead of stdout");
  auto* gen = add_common(app.add_subcommand("gen-data", "generate the synthetic train/test sets"));
  auto* tr = add_common(app.add_subcommand("train", "progressive-noise training"));
  tr->add_flag("--quiet", quiet, "no per-epoch progress on stderr");
  auto* inf = add_common(app.add_subcommand("infer", "probability map and mask per input image"));
  auto* ev = add_common(app.add_subcommand("eval", "accuracy/dice over the noise sweep"));
  auto* gc = add_common(app.add_subcommand("grad-check", "finite-difference gradient check on the tiny network"));
  gc->add_option("--samples", fd_samples, "sampled parameters");
  gc->add_option("--step", fd_step, "difference step");
  gc->add_option("--seed", fd_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
    apply_overrides(cfg, parse_overrides(sub->remaining()));
    const std::string name = sub->get_name();
    if (name == "convergence") return cmd_convergence(csv_path);
    if (name == "gen-data") return cmd_gen_data(cfg);
    if (name == "train") return cmd_train(cfg, quiet);
    if (name == "infer") return cmd_infer(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "grad-check") return cmd_grad_check(fd_samples, fd_step, fd_seed);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
