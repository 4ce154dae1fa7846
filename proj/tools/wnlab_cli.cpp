// wnlab: adversarial attack / defense laboratory around a WNLL-interpolating
// classifier head. Subcommands cover training, attack crafting, TVM defense
// sweeps, cross-head transfer evaluation, feature export and sample dumps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "wnlab/errors.hpp"
#include "wnlab/harness.hpp"

using nlohmann::json;
using namespace wnlab;

namespace {

// Config-file values take precedence over command-line flags.
void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("dataset", cfg.dataset);
  get("cifar_dir", cfg.cifar_dir);
  if (j.contains("class_subset")) {
    cfg.class_subset.clear();
    for (int c : j.at("class_subset")) cfg.class_subset.insert(c);
  }
  get("per_class_cap", cfg.per_class_cap);
  get("n_train", cfg.n_train);
  get("n_test", cfg.n_test);
  get("noise", cfg.noise);
  get("grating_size", cfg.grating_size);
  get("adversarial_training", cfg.adversarial_training);
  get("attacks", cfg.attacks);
  get("eps_grid", cfg.eps_grid);
  get("train_modes", cfg.train_modes);
  get("out_dir", cfg.out_dir);
  get("seed", cfg.seed);
  if (j.contains("train")) {
    const json& t = j.at("train");
    auto gt = [&](const char* key, auto& field) {
      if (t.contains(key)) field = t.at(key).get<std::decay_t<decltype(field)>>();
    };
    gt("alternations", cfg.train.alternations);
    gt("epochs_linear", cfg.train.epochs_linear);
    gt("epochs_wnll", cfg.train.epochs_wnll);
    gt("ifgsm_iters", cfg.train.ifgsm_iters);
    gt("epsilon", cfg.train.epsilon);
    gt("alpha", cfg.train.alpha);
    gt("strict_ifgsm", cfg.train.strict_ifgsm);
    gt("lr", cfg.train.lr);
    gt("lr_decay", cfg.train.lr_decay);
    gt("batch_size", cfg.train.batch_size);
    gt("template_size", cfg.train.template_size);
    gt("knn", cfg.train.knn);
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    auto ga = [&](const char* key, auto& field) {
      if (a.contains(key)) field = a.at(key).get<std::decay_t<decltype(field)>>();
    };
    ga("epsilon", cfg.attack.epsilon);
    ga("alpha", cfg.attack.alpha);
    ga("iters", cfg.attack.iters);
    ga("c", cfg.attack.c);
    ga("kappa", cfg.attack.kappa);
    ga("adam_lr", cfg.attack.adam_lr);
    ga("cw_best", cfg.attack.cw_best);
  }
  if (j.contains("tvm")) {
    const json& t = j.at("tvm");
    auto gt = [&](const char* key, auto& field) {
      if (t.contains(key)) field = t.at(key).get<std::decay_t<decltype(field)>>();
    };
    gt("keep_prob", cfg.tvm.keep_prob);
    gt("lambda_tv", cfg.tvm.lambda_tv);
    gt("iters", cfg.tvm.iters);
    gt("step", cfg.tvm.step);
  }
}

void add_common_flags(CLI::App* sub, ExperimentConfig& cfg, std::string& config_file) {
  sub->add_option("--config", config_file, "JSON config file (overrides flags)");
  sub->add_option("--dataset", cfg.dataset, "blobs | moons | gratings | cifar10");
  sub->add_option("--cifar-dir", cfg.cifar_dir, "directory with CIFAR-10 binary batches");
  sub->add_option("--n-train", cfg.n_train, "synthetic training set size");
  sub->add_option("--n-test", cfg.n_test, "synthetic test set size");
  sub->add_option("--noise", cfg.noise, "synthetic noise level");
  sub->add_option("--grating-size", cfg.grating_size, "grating image side length");
  sub->add_option("--out-dir", cfg.out_dir, "output directory");
  sub->add_option("--seed", cfg.seed, "master RNG seed");
  sub->add_option("--knn", cfg.train.knn, "graph neighbor count");
  sub->add_option("--template-size", cfg.train.template_size, "template set size (0 = default)");
  sub->add_option("--modes", cfg.train_modes, "training data modes");
}

int run_selftest() {
  // quick end-to-end smoke: train, attack, defend on a tiny blobs problem
  ExperimentConfig cfg;
  cfg.dataset = "blobs";
  cfg.n_train = 120;
  cfg.n_test = 60;
  cfg.train.epochs_linear = 5;
  cfg.train.batch_size = 16;
  cfg.eps_grid = {0.0, 0.05};
  cfg.attacks = {"fgsm"};
  cfg.out_dir = std::filesystem::temp_directory_path() / "wnlab_selftest";
  cfg.seed = 7;
  run_training_task(cfg);
  ExperimentReport r = run_defense_sweep(cfg);
  if (r.rows.empty()) throw std::runtime_error("selftest: empty report");
  for (const auto& row : r.rows)
    if (row.epsilon == 0.0 && row.adv_acc != row.clean_acc)
      throw std::runtime_error("selftest: zero-budget attack changed accuracy");
  std::cout << "selftest ok (" << r.rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wnlab: adversarial attack/defense laboratory"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_file;
  int dump_count = 4;
  std::string feature_mode = "pca2";
  std::string feature_tag = "test";
  std::string attack_name = "fgsm";
  std::string head = "softmax";

  auto* train = app.add_subcommand("train", "train one checkpoint per data mode");
  add_common_flags(train, cfg, config_file);
  train->add_flag("--adversarial", cfg.adversarial_training, "PGD adversarial training");
  train->add_option("--alternations", cfg.train.alternations);
  train->add_option("--epochs-linear", cfg.train.epochs_linear);
  train->add_option("--epochs-wnll", cfg.train.epochs_wnll);
  train->add_option("--ifgsm-iters", cfg.train.ifgsm_iters);
  train->add_option("--train-epsilon", cfg.train.epsilon);
  train->add_option("--lr", cfg.train.lr);
  train->add_option("--batch-size", cfg.train.batch_size);

  auto* attack = app.add_subcommand("attack", "craft one adversarial batch, print audit");
  add_common_flags(attack, cfg, config_file);
  attack->add_option("--attack", attack_name, "fgsm | ifgsm | cw");
  attack->add_option("--head", head, "softmax | wnll");
  attack->add_option("--epsilon", cfg.attack.epsilon);
  attack->add_option("--alpha", cfg.attack.alpha);
  attack->add_option("--iters", cfg.attack.iters);
  attack->add_option("--cw-c", cfg.attack.c);
  attack->add_option("--kappa", cfg.attack.kappa);

  auto* sweep = app.add_subcommand("sweep", "defense sweep over modes/attacks/eps/heads");
  add_common_flags(sweep, cfg, config_file);
  sweep->add_option("--attacks", cfg.attacks);
  sweep->add_option("--eps-grid", cfg.eps_grid);
  sweep->add_option("--iters", cfg.attack.iters);
  sweep->add_option("--alpha", cfg.attack.alpha);
  sweep->add_option("--tvm-p", cfg.tvm.keep_prob);
  sweep->add_option("--tvm-lambda", cfg.tvm.lambda_tv);
  sweep->add_option("--tvm-iters", cfg.tvm.iters);
  app.add_subcommand("defend", "alias of sweep")->parse_complete_callback([] {});

  auto* transfer = app.add_subcommand("transfer", "cross-head transfer evaluation");
  add_common_flags(transfer, cfg, config_file);
  transfer->add_option("--attacks", cfg.attacks);
  transfer->add_option("--eps-grid", cfg.eps_grid);
  transfer->add_option("--iters", cfg.attack.iters);
  transfer->add_option("--alpha", cfg.attack.alpha);

  auto* exportf = app.add_subcommand("export-features", "buffer-block features to CSV");
  add_common_flags(exportf, cfg, config_file);
  exportf->add_option("--projection", feature_mode, "pca2 | raw");
  exportf->add_option("--tag", feature_tag, "split tag recorded per row");

  auto* dump = app.add_subcommand("dump-samples", "original/adversarial/TVM pixmap triples");
  add_common_flags(dump, cfg, config_file);
  dump->add_option("--count", dump_count, "number of test images");
  dump->add_option("--epsilon", cfg.attack.epsilon);

  auto* selftest = app.add_subcommand("selftest", "small end-to-end smoke run");
  (void)selftest;

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_file.empty()) apply_config_file(cfg, config_file);

    if (app.got_subcommand("selftest")) return run_selftest();

    if (app.got_subcommand("train")) {
      cfg.task = "train";
      run_training_task(cfg);
      return 0;
    }
    if (app.got_subcommand("attack")) {
      cfg.task = "attack";
      cfg.attacks = {attack_name};
      cfg.eps_grid = {cfg.attack.epsilon};
      cfg.validate();
      DataSplit data = load_experiment_data(cfg);
      std::string path = checkpoint_path(cfg, cfg.train_modes.front());
      if (!std::filesystem::exists(path))
        throw std::runtime_error("attack: missing checkpoint " + path);
      TwoBranchModel model = load_checkpoint(path).model;
      Rng rng = Rng(cfg.seed).substream("template:eval");
      int tsz = cfg.train.effective_template_size(data.train.n(), data.train.num_classes);
      Dataset tpl = reserve_template(data.train, tsz, rng).tpl;
      GradientOracle oracle = head == "wnll" ? make_wnll_oracle(model, tpl, cfg.train.knn)
                                             : make_linear_oracle(model);
      Predictor pred = head == "wnll" ? make_wnll_predictor(model, tpl, cfg.train.knn)
                                      : make_linear_predictor(model);
      AdversarialBatch b;
      if (attack_name == "cw")
        b = cw_l2(model, data.test.x, data.test.y, cfg.attack, pred);
      else if (attack_name == "ifgsm")
        b = ifgsm(oracle, data.test.x, data.test.y, cfg.attack, pred);
      else
        b = fgsm(oracle, data.test.x, data.test.y, cfg.attack, pred);
      double succ = 0;
      for (char s : b.success) succ += s;
      std::cout << "head=" << head << " attack=" << attack_name
                << " clean_acc=" << accuracy(pred(data.test.x), data.test.y)
                << " adv_acc=" << accuracy(pred(b.perturbed), data.test.y)
                << " success_rate=" << succ / static_cast<double>(b.success.size())
                << " linf_max=" << (b.linf_distance.size() ? b.linf_distance.maxCoeff() : 0.0)
                << " l2_max=" << (b.l2_distance.size() ? b.l2_distance.maxCoeff() : 0.0) << "\n";
      return 0;
    }
    if (app.got_subcommand("sweep") || app.got_subcommand("defend")) {
      cfg.task = "sweep";
      ExperimentReport r = run_defense_sweep(cfg);
      emit_report(r, cfg.out_dir);
      std::cout << "wrote " << r.rows.size() << " rows to " << cfg.out_dir << "/report.csv\n";
      return 0;
    }
    if (app.got_subcommand("transfer")) {
      cfg.task = "transfer";
      ExperimentReport r = run_transfer_eval(cfg);
      emit_report(r, cfg.out_dir);
      std::cout << "wrote " << r.rows.size() << " rows to " << cfg.out_dir << "/report.csv\n";
      return 0;
    }
    if (app.got_subcommand("export-features")) {
      cfg.task = "export-features";
      cfg.validate();
      DataSplit data = load_experiment_data(cfg);
      std::string path = checkpoint_path(cfg, cfg.train_modes.front());
      if (!std::filesystem::exists(path))
        throw std::runtime_error("export-features: missing checkpoint " + path);
      TwoBranchModel model = load_checkpoint(path).model;
      FeatureExport fx = export_features(model, data.test, feature_mode, feature_tag);
      std::filesystem::create_directories(cfg.out_dir);
      write_feature_file(fx, cfg.out_dir + "/features.csv");
      std::cout << "wrote " << fx.projected.rows() << " rows to " << cfg.out_dir
                << "/features.csv\n";
      return 0;
    }
    if (app.got_subcommand("dump-samples")) {
      dump_samples(cfg, dump_count);
      std::cout << "wrote " << dump_count << " sample triples to " << cfg.out_dir << "\n";
      return 0;
    }
    throw std::invalid_argument("no subcommand");
  } catch (const AuditError& e) {
    std::cerr << "audit failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
