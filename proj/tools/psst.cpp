// Command-line front end: world generation, pretraining, joint training,
// sweeps, evaluation, and the estimator oracle report.
//
// Exit codes: 0 success, 1 usage/config error, 2 numerical abort,
// 3 oracle gate failure.

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "psst/errors.hpp"
#include "psst/experiment.hpp"
#include "psst/oracle.hpp"

namespace {

using namespace psst;

std::filesystem::path resolve_out(const std::string& out) {
  std::filesystem::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("PSST_OUTPUT_ROOT")) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

void add_run_flags(CLI::App* cmd, RunConfig& config, std::string& method,
                   std::string& baseline) {
  cmd->add_option("--method", method,
                  "estimator: reinforce, st-mn, st-gs, psst-mn, psst-gs");
  cmd->add_option("--rho", config.estimator.rho,
                  "relaxed fraction for PSST methods");
  cmd->add_option("--tau", config.estimator.tau,
                  "Gumbel-softmax temperature");
  cmd->add_option("--baseline", baseline,
                  "reward baseline: none, greedy, ground-truth");
  cmd->add_flag("--per-token-gate", config.estimator.per_token_gate,
                "experimental: draw the PSST gate per token");
  cmd->add_option("--lambda", config.lambda, "discriminative loss weight");
  cmd->add_option("--batch-size", config.batch_size, "scenes per batch");
  cmd->add_option("--train-hard-fraction", config.train_hard_fraction,
                  "hard-distractor fraction during training");
  cmd->add_option("--eval-hard-fraction", config.eval_hard_fraction,
                  "hard-distractor fraction for batch evaluations");
  cmd->add_option("--lr", config.joint_lr, "joint training learning rate");
  cmd->add_option("--pretrain-speaker-lr", config.pretrain_speaker_lr,
                  "speaker pretraining learning rate");
  cmd->add_option("--pretrain-listener-lr", config.pretrain_listener_lr,
                  "listener pretraining learning rate");
  cmd->add_option("--lr-decay", config.lr_decay, "learning rate decay factor");
  cmd->add_option("--lr-decay-every", config.lr_decay_every,
                  "epochs between decay steps");
  cmd->add_option("--speaker-pretrain-epochs", config.speaker_pretrain_epochs,
                  "speaker MLE pretraining epochs");
  cmd->add_option("--listener-pretrain-epochs",
                  config.listener_pretrain_epochs,
                  "listener pretraining epochs");
  cmd->add_option("--joint-epochs", config.joint_epochs,
                  "joint training epochs");
  cmd->add_option("--embed-dim", config.embed_dim, "token embedding size");
  cmd->add_option("--hidden-dim", config.hidden_dim, "recurrent state size");
  cmd->add_option("--beam-width", config.beam_width,
                  "beam width for evaluation decoding");
  cmd->add_flag("--freeze-speaker", config.freeze_speaker,
                "frozen-speaker ablation");
  cmd->add_flag("--alternate", config.alternate,
                "alternately freeze one network per step");
  cmd->add_option("--seed", config.seed, "run seed");
}

void finish_config(RunConfig& config, const std::string& method,
                   const std::string& baseline) {
  config.estimator.kind = method_from_name(method);
  config.estimator.baseline = baseline_from_name(baseline);
  config.validate();
}

int run_oracle(const RunConfig& config, std::size_t samples,
               std::uint64_t seed) {
  AgentConfig agents;
  agents.vocab_size = 3;
  agents.scene_dim = 4;
  agents.embed_dim = 4;
  agents.hidden_dim = 6;

  Rng rng(seed);
  std::vector<double> table(9);
  for (double& v : table) v = rng.uniform();
  std::size_t ref_code = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (table[i] < table[ref_code]) ref_code = i;
  }
  std::vector<int> reference{static_cast<int>(ref_code / 3),
                             static_cast<int>(ref_code % 3)};
  EnumInstance instance =
      EnumInstance::from_table(3, 2, table, reference, agents);

  Rng init_rng = rng.fork(1);
  SpeakerParams speaker = SpeakerParams::init(agents, init_rng);
  Rng sample_rng = rng.fork(2);
  GradientReport report = estimator_report(instance, speaker,
                                           config.estimator, samples,
                                           sample_rng);
  std::cout << report.to_text(speaker_coordinate_names(speaker));

  bool gate_ok = true;
  if (config.estimator.kind == EstimatorKind::kReinforce) {
    gate_ok = report.unbiasedness_gate();
    std::cout << "unbiasedness gate (|bias| <= 3 stderr): "
              << (gate_ok ? "PASS" : "FAIL") << "\n";
  } else if (config.estimator.is_psst() && config.estimator.rho >= 1.0) {
    for (double s : report.std_err) gate_ok = gate_ok && s == 0.0;
    std::cout << "determinism gate (stderr == 0 at rho=1): "
              << (gate_ok ? "PASS" : "FAIL") << "\n";
    std::cout << "relaxation-gap |bias|: " << report.max_abs_bias() << "\n";
  } else {
    std::cout << "report only (no gate for this method); max |bias| = "
              << report.max_abs_bias() << "\n";
  }
  return gate_ok ? 0 : 3;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const std::string& s : items) out.push_back(std::stod(s));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale speaker/listener training with discrete-layer "
               "gradient estimators"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file");

  // world-gen
  WorldConfig world_config;
  std::string world_out = "world.txt";
  auto* cmd_world = app.add_subcommand(
      "world-gen", "generate a world file (scenes + references)");
  cmd_world->add_option("--out", world_out, "output world file");
  cmd_world->add_option("--num-attributes", world_config.num_attributes);
  cmd_world->add_option("--values-per-attribute",
                        world_config.values_per_attribute);
  cmd_world->add_option("--synonyms-per-value",
                        world_config.synonyms_per_value);
  cmd_world->add_option("--refs-per-scene", world_config.refs_per_scene);
  cmd_world->add_option("--max-caption-len", world_config.max_caption_len);
  cmd_world->add_option("--train-scenes", world_config.train_scenes);
  cmd_world->add_option("--val-scenes", world_config.val_scenes);
  cmd_world->add_option("--test-scenes", world_config.test_scenes);
  cmd_world->add_option("--seed", world_config.seed);

  // shared run flags
  RunConfig run;
  std::string method = "psst-mn";
  std::string baseline = "ground-truth";
  std::string world_file, out_dir, speaker_ckpt, listener_ckpt;
  std::string split = "test";

  auto* cmd_pretrain = app.add_subcommand(
      "pretrain", "MLE-pretrain the speaker and hinge-pretrain the listener");
  cmd_pretrain->add_option("--world", world_file, "world file")->required();
  cmd_pretrain->add_option("--out", out_dir, "output directory")->required();
  add_run_flags(cmd_pretrain, run, method, baseline);

  auto* cmd_train = app.add_subcommand(
      "train", "joint speaker/listener training with a chosen estimator");
  cmd_train->add_option("--world", world_file, "world file")->required();
  cmd_train->add_option("--out", out_dir, "output directory")->required();
  cmd_train->add_option("--speaker", speaker_ckpt,
                        "speaker checkpoint (default: pretrain first)");
  cmd_train->add_option("--listener", listener_ckpt,
                        "listener checkpoint (default: pretrain first)");
  add_run_flags(cmd_train, run, method, baseline);

  std::vector<std::string> grid_methods, grid_lambdas, grid_rhos;
  std::vector<std::uint64_t> grid_seeds;
  int workers = 1;
  auto* cmd_sweep = app.add_subcommand(
      "sweep", "grid of independent runs over method/lambda/rho/seed");
  cmd_sweep->add_option("--world", world_file, "world file")->required();
  cmd_sweep->add_option("--out", out_dir, "output directory")->required();
  cmd_sweep->add_option("--methods", grid_methods, "method grid");
  cmd_sweep->add_option("--lambdas", grid_lambdas, "lambda grid");
  cmd_sweep->add_option("--rhos", grid_rhos, "rho grid (PSST methods)");
  cmd_sweep->add_option("--seeds", grid_seeds, "seed grid");
  cmd_sweep->add_option("--workers", workers, "worker threads");
  add_run_flags(cmd_sweep, run, method, baseline);

  auto* cmd_eval = app.add_subcommand(
      "evaluate", "beam-decode a split and report retrieval + naturalness");
  cmd_eval->add_option("--world", world_file, "world file")->required();
  cmd_eval->add_option("--speaker", speaker_ckpt, "speaker checkpoint")
      ->required();
  cmd_eval->add_option("--listener", listener_ckpt, "listener checkpoint")
      ->required();
  cmd_eval->add_option("--split", split, "train, val, or test");
  add_run_flags(cmd_eval, run, method, baseline);

  std::size_t oracle_samples = 20000;
  std::uint64_t oracle_seed = 7;
  auto* cmd_oracle = app.add_subcommand(
      "oracle", "estimator gradient report against exact enumeration");
  cmd_oracle->add_option("--samples", oracle_samples,
                         "number of gradient samples");
  cmd_oracle->add_option("--instance-seed", oracle_seed,
                         "seed for the enumerable instance");
  add_run_flags(cmd_oracle, run, method, baseline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (cmd_world->parsed()) {
      World world = World::generate(world_config);
      world.save(resolve_out(world_out));
      std::cout << "wrote " << resolve_out(world_out).string() << " ("
                << world.scenes(Split::kTrain).size() << " train, "
                << world.scenes(Split::kVal).size() << " val, "
                << world.scenes(Split::kTest).size() << " test scenes, vocab "
                << world.vocab().size() << ")\n";
      return 0;
    }

    finish_config(run, method, baseline);

    if (cmd_oracle->parsed()) {
      return run_oracle(run, oracle_samples, oracle_seed);
    }

    World world = World::load(world_file);

    if (cmd_pretrain->parsed()) {
      run.out_dir = resolve_out(out_dir);
      PretrainResult result = pretrain(world, run);
      std::cout << "initial val NLL " << result.log.initial_val_nll << "\n";
      if (!result.log.speaker_val_nll.empty()) {
        std::cout << "final speaker val NLL "
                  << result.log.speaker_val_nll.back() << "\n";
      }
      if (!result.log.listener_val_recall1.empty()) {
        std::cout << "final listener val recall@1 "
                  << result.log.listener_val_recall1.back() << "\n";
      }
      std::cout << "checkpoints in " << run.out_dir.string() << "\n";
      return 0;
    }

    if (cmd_train->parsed()) {
      run.out_dir = resolve_out(out_dir);
      SpeakerParams speaker;
      ListenerParams listener;
      if (!speaker_ckpt.empty() != !listener_ckpt.empty()) {
        throw ConfigError("train: supply both checkpoints or neither");
      }
      if (!speaker_ckpt.empty()) {
        speaker = SpeakerParams::from_checkpoint(
            ad::load_checkpoint(speaker_ckpt));
        listener = ListenerParams::from_checkpoint(
            ad::load_checkpoint(listener_ckpt));
      } else {
        PretrainResult pre = pretrain(world, run);
        speaker = std::move(pre.speaker);
        listener = std::move(pre.listener);
      }
      JointResult result = joint_train(world, run, std::move(speaker),
                                       std::move(listener));
      std::cout << "best epoch " << result.manifest.best_epoch
                << ": recall@1 " << result.manifest.best_metrics.recall1
                << ", recall@10 " << result.manifest.best_metrics.recall10
                << ", cider " << result.manifest.best_metrics.cider << "\n";
      std::cout << "outputs in " << run.out_dir.string() << "\n";
      return 0;
    }

    if (cmd_sweep->parsed()) {
      run.out_dir = resolve_out(out_dir);
      SweepGrid grid;
      for (const std::string& m : grid_methods) {
        grid.methods.push_back(method_from_name(m));
      }
      grid.lambdas = parse_doubles(grid_lambdas);
      grid.rhos = parse_doubles(grid_rhos);
      grid.seeds = grid_seeds;
      SweepResult result = sweep(world, run, grid, workers);
      int failed = 0;
      for (const SweepCellResult& cell : result.cells) {
        if (cell.failed) {
          ++failed;
          std::cerr << "cell failed: " << cell.error << "\n";
        }
      }
      std::cout << result.cells.size() << " cells, " << failed
                << " failed; consolidated CSV in "
                << (run.out_dir / "sweep.csv").string() << "\n";
      return 0;
    }

    if (cmd_eval->parsed()) {
      SpeakerParams speaker =
          SpeakerParams::from_checkpoint(ad::load_checkpoint(speaker_ckpt));
      ListenerParams listener = ListenerParams::from_checkpoint(
          ad::load_checkpoint(listener_ckpt));
      NGramStats stats = NGramStats::build(world, Split::kTrain);
      EvalResult r = evaluate(world, stats, speaker, listener,
                              split_from_name(split), run);
      std::cout << "split " << split << ": recall@1 " << r.recall1
                << ", recall@5 " << r.recall5 << ", recall@10 " << r.recall10
                << ", cider " << r.cider << "\n";
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
