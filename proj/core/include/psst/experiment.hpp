#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "psst/agents.hpp"
#include "psst/metrics.hpp"
#include "psst/world.hpp"

namespace psst {

inline constexpr char kVersionTag[] = "psst-0.1.0";

// Everything that, together with the world file, determines a run. The seed
// fully determines the run given the world.
struct RunConfig {
  EstimatorConfig estimator;
  double lambda = 0.1;

  int batch_size = 32;
  double train_hard_fraction = 0.0;
  double eval_hard_fraction = 0.5;

  double pretrain_speaker_lr = 0.5;
  double pretrain_listener_lr = 0.2;
  double joint_lr = 0.1;
  double lr_decay = 0.8;
  int lr_decay_every = 15;

  int speaker_pretrain_epochs = 20;
  int listener_pretrain_epochs = 10;
  int joint_epochs = 50;

  int embed_dim = 16;
  int hidden_dim = 32;
  int beam_width = 2;

  bool freeze_speaker = false;  // frozen-speaker ablation
  bool alternate = false;       // freeze one network per step, alternating

  std::uint64_t seed = 1;
  std::filesystem::path out_dir;  // empty: keep everything in memory

  void validate() const;
};

struct EvalResult {
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double cider = 0.0;
};

struct PretrainLog {
  double initial_val_nll = 0.0;
  std::vector<double> speaker_val_nll;      // per speaker epoch
  std::vector<double> listener_val_recall1; // per listener epoch
};

struct PretrainResult {
  SpeakerParams speaker;
  ListenerParams listener;
  PretrainLog log;
};

// MLE speaker pretraining on training references, hinge listener
// pretraining on (reference caption, scene) pairs.
PretrainResult pretrain(const World& world, const RunConfig& config);

struct RunManifest {
  std::string method;
  RunConfig config;
  double wall_seconds = 0.0;
  int best_epoch = -1;
  EvalResult best_metrics;
  EvalResult final_metrics;
  std::string speaker_checkpoint;
  std::string listener_checkpoint;
  std::string curve_file;
  std::string version = kVersionTag;
  bool failed = false;
  std::string error;

  std::string to_json() const;
};

struct JointResult {
  RunManifest manifest;
  std::vector<CurvePoint> curve;  // one point per epoch
  SpeakerParams best_speaker;
  ListenerParams best_listener;
};

// Joint speaker/listener optimization of the weighted two-part objective
// with per-epoch validation, early stopping on validation recall@10.
JointResult joint_train(const World& world, const RunConfig& config,
                        SpeakerParams speaker, ListenerParams listener);

// Beam-decodes every caption in the split, ranks all split scenes per
// caption by listener score, reports recall@{1,5,10} and corpus CIDEr.
// k is clamped to the pool size.
EvalResult evaluate(const World& world, const NGramStats& stats,
                    SpeakerParams& speaker, ListenerParams& listener,
                    Split split, const RunConfig& config);

// Retrieval with the reference captions themselves (pool upper bound).
EvalResult evaluate_references(const World& world, ListenerParams& listener,
                               Split split, const RunConfig& config);

struct SweepGrid {
  std::vector<EstimatorKind> methods;
  std::vector<double> lambdas;
  std::vector<double> rhos;  // applied to PSST methods only
  std::vector<std::uint64_t> seeds;
};

struct SweepCellResult {
  RunConfig config;
  bool failed = false;
  std::string error;
  std::vector<CurvePoint> curve;
  int best_epoch = -1;
  EvalResult best_metrics;
};

struct SweepResult {
  std::vector<SweepCellResult> cells;
  std::vector<CurvePoint> consolidated;
};

// Cross product of the grid, each cell an independent pretrain+train run.
// Cells execute on a worker pool; per-cell outputs and RNG are disjoint, so
// serial and concurrent execution produce identical results.
SweepResult sweep(const World& world, const RunConfig& base,
                  const SweepGrid& grid, int workers);

// The best-validation row of each run (the early-stopped operating point).
std::vector<CurvePoint> best_rows_per_run(std::span<const CurvePoint> points);

}  // namespace psst
