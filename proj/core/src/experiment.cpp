#include "psst/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "psst/errors.hpp"
#include "psst/oracle.hpp"

namespace psst {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

AgentConfig agent_config_for(const World& world, const RunConfig& config) {
  AgentConfig a;
  a.vocab_size = world.vocab().size();
  a.scene_dim = world.scene_input_dim();
  a.embed_dim = config.embed_dim;
  a.hidden_dim = config.hidden_dim;
  return a;
}

double decayed_lr(double base, double decay, int every, int epoch) {
  return base * std::pow(decay, every > 0 ? epoch / every : 0);
}

void apply_sgd(const std::vector<BoundParam>& bindings, double lr) {
  for (const BoundParam& b : bindings) {
    if (!b.node->requires_grad) continue;
    ad::Tensor& t = *b.tensor;
    const ad::Tensor& g = b.node->grad;
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] -= lr * g[i];
  }
}

// Mean teacher-forced NLL over every (scene, reference) pair of a split.
double split_nll(const World& world, SpeakerParams& speaker,
                 const AgentConfig& agents, Split split) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Scene& scene : world.scenes(split)) {
    const ad::Tensor input = scene_input(
        scene, world.config().values_per_attribute);
    for (const ReferenceCaption& ref : world.references_for(scene.id)) {
      ad::Tape tape;
      SpeakerGraph graph = SpeakerGraph::bind(tape, speaker, false);
      total += speaker_mle_loss(tape, graph, input, ref.tokens)->value[0];
      ++count;
    }
  }
  (void)agents;
  return total / static_cast<double>(count);
}

struct RetrievalSetup {
  std::vector<ad::Node*> scene_encodings;
  std::vector<int> scene_ids;
};

RetrievalSetup encode_split_scenes(ad::Tape& tape, const ListenerGraph& graph,
                                   const World& world, Split split) {
  RetrievalSetup setup;
  for (const Scene& scene : world.scenes(split)) {
    setup.scene_encodings.push_back(graph.encode_scene(
        tape, scene_input(scene, world.config().values_per_attribute)));
    setup.scene_ids.push_back(scene.id);
  }
  return setup;
}

EvalResult evaluate_captions(const World& world, const NGramStats& stats,
                             ListenerParams& listener, Split split,
                             const std::vector<std::vector<int>>& captions,
                             bool with_cider) {
  const auto& scenes = world.scenes(split);
  ad::Tape tape;
  ListenerGraph graph = ListenerGraph::bind(tape, listener, false);
  RetrievalSetup setup = encode_split_scenes(tape, graph, world, split);

  std::vector<RetrievalQuery> queries;
  queries.reserve(scenes.size());
  double cider_total = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::vector<TokenEmission> emissions = emissions_from_tokens(
        tape, captions[i], world.vocab().size());
    ad::Node* cap = graph.encode_caption(tape, emissions);
    RetrievalQuery q;
    q.target_id = scenes[i].id;
    for (std::size_t j = 0; j < setup.scene_encodings.size(); ++j) {
      q.scored_pool.push_back(
          {setup.scene_ids[j],
           tape.cosine(cap, setup.scene_encodings[j])->value[0]});
    }
    queries.push_back(std::move(q));
    if (with_cider) {
      std::vector<std::vector<int>> refs;
      for (const ReferenceCaption& r : world.references_for(scenes[i].id)) {
        refs.push_back(r.tokens);
      }
      cider_total += cider(captions[i], refs, stats);
    }
  }

  const int pool = static_cast<int>(scenes.size());
  EvalResult result;
  result.recall1 = recall_at_k(queries, std::min(1, pool));
  result.recall5 = recall_at_k(queries, std::min(5, pool));
  result.recall10 = recall_at_k(queries, std::min(10, pool));
  result.cider =
      with_cider ? cider_total / static_cast<double>(scenes.size()) : 0.0;
  return result;
}

}  // namespace

void RunConfig::validate() const {
  estimator.validate();
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("run: lambda must lie in [0, 1]");
  }
  if (batch_size < 2) throw ConfigError("run: batch_size must be >= 2");
  if (pretrain_speaker_lr <= 0.0 || pretrain_listener_lr <= 0.0 ||
      joint_lr <= 0.0) {
    throw ConfigError("run: learning rates must be positive");
  }
  if (lr_decay <= 0.0 || lr_decay > 1.0) {
    throw ConfigError("run: lr_decay must lie in (0, 1]");
  }
  if (lr_decay_every < 1) throw ConfigError("run: lr_decay_every must be >= 1");
  if (speaker_pretrain_epochs < 0 || listener_pretrain_epochs < 0 ||
      joint_epochs < 0) {
    throw ConfigError("run: epoch counts must be non-negative");
  }
  if (embed_dim < 1 || hidden_dim < 1) {
    throw ConfigError("run: agent dimensions must be positive");
  }
  if (beam_width < 1) throw ConfigError("run: beam_width must be >= 1");
}

PretrainResult pretrain(const World& world, const RunConfig& config) {
  config.validate();
  const AgentConfig agents = agent_config_for(world, config);
  Rng root(config.seed);
  Rng speaker_rng = root.fork(1);
  Rng listener_rng = root.fork(2);
  Rng train_rng = root.fork(4);

  PretrainResult result{SpeakerParams::init(agents, speaker_rng),
                        ListenerParams::init(agents, listener_rng),
                        {}};
  result.log.initial_val_nll =
      split_nll(world, result.speaker, agents, Split::kVal);

  const auto& train = world.scenes(Split::kTrain);
  const int vpa = world.config().values_per_attribute;
  const std::filesystem::path ckpt_dir =
      config.out_dir.empty() ? std::filesystem::path()
                             : config.out_dir / "pretrain";
  if (!ckpt_dir.empty()) std::filesystem::create_directories(ckpt_dir);

  // Speaker: teacher-forced MLE over shuffled (scene, reference) pairs.
  for (int epoch = 0; epoch < config.speaker_pretrain_epochs; ++epoch) {
    const double lr = decayed_lr(config.pretrain_speaker_lr, config.lr_decay,
                                 config.lr_decay_every, epoch);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      std::swap(order[i], order[i + train_rng.uniform_int(order.size() - i)]);
    }
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      ad::Tape tape;
      SpeakerGraph graph = SpeakerGraph::bind(tape, result.speaker, true);
      std::vector<ad::Node*> losses;
      for (std::size_t i = start; i < end; ++i) {
        const Scene& scene = train[order[i]];
        const auto& refs = world.references_for(scene.id);
        const auto& ref = refs[train_rng.uniform_int(refs.size())];
        losses.push_back(speaker_mle_loss(tape, graph,
                                          scene_input(scene, vpa),
                                          ref.tokens));
      }
      ad::Node* loss = tape.scale(tape.add_n(losses),
                                  1.0 / static_cast<double>(losses.size()));
      tape.backward(loss);
      apply_sgd(graph.bindings, lr);
    }
    result.log.speaker_val_nll.push_back(
        split_nll(world, result.speaker, agents, Split::kVal));
    if (!ckpt_dir.empty()) {
      save_params(ckpt_dir / ("speaker_epoch_" + std::to_string(epoch) +
                              ".ckpt"),
                  result.speaker.to_checkpoint());
    }
  }

  // Listener: two-hinge retrieval loss on reference captions.
  for (int epoch = 0; epoch < config.listener_pretrain_epochs; ++epoch) {
    const double lr = decayed_lr(config.pretrain_listener_lr, config.lr_decay,
                                 config.lr_decay_every, epoch);
    const std::size_t steps =
        std::max<std::size_t>(1, train.size() / config.batch_size);
    for (std::size_t step = 0; step < steps; ++step) {
      Batch batch = world.sample_batch(Split::kTrain, config.batch_size,
                                       config.train_hard_fraction, train_rng);
      std::vector<const Scene*> members{&batch.target};
      for (const Scene& d : batch.distractors) members.push_back(&d);

      ad::Tape tape;
      ListenerGraph graph = ListenerGraph::bind(tape, result.listener, true);
      std::vector<ad::Node*> captions, scenes_enc;
      for (const Scene* scene : members) {
        const auto& refs = world.references_for(scene->id);
        const auto& ref = refs[train_rng.uniform_int(refs.size())];
        captions.push_back(graph.encode_caption(
            tape,
            emissions_from_tokens(tape, ref.tokens, world.vocab().size())));
        scenes_enc.push_back(
            graph.encode_scene(tape, scene_input(*scene, vpa)));
      }
      ScoreMatrix scores(members.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = 0; j < members.size(); ++j) {
          scores.at(i, j) = tape.cosine(captions[i], scenes_enc[j]);
        }
      }
      ad::Node* loss = disc_hinge_loss(tape, scores);
      tape.backward(loss);
      apply_sgd(graph.bindings, lr);
    }
    result.log.listener_val_recall1.push_back(
        evaluate_references(world, result.listener, Split::kVal, config)
            .recall1);
    if (!ckpt_dir.empty()) {
      save_params(ckpt_dir / ("listener_epoch_" + std::to_string(epoch) +
                              ".ckpt"),
                  result.listener.to_checkpoint());
    }
  }

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    save_params(config.out_dir / "speaker.ckpt",
                result.speaker.to_checkpoint());
    save_params(config.out_dir / "listener.ckpt",
                result.listener.to_checkpoint());
  }
  return result;
}

EvalResult evaluate(const World& world, const NGramStats& stats,
                    SpeakerParams& speaker, ListenerParams& listener,
                    Split split, const RunConfig& config) {
  const AgentConfig agents = agent_config_for(world, config);
  const auto& scenes = world.scenes(split);
  if (scenes.empty()) throw ContractError("evaluate: empty split");
  std::vector<std::vector<int>> captions;
  captions.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    captions.push_back(beam_decode(
        speaker, agents,
        scene_input(scene, world.config().values_per_attribute),
        config.beam_width, world.config().max_caption_len));
  }
  return evaluate_captions(world, stats, listener, split, captions, true);
}

EvalResult evaluate_references(const World& world, ListenerParams& listener,
                               Split split, const RunConfig& config) {
  (void)config;
  const auto& scenes = world.scenes(split);
  if (scenes.empty()) throw ContractError("evaluate: empty split");
  std::vector<std::vector<int>> captions;
  captions.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    captions.push_back(world.references_for(scene.id)[0].tokens);
  }
  NGramStats unused;
  return evaluate_captions(world, unused, listener, split, captions, false);
}

namespace {

struct StepContext {
  const World& world;
  const RunConfig& config;
  const NGramStats& stats;
  const AgentConfig& agents;
  SpeakerParams& speaker;
  ListenerParams& listener;
  Rng& rng;
  double lr;
  bool update_speaker;
  bool update_listener;
};

void joint_step(StepContext& ctx) {
  const int vpa = ctx.world.config().values_per_attribute;
  const int max_len = ctx.world.config().max_caption_len;
  const int vocab = ctx.world.vocab().size();

  Batch batch =
      ctx.world.sample_batch(Split::kTrain, ctx.config.batch_size,
                             ctx.config.train_hard_fraction, ctx.rng);
  std::vector<const Scene*> members{&batch.target};
  for (const Scene& d : batch.distractors) members.push_back(&d);
  const std::size_t b = members.size();

  ad::Tape tape;
  SpeakerGraph sg =
      SpeakerGraph::bind(tape, ctx.speaker, ctx.update_speaker);
  ListenerGraph lg =
      ListenerGraph::bind(tape, ctx.listener, ctx.update_listener);

  // Rollouts plus, for relaxed examples, an auxiliary sampled rollout that
  // supplies the sparse tokens the CIDEr reward needs.
  std::vector<Caption> captions(b);
  std::vector<std::vector<int>> reward_tokens(b);
  std::vector<ad::Node*> reward_log_probs(b, nullptr);
  const RolloutOptions options{max_len, true};
  EstimatorConfig sampler;
  sampler.kind = EstimatorKind::kReinforce;
  for (std::size_t i = 0; i < b; ++i) {
    const ad::Tensor input = scene_input(*members[i], vpa);
    captions[i] =
        speaker_rollout(tape, sg, input, ctx.config.estimator, options,
                        ctx.rng);
    if (captions[i].log_prob != nullptr) {
      reward_tokens[i] = captions[i].token_indices();
      reward_log_probs[i] = captions[i].log_prob;
    } else if (!ctx.config.freeze_speaker) {
      Caption aux =
          speaker_rollout(tape, sg, input, sampler, options, ctx.rng);
      reward_tokens[i] = aux.token_indices();
      reward_log_probs[i] = aux.log_prob;
    }
  }

  // Listener scores for every caption/scene pair.
  std::vector<ad::Node*> cap_enc(b), scn_enc(b);
  for (std::size_t i = 0; i < b; ++i) {
    cap_enc[i] = lg.encode_caption(tape, captions[i].emissions);
    scn_enc[i] = lg.encode_scene(tape, scene_input(*members[i], vpa));
  }
  ScoreMatrix scores(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      scores.at(i, j) = tape.cosine(cap_enc[i], scn_enc[j]);
    }
  }
  std::vector<ad::Node*> hinge_terms(b);
  for (std::size_t t = 0; t < b; ++t) {
    hinge_terms[t] = disc_hinge_term(tape, scores, t);
  }
  ad::Node* l_disc = tape.scale(tape.add_n(hinge_terms),
                                1.0 / static_cast<double>(b));

  ad::Node* loss = nullptr;
  if (ctx.config.freeze_speaker) {
    // Frozen-speaker ablation: only the discriminative term is optimized.
    loss = l_disc;
  } else {
    // Naturalness surrogate (score function with the configured baseline).
    std::vector<ad::Node*> nat_terms;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::vector<int>> refs;
      for (const ReferenceCaption& r :
           ctx.world.references_for(members[i]->id)) {
        refs.push_back(r.tokens);
      }
      const double reward = cider(reward_tokens[i], refs, ctx.stats);
      BaselineContext context;
      if (ctx.config.estimator.baseline == BaselineKind::kGroundTruth) {
        std::vector<std::vector<int>> rest(refs.begin() + 1, refs.end());
        context.reference_reward = cider(refs[0], rest, ctx.stats);
      } else if (ctx.config.estimator.baseline == BaselineKind::kGreedy) {
        context.greedy_reward =
            cider(beam_decode(ctx.speaker, ctx.agents,
                              scene_input(*members[i], vpa), 1, max_len),
                  refs, ctx.stats);
      }
      const double baseline =
          baseline_value(ctx.config.estimator.baseline, context);
      nat_terms.push_back(reinforce_surrogate(tape, reward_log_probs[i],
                                              reward, baseline));
    }
    ad::Node* l_nat = tape.scale(tape.add_n(nat_terms),
                                 1.0 / static_cast<double>(b));

    ad::Node* l_disc_total = l_disc;
    if (ctx.config.estimator.kind == EstimatorKind::kReinforce) {
      // No gradient reaches the speaker through one-hot emissions; a score
      // function term carries the discriminative signal to phi.
      std::vector<ad::Node*> disc_surrogates;
      for (std::size_t i = 0; i < b; ++i) {
        const double reward = -hinge_terms[i]->value[0];
        double baseline = 0.0;
        if (ctx.config.estimator.baseline != BaselineKind::kNone) {
          std::vector<int> alt_tokens;
          if (ctx.config.estimator.baseline == BaselineKind::kGroundTruth) {
            alt_tokens = ctx.world.references_for(members[i]->id)[0].tokens;
          } else {
            alt_tokens = beam_decode(ctx.speaker, ctx.agents,
                                     scene_input(*members[i], vpa), 1,
                                     max_len);
          }
          ad::Node* alt_enc = lg.encode_caption(
              tape, emissions_from_tokens(tape, alt_tokens, vocab));
          const double pos = tape.cosine(alt_enc, scn_enc[i])->value[0];
          double worst_caption = -2.0, worst_scene = -2.0;
          for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            worst_caption =
                std::max(worst_caption, scores.at(j, i)->value[0]);
            worst_scene = std::max(
                worst_scene, tape.cosine(alt_enc, scn_enc[j])->value[0]);
          }
          const double term =
              std::max(0.0, 1.0 - pos + worst_caption) +
              std::max(0.0, 1.0 - pos + worst_scene);
          baseline = -term;
        }
        disc_surrogates.push_back(reinforce_surrogate(
            tape, reward_log_probs[i], reward, baseline));
      }
      l_disc_total = tape.add(
          l_disc, tape.scale(tape.add_n(disc_surrogates),
                             1.0 / static_cast<double>(b)));
    }

    loss = composite_loss(tape, l_disc_total, l_nat,
                          LossWeights{ctx.config.lambda});
  }

  tape.backward(loss);
  apply_sgd(sg.bindings, ctx.lr);
  apply_sgd(lg.bindings, ctx.lr);
}

}  // namespace

JointResult joint_train(const World& world, const RunConfig& config,
                        SpeakerParams speaker, ListenerParams listener) {
  config.validate();
  const auto t0 = Clock::now();
  const AgentConfig agents = agent_config_for(world, config);
  const NGramStats stats = NGramStats::build(world, Split::kTrain);
  Rng rng = Rng(config.seed).fork(3);

  JointResult result;
  result.manifest.method = method_name(config.estimator.kind);
  result.manifest.config = config;
  result.best_speaker = speaker;
  result.best_listener = listener;

  double best_recall10 = -1.0;
  EvalResult last_eval;

  const std::size_t train_size = world.scenes(Split::kTrain).size();
  const std::size_t steps = std::max<std::size_t>(
      1, train_size / static_cast<std::size_t>(config.batch_size));

  for (int epoch = 0; epoch < config.joint_epochs; ++epoch) {
    const double lr = decayed_lr(config.joint_lr, config.lr_decay,
                                 config.lr_decay_every, epoch);
    for (std::size_t step = 0; step < steps; ++step) {
      const bool update_speaker =
          !config.freeze_speaker && (!config.alternate || step % 2 == 1);
      const bool update_listener = !config.alternate || step % 2 == 0;
      StepContext ctx{world,   config,   stats, agents,
                      speaker, listener, rng,   lr,
                      update_speaker, update_listener};
      try {
        joint_step(ctx);
      } catch (const NumericError& e) {
        throw NumericError("joint training aborted at epoch " +
                           std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
    }

    last_eval = evaluate(world, stats, speaker, listener, Split::kVal,
                         config);
    CurvePoint point;
    point.method = result.manifest.method;
    point.lambda = config.lambda;
    point.rho = config.estimator.is_psst() ? config.estimator.rho : 0.0;
    point.tau = config.estimator.is_gumbel() ? config.estimator.tau : 1.0;
    point.seed = config.seed;
    point.epoch = epoch;
    point.cider = last_eval.cider;
    point.recall1 = last_eval.recall1;
    point.recall5 = last_eval.recall5;
    point.recall10 = last_eval.recall10;
    result.curve.push_back(point);

    if (last_eval.recall10 > best_recall10) {
      best_recall10 = last_eval.recall10;
      result.manifest.best_epoch = epoch;
      result.manifest.best_metrics = last_eval;
      result.best_speaker = speaker;
      result.best_listener = listener;
    }
  }

  result.manifest.final_metrics = last_eval;
  result.manifest.wall_seconds = seconds_since(t0);

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    const auto speaker_path = config.out_dir / "best_speaker.ckpt";
    const auto listener_path = config.out_dir / "best_listener.ckpt";
    save_params(speaker_path, result.best_speaker.to_checkpoint());
    save_params(listener_path, result.best_listener.to_checkpoint());
    result.manifest.speaker_checkpoint = speaker_path.string();
    result.manifest.listener_checkpoint = listener_path.string();
    const auto curve_path = config.out_dir / "curve.csv";
    write_curve_csv(curve_path, result.curve);
    result.manifest.curve_file = curve_path.string();

    const auto manifest_path = config.out_dir / "manifest.json";
    const auto tmp = config.out_dir / "manifest.json.tmp";
    {
      std::ofstream os(tmp, std::ios::trunc);
      if (!os) throw IoError("manifest: cannot open " + tmp.string());
      os << result.manifest.to_json();
    }
    std::filesystem::rename(tmp, manifest_path);
  }
  return result;
}

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["method"] = method;
  j["failed"] = failed;
  if (failed) j["error"] = error;
  j["config"] = {
      {"method", method_name(config.estimator.kind)},
      {"rho", config.estimator.rho},
      {"tau", config.estimator.tau},
      {"baseline", baseline_name(config.estimator.baseline)},
      {"per_token_gate", config.estimator.per_token_gate},
      {"lambda", config.lambda},
      {"batch_size", config.batch_size},
      {"train_hard_fraction", config.train_hard_fraction},
      {"eval_hard_fraction", config.eval_hard_fraction},
      {"pretrain_speaker_lr", config.pretrain_speaker_lr},
      {"pretrain_listener_lr", config.pretrain_listener_lr},
      {"joint_lr", config.joint_lr},
      {"lr_decay", config.lr_decay},
      {"lr_decay_every", config.lr_decay_every},
      {"speaker_pretrain_epochs", config.speaker_pretrain_epochs},
      {"listener_pretrain_epochs", config.listener_pretrain_epochs},
      {"joint_epochs", config.joint_epochs},
      {"embed_dim", config.embed_dim},
      {"hidden_dim", config.hidden_dim},
      {"beam_width", config.beam_width},
      {"freeze_speaker", config.freeze_speaker},
      {"alternate", config.alternate},
      {"seed", config.seed},
  };
  j["wall_seconds"] = wall_seconds;
  j["best_epoch"] = best_epoch;
  j["best_metrics"] = {{"recall1", best_metrics.recall1},
                       {"recall5", best_metrics.recall5},
                       {"recall10", best_metrics.recall10},
                       {"cider", best_metrics.cider}};
  j["final_metrics"] = {{"recall1", final_metrics.recall1},
                        {"recall5", final_metrics.recall5},
                        {"recall10", final_metrics.recall10},
                        {"cider", final_metrics.cider}};
  j["speaker_checkpoint"] = speaker_checkpoint;
  j["listener_checkpoint"] = listener_checkpoint;
  j["curve_file"] = curve_file;
  return j.dump(2) + "\n";
}

SweepResult sweep(const World& world, const RunConfig& base,
                  const SweepGrid& grid, int workers) {
  std::vector<EstimatorKind> methods =
      grid.methods.empty() ? std::vector<EstimatorKind>{base.estimator.kind}
                           : grid.methods;
  std::vector<double> lambdas =
      grid.lambdas.empty() ? std::vector<double>{base.lambda} : grid.lambdas;
  std::vector<double> rhos =
      grid.rhos.empty() ? std::vector<double>{base.estimator.rho} : grid.rhos;
  std::vector<std::uint64_t> seeds =
      grid.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : grid.seeds;

  std::vector<RunConfig> cells;
  for (EstimatorKind method : methods) {
    const bool psst = method == EstimatorKind::kPsstMultinomial ||
                      method == EstimatorKind::kPsstGumbel;
    for (double lambda : lambdas) {
      for (std::size_t r = 0; r < (psst ? rhos.size() : 1); ++r) {
        for (std::uint64_t seed : seeds) {
          RunConfig c = base;
          c.estimator.kind = method;
          c.estimator.rho = psst ? rhos[r] : 0.0;
          c.lambda = lambda;
          c.seed = seed;
          if (!base.out_dir.empty()) {
            char cell_name[128];
            std::snprintf(cell_name, sizeof cell_name,
                          "cell_%s_l%g_r%g_s%llu",
                          method_name(method).c_str(), lambda,
                          c.estimator.rho,
                          static_cast<unsigned long long>(seed));
            c.out_dir = base.out_dir / cell_name;
          }
          cells.push_back(std::move(c));
        }
      }
    }
  }

  SweepResult result;
  result.cells.resize(cells.size());

  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      SweepCellResult& cell = result.cells[i];
      cell.config = cells[i];
      try {
        PretrainResult pre = pretrain(world, cells[i]);
        JointResult joint = joint_train(world, cells[i],
                                        std::move(pre.speaker),
                                        std::move(pre.listener));
        cell.curve = std::move(joint.curve);
        cell.best_epoch = joint.manifest.best_epoch;
        cell.best_metrics = joint.manifest.best_metrics;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        if (!cells[i].out_dir.empty()) {
          std::filesystem::create_directories(cells[i].out_dir);
          RunManifest m;
          m.method = method_name(cells[i].estimator.kind);
          m.config = cells[i];
          m.failed = true;
          m.error = cell.error;
          std::ofstream os(cells[i].out_dir / "manifest.json");
          os << m.to_json();
        }
      }
    }
  };

  const int n_workers = std::max(
      1, std::min(workers, static_cast<int>(cells.size())));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  for (const SweepCellResult& cell : result.cells) {
    result.consolidated.insert(result.consolidated.end(), cell.curve.begin(),
                               cell.curve.end());
  }
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    write_curve_csv(base.out_dir / "sweep.csv", result.consolidated);
  }
  return result;
}

std::vector<CurvePoint> best_rows_per_run(
    std::span<const CurvePoint> points) {
  std::vector<CurvePoint> best;
  auto same_run = [](const CurvePoint& a, const CurvePoint& b) {
    return a.method == b.method && a.lambda == b.lambda && a.rho == b.rho &&
           a.tau == b.tau && a.seed == b.seed;
  };
  for (const CurvePoint& p : points) {
    bool found = false;
    for (CurvePoint& b : best) {
      if (same_run(b, p)) {
        found = true;
        if (p.recall10 > b.recall10) b = p;
        break;
      }
    }
    if (!found) best.push_back(p);
  }
  return best;
}

}  // namespace psst
