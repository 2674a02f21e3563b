#include "psst/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "psst/errors.hpp"

namespace psst {

namespace {

constexpr std::size_t kMaxSequences = 64;

std::vector<int> decode_sequence(std::size_t code, int vocab, int length) {
  std::vector<int> seq(length);
  for (int t = length - 1; t >= 0; --t) {
    seq[t] = static_cast<int>(code % vocab);
    code /= vocab;
  }
  return seq;
}

// Flat parameter gradient in canonical order.
std::vector<double> collect_gradient(const std::vector<BoundParam>& bindings) {
  std::vector<double> out;
  for (const BoundParam& b : bindings) {
    const ad::Tensor& g = b.node->grad;
    for (std::size_t i = 0; i < g.numel(); ++i) out.push_back(g[i]);
  }
  return out;
}

// Greedy fixed-length rollout, argmax at every step.
std::vector<int> greedy_sequence(ad::Tape& tape, const SpeakerGraph& graph,
                                 const EnumInstance& instance) {
  std::vector<int> tokens;
  ad::Node* h = graph.encode_scene(tape, instance.scene);
  ad::Node* x = graph.bos_input(tape);
  for (int t = 0; t < instance.length; ++t) {
    auto [dist, h_next] = graph.step(tape, x, h);
    h = h_next;
    const auto& p = dist.probs->value;
    int best = 0;
    for (std::size_t i = 1; i < p.numel(); ++i) {
      if (p[i] > p[best]) best = static_cast<int>(i);
    }
    tokens.push_back(best);
    x = graph.token_input(tape, best);
  }
  return tokens;
}

}  // namespace

void EnumInstance::validate() const {
  if (vocab_size < 2 || vocab_size > 4) {
    throw SizeError("enum instance: vocab size must lie in [2, 4]");
  }
  if (length < 1 || length > 3) {
    throw SizeError("enum instance: length must lie in [1, 3]");
  }
  if (sequence_count() > kMaxSequences) {
    throw SizeError("enum instance: more than 64 sequences");
  }
  if (!seq_loss || !dense_loss) {
    throw ContractError("enum instance: loss functions not set");
  }
}

std::size_t EnumInstance::sequence_count() const {
  std::size_t n = 1;
  for (int t = 0; t < length; ++t) n *= static_cast<std::size_t>(vocab_size);
  return n;
}

EnumInstance EnumInstance::from_table(int vocab_size, int length,
                                      std::vector<double> table,
                                      std::optional<std::vector<int>> reference,
                                      const AgentConfig& agent_config) {
  EnumInstance inst;
  inst.vocab_size = vocab_size;
  inst.length = length;
  inst.agent_config = agent_config;
  inst.scene = ad::Tensor({1, static_cast<std::size_t>(
                                  std::max(agent_config.scene_dim, 1))});
  inst.scene[0] = 1.0;
  if (table.size() != inst.sequence_count()) {
    throw ContractError("enum instance: table size != sequence count");
  }
  auto shared = std::make_shared<std::vector<double>>(std::move(table));
  inst.seq_loss = [shared, vocab_size](std::span<const int> seq) {
    std::size_t code = 0;
    for (int tok : seq) code = code * vocab_size + static_cast<std::size_t>(tok);
    return (*shared)[code];
  };
  // Multilinear extension: exact expectation on dense inputs, the table
  // itself on one-hot inputs.
  inst.dense_loss = [shared, vocab_size, length](
                        ad::Tape& tape,
                        const std::vector<TokenEmission>& emissions) {
    if (static_cast<int>(emissions.size()) != length) {
      throw ContractError("enum instance: emission count != length");
    }
    std::vector<ad::Node*> terms;
    for (std::size_t code = 0; code < shared->size(); ++code) {
      const std::vector<int> seq =
          decode_sequence(code, vocab_size, length);
      ad::Node* w = tape.gather(emissions[0].vector,
                                {static_cast<std::size_t>(seq[0])});
      for (int t = 1; t < length; ++t) {
        w = tape.mul(w, tape.gather(emissions[t].vector,
                                    {static_cast<std::size_t>(seq[t])}));
      }
      terms.push_back(tape.scale(w, (*shared)[code]));
    }
    return tape.add_n(terms);
  };
  inst.reference = std::move(reference);
  inst.validate();
  return inst;
}

EnumInstance EnumInstance::from_frozen_listener(
    int vocab_size, int length, ListenerParams listener,
    ad::Tensor listener_scene, std::optional<std::vector<int>> ref,
    const AgentConfig& agent_config) {
  EnumInstance inst;
  inst.vocab_size = vocab_size;
  inst.length = length;
  inst.agent_config = agent_config;
  inst.scene = ad::Tensor({1, static_cast<std::size_t>(
                                  std::max(agent_config.scene_dim, 1))});
  inst.scene[0] = 1.0;
  auto shared = std::make_shared<ListenerParams>(std::move(listener));
  auto scn = std::make_shared<ad::Tensor>(std::move(listener_scene));
  inst.dense_loss = [shared, scn](ad::Tape& tape,
                                  const std::vector<TokenEmission>& emissions) {
    ListenerGraph graph = ListenerGraph::bind(tape, *shared, false);
    ad::Node* score = listener_score(tape, graph, emissions, *scn);
    return tape.scale(score, -1.0);
  };
  inst.seq_loss = [shared, scn, vocab_size](std::span<const int> seq) {
    ad::Tape tape;
    ListenerGraph graph = ListenerGraph::bind(tape, *shared, false);
    std::vector<TokenEmission> emissions = emissions_from_tokens(
        tape, std::vector<int>(seq.begin(), seq.end()), vocab_size);
    ad::Node* score = listener_score(tape, graph, emissions, *scn);
    return -score->value[0];
  };
  inst.reference = std::move(ref);
  inst.validate();
  return inst;
}

namespace {

// Expected-loss node over the full enumeration; prefix tree so each
// distribution is computed once per conditioning history.
ad::Node* expected_loss_node(ad::Tape& tape, const SpeakerGraph& graph,
                             const EnumInstance& instance) {
  std::vector<ad::Node*> terms;
  std::vector<int> prefix;

  std::function<void(ad::Node*, ad::Node*, ad::Node*)> recurse =
      [&](ad::Node* x, ad::Node* h, ad::Node* prob_prefix) {
        auto [dist, h_next] = graph.step(tape, x, h);
        for (int tok = 0; tok < instance.vocab_size; ++tok) {
          ad::Node* p_tok =
              tape.gather(dist.probs, {static_cast<std::size_t>(tok)});
          ad::Node* p_here =
              prob_prefix ? tape.mul(prob_prefix, p_tok) : p_tok;
          prefix.push_back(tok);
          if (static_cast<int>(prefix.size()) == instance.length) {
            terms.push_back(tape.scale(p_here, instance.seq_loss(prefix)));
          } else {
            recurse(graph.token_input(tape, tok), h_next, p_here);
          }
          prefix.pop_back();
        }
      };

  recurse(graph.bos_input(tape), graph.encode_scene(tape, instance.scene),
          nullptr);
  return tape.add_n(terms);
}

}  // namespace

double exact_expected_loss(const EnumInstance& instance,
                           SpeakerParams& speaker) {
  instance.validate();
  ad::Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, speaker, false);
  return expected_loss_node(tape, graph, instance)->value[0];
}

std::vector<double> exact_gradient(const EnumInstance& instance,
                                   SpeakerParams& speaker) {
  instance.validate();
  ad::Tape tape;
  SpeakerGraph graph = SpeakerGraph::bind(tape, speaker, true);
  ad::Node* loss = expected_loss_node(tape, graph, instance);
  tape.backward(loss);
  return collect_gradient(graph.bindings);
}

std::vector<std::string> speaker_coordinate_names(SpeakerParams& speaker) {
  std::vector<std::string> names;
  for (auto& [name, tensor] : speaker.named_tensors()) {
    for (std::size_t i = 0; i < tensor->numel(); ++i) {
      names.push_back(name + "[" + std::to_string(i) + "]");
    }
  }
  return names;
}

bool GradientReport::unbiasedness_gate(double z) const {
  for (std::size_t i = 0; i < bias.size(); ++i) {
    const double tol = z * std::max(std_err[i], 1e-12);
    if (std::abs(bias[i]) > tol) return false;
  }
  return true;
}

double GradientReport::max_abs_bias() const {
  double m = 0.0;
  for (double b : bias) m = std::max(m, std::abs(b));
  return m;
}

double GradientReport::mean_variance() const {
  double acc = 0.0;
  for (double s : std_err) {
    const double sd = s * std::sqrt(static_cast<double>(n_samples));
    acc += sd * sd;
  }
  return acc / static_cast<double>(std_err.size());
}

std::string GradientReport::to_text(
    const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << "estimator " << method_name(kind) << ", " << n_samples
     << " samples\n";
  os << "coordinate                      exact        mean      stderr     "
        "bias\n";
  char buf[160];
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const std::string name =
        i < names.size() ? names[i] : "[" + std::to_string(i) + "]";
    std::snprintf(buf, sizeof buf, "%-28s %11.6f %11.6f %11.6f %8.5f\n",
                  name.c_str(), exact[i], mean[i], std_err[i], bias[i]);
    os << buf;
  }
  return os.str();
}

GradientReport estimator_report(const EnumInstance& instance,
                                SpeakerParams& speaker,
                                const EstimatorConfig& config,
                                std::size_t n_samples, Rng& rng) {
  instance.validate();
  config.validate();
  if (n_samples < 1) throw ContractError("estimator_report: no samples");

  GradientReport report;
  report.kind = config.kind;
  report.n_samples = n_samples;
  report.exact = exact_gradient(instance, speaker);

  const std::size_t dim = report.exact.size();
  std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);

  const RolloutOptions options{instance.length, /*stop_at_eos=*/false};

  for (std::size_t s = 0; s < n_samples; ++s) {
    ad::Tape tape;
    SpeakerGraph graph = SpeakerGraph::bind(tape, speaker, true);
    Caption caption =
        speaker_rollout(tape, graph, instance.scene, config, options, rng);

    ad::Node* loss = nullptr;
    if (config.kind == EstimatorKind::kReinforce) {
      const std::vector<int> tokens = caption.token_indices();
      const double reward = -instance.seq_loss(tokens);
      BaselineContext context;
      if (config.baseline == BaselineKind::kGreedy) {
        context.greedy_reward =
            -instance.seq_loss(greedy_sequence(tape, graph, instance));
      } else if (config.baseline == BaselineKind::kGroundTruth) {
        if (!instance.reference) {
          throw ContractError(
              "estimator_report: ground-truth baseline needs a reference");
        }
        context.reference_reward = -instance.seq_loss(*instance.reference);
      }
      const double baseline = baseline_value(config.baseline, context);
      loss = reinforce_surrogate(tape, caption.log_prob, reward, baseline);
    } else {
      loss = instance.dense_loss(tape, caption.emissions);
    }
    tape.backward(loss);

    const std::vector<double> g = collect_gradient(graph.bindings);
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += g[i];
      sumsq[i] += g[i] * g[i];
    }
  }

  const double n = static_cast<double>(n_samples);
  report.mean.resize(dim);
  report.std_err.resize(dim);
  report.bias.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    report.mean[i] = sum[i] / n;
    double var = 0.0;
    if (n_samples > 1) {
      var = std::max(0.0, (sumsq[i] - n * report.mean[i] * report.mean[i]) /
                              (n - 1.0));
    }
    report.std_err[i] = std::sqrt(var / n);
    report.bias[i] = report.mean[i] - report.exact[i];
  }
  return report;
}

}  // namespace psst
