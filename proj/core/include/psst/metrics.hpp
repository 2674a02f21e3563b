#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psst/tape.hpp"
#include "psst/world.hpp"

namespace psst {

struct LossWeights {
  double lambda = 0.1;  // composite = lambda * disc + (1 - lambda) * nat
};

// Pairwise caption/scene compatibilities for one batch; caption i's target
// is scene i (diagonal alignment).
struct ScoreMatrix {
  std::size_t b = 0;
  std::vector<ad::Node*> scores;  // row-major, b x b

  explicit ScoreMatrix(std::size_t batch)
      : b(batch), scores(batch * batch, nullptr) {}
  ad::Node*& at(std::size_t caption, std::size_t scene) {
    return scores[caption * b + scene];
  }
  ad::Node* at(std::size_t caption, std::size_t scene) const {
    return scores[caption * b + scene];
  }
};

// Two hinge terms for one target: hardest negative caption for its scene
// and hardest negative scene for its caption. The argmax selection is
// treated as constant within the step.
ad::Node* disc_hinge_term(ad::Tape& tape, const ScoreMatrix& scores,
                          std::size_t target);

// Sum of the two hinge terms, averaged over all targets in the batch.
ad::Node* disc_hinge_loss(ad::Tape& tape, const ScoreMatrix& scores);

// n-gram document statistics over a reference corpus; one document per
// scene. Immutable after build.
class NGramStats {
 public:
  static NGramStats build(const World& world, Split split);
  static NGramStats from_documents(
      const std::vector<std::vector<std::vector<int>>>& documents);

  int corpus_docs() const { return corpus_docs_; }
  double idf(std::span<const int> ngram) const;

  static constexpr int kMaxOrder = 4;

 private:
  int corpus_docs_ = 0;
  std::unordered_map<std::string, int> doc_freq_;
  static std::string key(std::span<const int> ngram);
  friend double cider(std::span<const int>,
                      const std::vector<std::vector<int>>&, const NGramStats&);
};

// Consensus similarity of a candidate against references: mean over n-gram
// orders 1..4 of the average TF-IDF cosine per reference, in [0, 1].
// Reserved tokens (PAD/BOS/EOS) are stripped before counting.
double cider(std::span<const int> candidate,
             const std::vector<std::vector<int>>& references,
             const NGramStats& stats);

// One retrieval query: the target and a scored candidate pool.
struct RetrievalQuery {
  int target_id = 0;
  std::vector<std::pair<int, double>> scored_pool;  // (scene id, score)
};

// Fraction of queries whose target ranks in the top k; ties broken by
// ascending scene id.
double recall_at_k(std::span<const RetrievalQuery> queries, int k);

ad::Node* composite_loss(ad::Tape& tape, ad::Node* l_disc,
                         ad::Node* l_nat_surrogate, const LossWeights& w);

// One (method, lambda, rho, tau, seed, epoch) evaluation record.
struct CurvePoint {
  std::string method;
  double lambda = 0.0;
  double rho = 0.0;
  double tau = 1.0;
  std::uint64_t seed = 0;
  int epoch = 0;
  double cider = 0.0;
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
};

inline constexpr char kCurveCsvHeader[] =
    "method,lambda,rho,tau,seed,epoch,cider,recall1,recall5,recall10";

std::string curve_csv(std::span<const CurvePoint> points);
void write_curve_csv(const std::filesystem::path& file,
                     std::span<const CurvePoint> points);
std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& file);

// Linear interpolation of recall at a fixed naturalness level on a
// (cider, recall) polyline; nullopt outside the curve's cider range.
std::optional<double> recall_at_cider_level(
    std::vector<std::pair<double, double>> curve, double cider_level);

}  // namespace psst
