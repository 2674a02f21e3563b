#include "psst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "psst/errors.hpp"

namespace psst {

ad::Node* disc_hinge_term(ad::Tape& tape, const ScoreMatrix& scores,
                          std::size_t target) {
  const std::size_t b = scores.b;
  if (b < 2) throw ContractError("disc_hinge: batch must have >= 2 members");
  if (target >= b) throw ContractError("disc_hinge: target out of range");

  // Hardest negative caption for this scene (down column `target`) and
  // hardest negative scene for this caption (along row `target`).
  std::size_t worst_caption = target == 0 ? 1 : 0;
  std::size_t worst_scene = target == 0 ? 1 : 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (i == target) continue;
    if (scores.at(i, target)->value[0] >
        scores.at(worst_caption, target)->value[0]) {
      worst_caption = i;
    }
    if (scores.at(target, i)->value[0] >
        scores.at(target, worst_scene)->value[0]) {
      worst_scene = i;
    }
  }
  ad::Node* positive = scores.at(target, target);
  ad::Node* caption_term = tape.relu(tape.add_scalar(
      tape.sub(scores.at(worst_caption, target), positive), 1.0));
  ad::Node* scene_term = tape.relu(tape.add_scalar(
      tape.sub(scores.at(target, worst_scene), positive), 1.0));
  return tape.add(caption_term, scene_term);
}

ad::Node* disc_hinge_loss(ad::Tape& tape, const ScoreMatrix& scores) {
  std::vector<ad::Node*> terms;
  terms.reserve(scores.b);
  for (std::size_t t = 0; t < scores.b; ++t) {
    terms.push_back(disc_hinge_term(tape, scores, t));
  }
  return tape.scale(tape.add_n(terms), 1.0 / static_cast<double>(scores.b));
}

std::string NGramStats::key(std::span<const int> ngram) {
  std::string k;
  k.reserve(ngram.size() * 3);
  for (int tok : ngram) {
    k += std::to_string(tok);
    k += ',';
  }
  return k;
}

namespace {

bool reserved_token(int tok) {
  return tok == Vocabulary::kPad || tok == Vocabulary::kBos ||
         tok == Vocabulary::kEos;
}

std::vector<int> content_tokens(std::span<const int> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int tok : tokens) {
    if (tok == Vocabulary::kEos) break;
    if (!reserved_token(tok)) out.push_back(tok);
  }
  return out;
}

// Term frequencies of the order-n n-grams of a token list.
std::unordered_map<std::string, int> tf(const std::vector<int>& tokens,
                                        int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[NGramStats::key(std::span<const int>(tokens).subspan(i, n))] += 1;
  }
  return counts;
}

}  // namespace

NGramStats NGramStats::from_documents(
    const std::vector<std::vector<std::vector<int>>>& documents) {
  NGramStats stats;
  stats.corpus_docs_ = static_cast<int>(documents.size());
  for (const auto& doc : documents) {
    std::unordered_map<std::string, bool> seen;
    for (const auto& caption : doc) {
      const std::vector<int> content = content_tokens(caption);
      for (int n = 1; n <= kMaxOrder; ++n) {
        if (static_cast<int>(content.size()) < n) break;
        for (std::size_t i = 0; i + n <= content.size(); ++i) {
          seen.emplace(
              key(std::span<const int>(content).subspan(i, n)), true);
        }
      }
    }
    for (const auto& [k, _] : seen) stats.doc_freq_[k] += 1;
  }
  return stats;
}

NGramStats NGramStats::build(const World& world, Split split) {
  std::vector<std::vector<std::vector<int>>> documents;
  for (const Scene& scene : world.scenes(split)) {
    std::vector<std::vector<int>> doc;
    for (const ReferenceCaption& ref : world.references_for(scene.id)) {
      doc.push_back(ref.tokens);
    }
    documents.push_back(std::move(doc));
  }
  return from_documents(documents);
}

double NGramStats::idf(std::span<const int> ngram) const {
  const auto it = doc_freq_.find(key(ngram));
  // Absent n-grams count as maximally rare (document frequency one).
  const int df = it == doc_freq_.end() ? 1 : it->second;
  return std::log(static_cast<double>(std::max(corpus_docs_, 1)) /
                  static_cast<double>(df));
}

double cider(std::span<const int> candidate,
             const std::vector<std::vector<int>>& references,
             const NGramStats& stats) {
  if (references.empty()) throw ContractError("cider: no references");
  const std::vector<int> cand = content_tokens(candidate);
  if (cand.empty()) return 0.0;

  auto idf_of = [&stats](const std::string& k) {
    const auto it = stats.doc_freq_.find(k);
    const int df = it == stats.doc_freq_.end() ? 1 : it->second;
    return std::log(static_cast<double>(std::max(stats.corpus_docs_, 1)) /
                    static_cast<double>(df));
  };

  double total = 0.0;
  for (int n = 1; n <= NGramStats::kMaxOrder; ++n) {
    const auto cand_tf = tf(cand, n);
    double cand_norm2 = 0.0;
    for (const auto& [k, c] : cand_tf) {
      const double w = c * idf_of(k);
      cand_norm2 += w * w;
    }
    double order_score = 0.0;
    if (cand_norm2 > 0.0) {
      double ref_mean = 0.0;
      for (const auto& reference : references) {
        const auto ref_tf = tf(content_tokens(reference), n);
        double dot = 0.0, ref_norm2 = 0.0;
        for (const auto& [k, c] : ref_tf) {
          const double w = c * idf_of(k);
          ref_norm2 += w * w;
          const auto it = cand_tf.find(k);
          if (it != cand_tf.end()) dot += w * it->second * idf_of(k);
        }
        if (ref_norm2 > 0.0) {
          ref_mean += dot / std::sqrt(cand_norm2 * ref_norm2);
        }
      }
      order_score = ref_mean / static_cast<double>(references.size());
    }
    total += order_score;
  }
  return total / static_cast<double>(NGramStats::kMaxOrder);
}

double recall_at_k(std::span<const RetrievalQuery> queries, int k) {
  if (k < 1) throw ContractError("recall_at_k: k must be >= 1");
  if (queries.empty()) throw ContractError("recall_at_k: no queries");
  int hits = 0;
  for (const RetrievalQuery& q : queries) {
    if (k > static_cast<int>(q.scored_pool.size())) {
      throw ContractError("recall_at_k: k exceeds pool size");
    }
    double target_score = 0.0;
    bool found = false;
    for (const auto& [id, score] : q.scored_pool) {
      if (id == q.target_id) {
        target_score = score;
        found = true;
        break;
      }
    }
    if (!found) throw ContractError("recall_at_k: target not in pool");
    int rank = 1;
    for (const auto& [id, score] : q.scored_pool) {
      if (id == q.target_id) continue;
      if (score > target_score ||
          (score == target_score && id < q.target_id)) {
        ++rank;
      }
    }
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

ad::Node* composite_loss(ad::Tape& tape, ad::Node* l_disc,
                         ad::Node* l_nat_surrogate, const LossWeights& w) {
  if (l_disc->value.numel() != 1 || l_nat_surrogate->value.numel() != 1) {
    throw ContractError("composite_loss: terms must be scalar");
  }
  return tape.add(tape.scale(l_disc, w.lambda),
                  tape.scale(l_nat_surrogate, 1.0 - w.lambda));
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string curve_csv(std::span<const CurvePoint> points) {
  std::ostringstream os;
  os << kCurveCsvHeader << "\n";
  for (const CurvePoint& p : points) {
    os << p.method << "," << format_double(p.lambda) << ","
       << format_double(p.rho) << "," << format_double(p.tau) << "," << p.seed
       << "," << p.epoch << "," << format_double(p.cider) << ","
       << format_double(p.recall1) << "," << format_double(p.recall5) << ","
       << format_double(p.recall10) << "\n";
  }
  return os.str();
}

void write_curve_csv(const std::filesystem::path& file,
                     std::span<const CurvePoint> points) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("curve csv: cannot open " + file.string());
  os << curve_csv(points);
  if (!os) throw IoError("curve csv: write failed");
}

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("curve csv: cannot open " + file.string());
  std::string line;
  if (!std::getline(is, line) || line != kCurveCsvHeader) {
    throw IoError("curve csv: bad header in " + file.string());
  }
  std::vector<CurvePoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurvePoint p;
    std::string field;
    auto next = [&]() {
      if (!std::getline(ls, field, ',')) {
        throw IoError("curve csv: short row");
      }
      return field;
    };
    p.method = next();
    p.lambda = std::stod(next());
    p.rho = std::stod(next());
    p.tau = std::stod(next());
    p.seed = std::stoull(next());
    p.epoch = std::stoi(next());
    p.cider = std::stod(next());
    p.recall1 = std::stod(next());
    p.recall5 = std::stod(next());
    p.recall10 = std::stod(next());
    out.push_back(std::move(p));
  }
  return out;
}

std::optional<double> recall_at_cider_level(
    std::vector<std::pair<double, double>> curve, double cider_level) {
  if (curve.empty()) return std::nullopt;
  std::sort(curve.begin(), curve.end());
  if (cider_level < curve.front().first || cider_level > curve.back().first) {
    return std::nullopt;
  }
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const auto [x0, y0] = curve[i];
    const auto [x1, y1] = curve[i + 1];
    if (cider_level >= x0 && cider_level <= x1) {
      if (x1 == x0) return 0.5 * (y0 + y1);
      const double t = (cider_level - x0) / (x1 - x0);
      return y0 + t * (y1 - y0);
    }
  }
  return curve.back().second;
}

}  // namespace psst
