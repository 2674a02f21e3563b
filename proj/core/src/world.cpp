#include "psst/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "psst/errors.hpp"

namespace psst {

namespace {

// Surface lexicon for the default desk-scale world. Configurations beyond
// it fall back to synthesized tokens.
constexpr int kLexAttrs = 4, kLexValues = 4, kLexSynonyms = 2;
constexpr const char* kLexicon[kLexAttrs][kLexValues][kLexSynonyms] = {
    {{"red", "crimson"}, {"blue", "azure"}, {"green", "emerald"},
     {"yellow", "golden"}},
    {{"cube", "box"}, {"ball", "sphere"}, {"cone", "spike"},
     {"ring", "torus"}},
    {{"small", "tiny"}, {"big", "large"}, {"medium", "middling"},
     {"huge", "giant"}},
    {{"shiny", "glossy"}, {"matte", "dull"}, {"rough", "coarse"},
     {"smooth", "sleek"}},
};

std::string surface_token(int a, int v, int s) {
  if (a < kLexAttrs && v < kLexValues && s < kLexSynonyms) {
    return kLexicon[a][v][s];
  }
  return "a" + std::to_string(a) + "v" + std::to_string(v) + "s" +
         std::to_string(s);
}

// values^attrs with saturation.
std::uint64_t scene_space_size(int attrs, int values) {
  std::uint64_t n = 1;
  for (int i = 0; i < attrs; ++i) {
    if (n > (1ull << 62) / static_cast<std::uint64_t>(values)) {
      return 1ull << 62;
    }
    n *= static_cast<std::uint64_t>(values);
  }
  return n;
}

// k distinct indices from [0, n), partial Fisher-Yates.
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k,
                                         Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

int Vocabulary::index_of(const std::string& token) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == token) return static_cast<int>(i);
  }
  return -1;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw ContractError("split_name: unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split: " + name);
}

void WorldConfig::validate() const {
  if (num_attributes < 1) throw ConfigError("world: num_attributes < 1");
  if (values_per_attribute < 2) {
    throw ConfigError("world: values_per_attribute must be >= 2");
  }
  if (synonyms_per_value < 2) {
    throw ConfigError("world: synonyms_per_value must be >= 2");
  }
  if (refs_per_scene < 2) {
    throw ConfigError("world: refs_per_scene must be >= 2");
  }
  if (max_caption_len < num_attributes + 1) {
    throw ConfigError("world: max_caption_len too small for the grammar");
  }
  if (train_scenes < 1 || val_scenes < 1 || test_scenes < 1) {
    throw ConfigError("world: every split needs at least one scene");
  }
  const std::uint64_t total = static_cast<std::uint64_t>(train_scenes) +
                              val_scenes + test_scenes;
  if (total > scene_space_size(num_attributes, values_per_attribute)) {
    throw ConfigError("world: split sizes exceed the number of distinct "
                      "scenes");
  }
}

World World::generate(const WorldConfig& config) {
  config.validate();
  World w;
  w.config_ = config;

  // Vocabulary: reserved tokens, then grammar tokens attribute-major.
  if (config.vocab) {
    w.vocab_ = *config.vocab;
    std::set<std::string> seen;
    for (const auto& t : w.vocab_.tokens) {
      if (!seen.insert(t).second) {
        throw ConfigError("world: duplicate token in supplied vocabulary");
      }
    }
    if (w.vocab_.size() < 3) {
      throw ConfigError("world: vocabulary lacks reserved tokens");
    }
  } else {
    w.vocab_.tokens = {"<pad>", "<bos>", "<eos>"};
    for (int a = 0; a < config.num_attributes; ++a) {
      for (int v = 0; v < config.values_per_attribute; ++v) {
        for (int s = 0; s < config.synonyms_per_value; ++s) {
          w.vocab_.tokens.push_back(surface_token(a, v, s));
        }
      }
    }
  }
  w.build_token_meaning();

  Rng rng(config.seed);

  // Distinct scenes, then split contiguously.
  const std::uint64_t space =
      scene_space_size(config.num_attributes, config.values_per_attribute);
  const std::size_t total = static_cast<std::size_t>(config.train_scenes) +
                            config.val_scenes + config.test_scenes;
  std::vector<std::vector<int>> attrs;
  attrs.reserve(total);
  if (space <= 1'000'000) {
    std::vector<std::size_t> chosen =
        sample_distinct(static_cast<std::size_t>(space), total, rng);
    for (std::size_t code : chosen) {
      std::vector<int> a(config.num_attributes);
      std::size_t rem = code;
      for (int i = config.num_attributes - 1; i >= 0; --i) {
        a[i] = static_cast<int>(rem % config.values_per_attribute);
        rem /= config.values_per_attribute;
      }
      attrs.push_back(std::move(a));
    }
  } else {
    std::set<std::vector<int>> seen;
    while (attrs.size() < total) {
      std::vector<int> a(config.num_attributes);
      for (int i = 0; i < config.num_attributes; ++i) {
        a[i] = static_cast<int>(rng.uniform_int(config.values_per_attribute));
      }
      if (seen.insert(a).second) attrs.push_back(std::move(a));
    }
  }

  int next_id = 0;
  auto take = [&](int count) {
    std::vector<Scene> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      out.push_back({next_id, attrs[next_id]});
      ++next_id;
    }
    return out;
  };
  w.train_ = take(config.train_scenes);
  w.val_ = take(config.val_scenes);
  w.test_ = take(config.test_scenes);
  w.index_scenes();

  // References: distinct synonym combinations per scene where possible.
  const std::uint64_t combos =
      scene_space_size(config.num_attributes, config.synonyms_per_value);
  for (const auto* split : {&w.train_, &w.val_, &w.test_}) {
    for (const Scene& scene : *split) {
      std::vector<std::vector<int>> syn_choices;
      const std::size_t want = config.refs_per_scene;
      if (combos <= 4096) {
        auto order = sample_distinct(static_cast<std::size_t>(combos),
                                     std::min<std::size_t>(want, combos), rng);
        for (std::size_t code : order) {
          std::vector<int> s(config.num_attributes);
          std::size_t rem = code;
          for (int i = config.num_attributes - 1; i >= 0; --i) {
            s[i] = static_cast<int>(rem % config.synonyms_per_value);
            rem /= config.synonyms_per_value;
          }
          syn_choices.push_back(std::move(s));
        }
        // More references requested than distinct combos: reuse cyclically.
        while (syn_choices.size() < want) {
          syn_choices.push_back(syn_choices[syn_choices.size() %
                                            std::max<std::size_t>(
                                                1, static_cast<std::size_t>(
                                                       combos))]);
        }
      } else {
        std::set<std::vector<int>> seen;
        while (syn_choices.size() < want) {
          std::vector<int> s(config.num_attributes);
          for (int i = 0; i < config.num_attributes; ++i) {
            s[i] = static_cast<int>(rng.uniform_int(config.synonyms_per_value));
          }
          if (seen.insert(s).second) syn_choices.push_back(std::move(s));
        }
      }
      auto& refs = w.references_[scene.id];
      for (const auto& syn : syn_choices) {
        ReferenceCaption ref;
        ref.scene_id = scene.id;
        for (int a = 0; a < config.num_attributes; ++a) {
          ref.tokens.push_back(
              w.grammar_token(a, scene.attributes[a], syn[a]));
        }
        ref.tokens.push_back(Vocabulary::kEos);
        refs.push_back(std::move(ref));
      }
    }
  }
  return w;
}

void World::build_token_meaning() {
  token_meaning_.assign(vocab_.tokens.size(), {-1, -1});
  for (int a = 0; a < config_.num_attributes; ++a) {
    for (int v = 0; v < config_.values_per_attribute; ++v) {
      for (int s = 0; s < config_.synonyms_per_value; ++s) {
        const int idx = vocab_.index_of(surface_token(a, v, s));
        if (idx < 0) {
          throw ConfigError("world: vocabulary too small to express the "
                            "grammar (missing '" + surface_token(a, v, s) +
                            "')");
        }
        token_meaning_[idx] = {a, v};
      }
    }
  }
}

int World::grammar_token(int attribute, int value, int synonym) const {
  const int idx = vocab_.index_of(surface_token(attribute, value, synonym));
  if (idx < 0) throw ContractError("grammar_token: token not in vocabulary");
  return idx;
}

void World::index_scenes() {
  by_id_.clear();
  for (const auto* split : {&train_, &val_, &test_}) {
    for (const Scene& s : *split) by_id_[s.id] = &s;
  }
}

const std::vector<Scene>& World::scenes(Split split) const {
  switch (split) {
    case Split::kTrain: return train_;
    case Split::kVal: return val_;
    case Split::kTest: return test_;
  }
  throw ContractError("scenes: unknown split");
}

const std::vector<ReferenceCaption>& World::references_for(
    int scene_id) const {
  auto it = references_.find(scene_id);
  if (it == references_.end()) {
    throw ContractError("references_for: unknown scene id");
  }
  return it->second;
}

const Scene& World::scene_by_id(int scene_id) const {
  auto it = by_id_.find(scene_id);
  if (it == by_id_.end()) throw ContractError("scene_by_id: unknown id");
  return *it->second;
}

Batch World::sample_batch(Split split, int batch_size, double hard_fraction,
                          Rng& rng) const {
  const auto& pool = scenes(split);
  if (pool.empty()) throw ContractError("sample_batch: empty split");
  if (batch_size < 1 ||
      static_cast<std::size_t>(batch_size) > pool.size()) {
    throw ContractError("sample_batch: batch_size exceeds split size");
  }
  Batch batch;
  const std::size_t target_idx = rng.uniform_int(pool.size());
  batch.target = pool[target_idx];
  batch.references = references_for(batch.target.id);

  const std::size_t want = static_cast<std::size_t>(batch_size) - 1;
  if (want == 0) return batch;

  // Scenes at attribute hamming distance exactly 1.
  std::vector<std::size_t> hard_pool;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i == target_idx) continue;
    int diff = 0;
    for (int a = 0; a < config_.num_attributes; ++a) {
      diff += pool[i].attributes[a] != batch.target.attributes[a] ? 1 : 0;
    }
    if (diff == 1) hard_pool.push_back(i);
  }
  std::size_t n_hard = static_cast<std::size_t>(
      std::llround(hard_fraction * static_cast<double>(want)));
  n_hard = std::min(n_hard, hard_pool.size());

  std::vector<bool> used(pool.size(), false);
  used[target_idx] = true;
  if (n_hard > 0) {
    auto picks = sample_distinct(hard_pool.size(), n_hard, rng);
    for (std::size_t p : picks) {
      batch.distractors.push_back(pool[hard_pool[p]]);
      used[hard_pool[p]] = true;
    }
  }
  std::vector<std::size_t> rest;
  rest.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!used[i]) rest.push_back(i);
  }
  const std::size_t n_fill = want - n_hard;
  auto picks = sample_distinct(rest.size(), n_fill, rng);
  for (std::size_t p : picks) batch.distractors.push_back(pool[rest[p]]);
  return batch;
}

std::optional<std::vector<int>> World::parse_attributes(
    std::span<const int> tokens) const {
  std::vector<int> attrs(config_.num_attributes, -1);
  for (int tok : tokens) {
    if (tok == Vocabulary::kEos) break;
    if (tok == Vocabulary::kPad || tok == Vocabulary::kBos) continue;
    if (tok < 0 || tok >= vocab_.size()) return std::nullopt;
    const auto [a, v] = token_meaning_[tok];
    if (a < 0) return std::nullopt;
    if (attrs[a] != -1 && attrs[a] != v) return std::nullopt;
    attrs[a] = v;
  }
  for (int v : attrs) {
    if (v == -1) return std::nullopt;
  }
  return attrs;
}

std::string World::serialize() const {
  std::ostringstream os;
  os << "psst-world v1\n";
  os << "[config]\n";
  os << "num_attributes = " << config_.num_attributes << "\n";
  os << "values_per_attribute = " << config_.values_per_attribute << "\n";
  os << "synonyms_per_value = " << config_.synonyms_per_value << "\n";
  os << "refs_per_scene = " << config_.refs_per_scene << "\n";
  os << "max_caption_len = " << config_.max_caption_len << "\n";
  os << "train_scenes = " << config_.train_scenes << "\n";
  os << "val_scenes = " << config_.val_scenes << "\n";
  os << "test_scenes = " << config_.test_scenes << "\n";
  os << "seed = " << config_.seed << "\n";
  os << "[vocab]\n";
  for (int i = 0; i < vocab_.size(); ++i) {
    os << i << " " << vocab_.tokens[i] << "\n";
  }
  os << "[scenes]\n";
  for (const auto* split : {&train_, &val_, &test_}) {
    for (const Scene& s : *split) {
      os << s.id << " "
         << split_name(split == &train_ ? Split::kTrain
                       : split == &val_ ? Split::kVal
                                        : Split::kTest);
      for (int a : s.attributes) os << " " << a;
      os << "\n";
    }
  }
  os << "[references]\n";
  for (const auto* split : {&train_, &val_, &test_}) {
    for (const Scene& s : *split) {
      for (const ReferenceCaption& ref : references_.at(s.id)) {
        os << s.id;
        for (int tok : ref.tokens) os << " " << vocab_.tokens[tok];
        os << "\n";
      }
    }
  }
  return os.str();
}

void World::save(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("world: cannot open " + file.string());
  os << serialize();
  if (!os) throw IoError("world: write failed for " + file.string());
}

World World::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("world: cannot open " + file.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

World World::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "psst-world v1") {
    throw IoError("world: bad header");
  }
  World w;
  enum class Section { kNone, kConfig, kVocab, kScenes, kRefs } section =
      Section::kNone;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "[config]") { section = Section::kConfig; continue; }
    if (line == "[vocab]") { section = Section::kVocab; continue; }
    if (line == "[scenes]") { section = Section::kScenes; continue; }
    if (line == "[references]") { section = Section::kRefs; continue; }
    std::istringstream ls(line);
    switch (section) {
      case Section::kConfig: {
        std::string key, eq;
        ls >> key >> eq;
        if (eq != "=") throw IoError("world: bad config line: " + line);
        if (key == "seed") {
          ls >> w.config_.seed;
        } else {
          int value = 0;
          ls >> value;
          if (key == "num_attributes") w.config_.num_attributes = value;
          else if (key == "values_per_attribute")
            w.config_.values_per_attribute = value;
          else if (key == "synonyms_per_value")
            w.config_.synonyms_per_value = value;
          else if (key == "refs_per_scene") w.config_.refs_per_scene = value;
          else if (key == "max_caption_len")
            w.config_.max_caption_len = value;
          else if (key == "train_scenes") w.config_.train_scenes = value;
          else if (key == "val_scenes") w.config_.val_scenes = value;
          else if (key == "test_scenes") w.config_.test_scenes = value;
          else throw IoError("world: unknown config key: " + key);
        }
        break;
      }
      case Section::kVocab: {
        int idx = 0;
        std::string token;
        ls >> idx >> token;
        if (idx != w.vocab_.size()) {
          throw IoError("world: vocab indices out of order");
        }
        w.vocab_.tokens.push_back(token);
        break;
      }
      case Section::kScenes: {
        Scene s;
        std::string split;
        ls >> s.id >> split;
        int a = 0;
        while (ls >> a) s.attributes.push_back(a);
        if (static_cast<int>(s.attributes.size()) !=
            w.config_.num_attributes) {
          throw IoError("world: scene attribute count mismatch");
        }
        switch (split_from_name(split)) {
          case Split::kTrain: w.train_.push_back(std::move(s)); break;
          case Split::kVal: w.val_.push_back(std::move(s)); break;
          case Split::kTest: w.test_.push_back(std::move(s)); break;
        }
        break;
      }
      case Section::kRefs: {
        ReferenceCaption ref;
        ls >> ref.scene_id;
        std::string token;
        while (ls >> token) {
          const int idx = w.vocab_.index_of(token);
          if (idx < 0) throw IoError("world: unknown token: " + token);
          ref.tokens.push_back(idx);
        }
        w.references_[ref.scene_id].push_back(std::move(ref));
        break;
      }
      case Section::kNone:
        throw IoError("world: content before any section");
    }
  }
  w.index_scenes();
  w.build_token_meaning();
  return w;
}

}  // namespace psst
