#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psst/rng.hpp"

namespace psst {

// Token table with fixed reserved indices. Indices are stable across runs
// with the same config.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  const std::string& name(int index) const { return tokens.at(index); }
  int index_of(const std::string& token) const;
};

struct WorldConfig {
  int num_attributes = 4;
  int values_per_attribute = 4;
  int synonyms_per_value = 2;
  int refs_per_scene = 5;
  int max_caption_len = 8;  // includes the terminating EOS
  int train_scenes = 192;
  int val_scenes = 32;
  int test_scenes = 32;
  std::uint64_t seed = 1;
  // Normally derived from the grammar; a supplied vocabulary must cover
  // every grammar token plus the reserved ones.
  std::optional<Vocabulary> vocab;

  void validate() const;
};

struct Scene {
  int id = 0;
  std::vector<int> attributes;  // each in [0, values_per_attribute)
};

// EOS-terminated token sequence describing a scene.
struct ReferenceCaption {
  int scene_id = 0;
  std::vector<int> tokens;
};

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Batch {
  Scene target;
  std::vector<Scene> distractors;
  std::vector<ReferenceCaption> references;  // for the target
};

// Synthetic stand-in for an image-caption corpus: attribute-vector scenes
// plus template-grammar references with synonym variation.
class World {
 public:
  static World generate(const WorldConfig& config);
  static World load(const std::filesystem::path& file);
  static World parse(const std::string& text);

  void save(const std::filesystem::path& file) const;
  std::string serialize() const;

  const WorldConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<Scene>& scenes(Split split) const;
  const std::vector<ReferenceCaption>& references_for(int scene_id) const;
  const Scene& scene_by_id(int scene_id) const;

  // Dimensionality of the one-hot-per-attribute scene encoding.
  int scene_input_dim() const {
    return config_.num_attributes * config_.values_per_attribute;
  }

  // Target plus batch_size-1 distinct distractors from the split. A
  // hard_fraction of distractors differs from the target in exactly one
  // attribute, when such scenes exist.
  Batch sample_batch(Split split, int batch_size, double hard_fraction,
                     Rng& rng) const;

  // Grammar inverse: recover the attribute vector from a caption. Returns
  // nullopt when the caption does not describe a unique complete scene.
  std::optional<std::vector<int>> parse_attributes(
      std::span<const int> tokens) const;

  // Surface token for (attribute, value, synonym).
  int grammar_token(int attribute, int value, int synonym) const;

 private:
  WorldConfig config_;
  Vocabulary vocab_;
  std::vector<Scene> train_, val_, test_;
  std::unordered_map<int, std::vector<ReferenceCaption>> references_;
  std::unordered_map<int, const Scene*> by_id_;
  // token index -> (attribute, value); -1 for reserved tokens
  std::vector<std::pair<int, int>> token_meaning_;

  void index_scenes();
  void build_token_meaning();
};

}  // namespace psst
