#pragma once

// Embedding files, label manifests, fold assignment and the synthetic
// two-view dataset.
//
// TGEB layout (little-endian):
//   "TGEB" | u16 version=1 | u32 dim | u32 count | u16 name_len | name bytes
//   | count*dim float32, row-major

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tango/autodiff.hpp"

namespace tango::data {

inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr const char* kManifestHeader =
    "utterance_id,speaker_label,emotion_label,gender_label,age_years,fold";

struct EmbeddingMatrix {
  std::string view_name;
  std::size_t dim = 0;
  // count x dim, held as float64; every value is representable as float32.
  std::vector<double> values;

  std::size_t count() const { return dim ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
  // Gathers rows into a [indices.size() x dim] tensor.
  ad::Tensor gather(std::span<const std::size_t> indices) const;
  void validate() const;
};

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes);
// Written to a sibling temporary and renamed into place.
void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

struct ManifestRow {
  std::string utterance_id;
  std::size_t speaker = 0;
  std::size_t emotion = 0;
  int gender = 0;
  double age = 0.0;
  std::optional<int> fold;
};

struct SampleManifest {
  std::vector<ManifestRow> rows;

  std::size_t size() const { return rows.size(); }
  std::size_t speaker_count() const;  // max label + 1
  std::size_t emotion_count() const;
  // True when every row carries a fold.
  bool has_folds() const;
};

SampleManifest parse_manifest(std::istream& in);
SampleManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const SampleManifest& m, std::ostream& out);
void write_manifest(const SampleManifest& m,
                    const std::filesystem::path& path);

struct FoldSplit {
  int k = 5;
  std::vector<int> assignment;
  std::vector<std::string> warnings;

  std::vector<std::size_t> test_indices(int fold) const;
  std::vector<std::size_t> train_indices(int fold) const;
};

// Speaker-stratified: rows of each speaker are shuffled with the seed and
// dealt round-robin; the dealing position carries over between speakers.
FoldSplit make_folds(const SampleManifest& m, int k = 5,
                     std::uint64_t seed = 42);
// Uses the manifest's fold column.
FoldSplit folds_from_manifest(const SampleManifest& m, int k = 5);

struct SynthSpec {
  std::size_t n_samples = 400;
  std::size_t n_speakers = 4;
  std::size_t n_emotions = 3;
  std::size_t dim_a = 32;
  std::size_t dim_b = 32;
  double noise = 0.5;
  std::uint64_t seed = 42;

  void validate() const;
};

// Coordinates of the planted signals inside one view.
struct ViewLayout {
  std::size_t own_offset = 0;       // one-hot blocks of the view's class task
  std::size_t own_width = 0;        // width of one block
  std::size_t own_classes = 0;
  std::size_t own_scalar = 0;       // gender (view A) or age (view B)
  std::size_t other_offset = 0;     // distractor blocks for the other view's class task
  std::size_t other_width = 0;
  std::size_t other_classes = 0;
  std::size_t other_scalar = 0;     // distractor for the other view's scalar task
};

inline constexpr double kDistractorStrength = 0.3;

struct SynthData {
  EmbeddingMatrix view_a;
  EmbeddingMatrix view_b;
  SampleManifest manifest;
  ViewLayout layout_a;
  ViewLayout layout_b;
};

ViewLayout synth_layout(std::size_t dim, std::size_t own_classes,
                        std::size_t other_classes);

// View A carries speaker (one-hot blocks) and gender (sign of a reserved
// coordinate); view B carries emotion (one-hot blocks) and age
// ((age - 45) / 15 on a reserved coordinate). Each view also holds
// distractors for the other view's tasks at kDistractorStrength of the
// planted amplitude. Every coordinate receives N(0, noise^2).
SynthData synth_dataset(const SynthSpec& spec);

// Noise-free mean of a sample's row in view A / view B.
std::vector<double> synth_mean_a(const SynthData& d, const ManifestRow& row);
std::vector<double> synth_mean_b(const SynthData& d, const ManifestRow& row);

}  // namespace tango::data
