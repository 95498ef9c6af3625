#include "tango/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "tango/errors.hpp"
#include "tango/random.hpp"

namespace tango::data {

namespace fs = std::filesystem;

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file: ") + what +
                        " needs " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", " +
                        std::to_string(bytes_.size() - pos_) + " available");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
float bits_float(std::uint32_t u) { return std::bit_cast<float>(u); }

void atomic_write(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

long long parse_int(const std::string& text, const std::string& column,
                    std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest line " + std::to_string(line) + ": column " +
                    column + " is not an integer: '" + text + "'");
  }
}

double parse_double(const std::string& text, const std::string& column,
                    std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest line " + std::to_string(line) + ": column " +
                    column + " is not a number: '" + text + "'");
  }
}

}  // namespace

ad::Tensor EmbeddingMatrix::gather(std::span<const std::size_t> indices) const {
  ad::Tensor t({indices.size(), dim});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= count()) {
      throw ContractError("embedding row " + std::to_string(indices[r]) +
                          " out of range");
    }
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[r] * dim),
                dim, t.data.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return t;
}

void EmbeddingMatrix::validate() const {
  if (dim == 0) throw FormatError("embedding dim must be positive");
  if (values.empty() || values.size() % dim != 0) {
    throw FormatError("embedding matrix must hold a positive whole number of rows");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw FormatError("embedding value at row " + std::to_string(i / dim) +
                        " is not finite");
    }
  }
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m) {
  m.validate();
  if (m.view_name.size() > 0xffff) throw FormatError("view name too long");
  std::vector<std::uint8_t> out;
  out.reserve(16 + m.view_name.size() + 4 * m.values.size());
  for (char c : std::string("TGEB")) out.push_back(static_cast<std::uint8_t>(c));
  put_le<std::uint16_t>(out, kEmbeddingVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.count()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(m.view_name.size()));
  for (char c : m.view_name) out.push_back(static_cast<std::uint8_t>(c));
  for (double v : m.values) put_le<std::uint32_t>(out, float_bits(static_cast<float>(v)));
  return out;
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "TGEB", 4) != 0) {
    throw FormatError("bad magic at offset 0 (expected TGEB)");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kEmbeddingVersion) {
    throw FormatError("unsupported version " + std::to_string(version) +
                      " at offset 4");
  }
  EmbeddingMatrix m;
  m.dim = r.get<std::uint32_t>("dim");
  if (m.dim == 0) throw FormatError("dim is 0 at offset 6");
  const std::size_t count = r.get<std::uint32_t>("count");
  if (count == 0) throw FormatError("count is 0 at offset 10");
  const auto name_len = r.get<std::uint16_t>("view name length");
  const auto name = r.take(name_len, "view name");
  m.view_name.assign(name.begin(), name.end());
  const std::size_t start = r.offset();
  const auto body = r.take(count * m.dim * 4, "embedding values");
  m.values.resize(count * m.dim);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    std::uint32_t u = 0;
    for (std::size_t b = 0; b < 4; ++b) u |= std::uint32_t{body[4 * i + b]} << (8 * b);
    const float f = bits_float(u);
    if (!std::isfinite(f)) {
      throw FormatError("non-finite value at offset " +
                        std::to_string(start + 4 * i));
    }
    m.values[i] = f;
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes at offset " + std::to_string(r.offset()));
  }
  return m;
}

void write_embeddings(const EmbeddingMatrix& m, const fs::path& path) {
  atomic_write(path, encode_embeddings(m));
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_embeddings(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::size_t SampleManifest::speaker_count() const {
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.speaker + 1);
  return n;
}

std::size_t SampleManifest::emotion_count() const {
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.emotion + 1);
  return n;
}

bool SampleManifest::has_folds() const {
  return !rows.empty() &&
         std::all_of(rows.begin(), rows.end(),
                     [](const ManifestRow& r) { return r.fold.has_value(); });
}

SampleManifest parse_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    const auto got = split_csv(line);
    const auto want = split_csv(kManifestHeader);
    for (const auto& column : want) {
      if (std::find(got.begin(), got.end(), column) == got.end()) {
        throw DataError("manifest header is missing column '" + column + "'");
      }
    }
    throw DataError(std::string("manifest header must be exactly '") +
                    kManifestHeader + "'");
  }
  SampleManifest m;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": expected 6 columns, got " + std::to_string(f.size()));
    }
    ManifestRow row;
    row.utterance_id = f[0];
    if (row.utterance_id.empty()) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": empty utterance_id");
    }
    if (auto [it, fresh] = seen.emplace(row.utterance_id, line_no); !fresh) {
      throw DataError("manifest: duplicate utterance_id '" + row.utterance_id +
                      "' on lines " + std::to_string(it->second) + " and " +
                      std::to_string(line_no));
    }
    const auto speaker = parse_int(f[1], "speaker_label", line_no);
    const auto emotion = parse_int(f[2], "emotion_label", line_no);
    const auto gender = parse_int(f[3], "gender_label", line_no);
    if (speaker < 0 || emotion < 0) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": labels must be >= 0");
    }
    if (gender != 0 && gender != 1) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": gender_label must be 0 or 1, got " +
                      std::to_string(gender));
    }
    row.speaker = static_cast<std::size_t>(speaker);
    row.emotion = static_cast<std::size_t>(emotion);
    row.gender = static_cast<int>(gender);
    row.age = parse_double(f[4], "age_years", line_no);
    if (!(row.age > 0.0) || !std::isfinite(row.age)) {
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": age_years must be > 0");
    }
    if (!f[5].empty()) {
      const auto fold = parse_int(f[5], "fold", line_no);
      if (fold < 0 || fold > 4) {
        throw DataError("manifest line " + std::to_string(line_no) +
                        ": fold must be in [0, 4]");
      }
      row.fold = static_cast<int>(fold);
    }
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty()) throw DataError("manifest has no rows");
  return m;
}

SampleManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(const SampleManifest& m, std::ostream& out) {
  out << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    std::ostringstream age;
    age.precision(17);
    age << r.age;
    out << r.utterance_id << ',' << r.speaker << ',' << r.emotion << ','
        << r.gender << ',' << age.str() << ',';
    if (r.fold) out << *r.fold;
    out << '\n';
  }
}

void write_manifest(const SampleManifest& m, const fs::path& path) {
  std::ostringstream buf;
  write_manifest(m, buf);
  const auto text = buf.str();
  atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                               text.size()));
}

std::vector<std::size_t> FoldSplit::test_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldSplit::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(i);
  }
  return out;
}

FoldSplit make_folds(const SampleManifest& m, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2");
  if (m.size() < static_cast<std::size_t>(k)) {
    throw ConfigError("need at least " + std::to_string(k) + " samples for " +
                      std::to_string(k) + " folds, got " +
                      std::to_string(m.size()));
  }
  std::map<std::size_t, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < m.size(); ++i) {
    by_speaker[m.rows[i].speaker].push_back(i);
  }
  FoldSplit split;
  split.k = k;
  split.assignment.assign(m.size(), -1);
  std::size_t deal = 0;
  for (auto& [speaker, members] : by_speaker) {
    Rng rng(seed, "folds/speaker" + std::to_string(speaker));
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.below(i)]);
    }
    if (members.size() < static_cast<std::size_t>(k)) {
      split.warnings.push_back("speaker " + std::to_string(speaker) + " has " +
                               std::to_string(members.size()) +
                               " samples and appears in fewer than " +
                               std::to_string(k) + " folds");
    }
    for (auto idx : members) {
      split.assignment[idx] = static_cast<int>(deal % static_cast<std::size_t>(k));
      ++deal;
    }
  }
  return split;
}

FoldSplit folds_from_manifest(const SampleManifest& m, int k) {
  if (!m.has_folds()) throw DataError("manifest does not assign every row a fold");
  FoldSplit split;
  split.k = k;
  for (const auto& r : m.rows) {
    if (*r.fold >= k) throw DataError("manifest fold out of range");
    split.assignment.push_back(*r.fold);
  }
  return split;
}

void SynthSpec::validate() const {
  if (dim_a < 8 || dim_b < 8) {
    throw ConfigError("synthetic view dims must be >= 8");
  }
  if (n_speakers < 2 || n_emotions < 2) {
    throw ConfigError("synthetic data needs >= 2 speakers and >= 2 emotions");
  }
  if (n_samples < n_speakers) {
    throw ConfigError("synthetic data needs at least one sample per speaker");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw ConfigError("noise must be finite and >= 0");
  }
  synth_layout(dim_a, n_speakers, n_emotions);
  synth_layout(dim_b, n_emotions, n_speakers);
}

ViewLayout synth_layout(std::size_t dim, std::size_t own_classes,
                        std::size_t other_classes) {
  ViewLayout l;
  l.own_classes = own_classes;
  l.other_classes = other_classes;
  l.own_width = std::max<std::size_t>(1, (dim / 2) / own_classes);
  l.other_width = std::max<std::size_t>(1, (dim / 4) / other_classes);
  l.own_offset = 0;
  l.own_scalar = own_classes * l.own_width;
  l.other_offset = l.own_scalar + 1;
  l.other_scalar = l.other_offset + other_classes * l.other_width;
  if (l.other_scalar + 1 > dim) {
    throw ConfigError("view dim " + std::to_string(dim) + " cannot hold " +
                      std::to_string(own_classes) + " + " +
                      std::to_string(other_classes) + " class blocks");
  }
  return l;
}

namespace {

double age_code(double age) { return (age - 45.0) / 15.0; }
double gender_code(int gender) { return gender ? 1.0 : -1.0; }

std::vector<double> view_mean(std::size_t dim, const ViewLayout& l,
                              std::size_t own_class, double own_scalar,
                              std::size_t other_class, double other_scalar) {
  std::vector<double> mu(dim, 0.0);
  for (std::size_t k = 0; k < l.own_width; ++k) {
    mu[l.own_offset + own_class * l.own_width + k] = 1.0;
  }
  mu[l.own_scalar] = own_scalar;
  for (std::size_t k = 0; k < l.other_width; ++k) {
    mu[l.other_offset + other_class * l.other_width + k] = kDistractorStrength;
  }
  mu[l.other_scalar] = kDistractorStrength * other_scalar;
  return mu;
}

}  // namespace

std::vector<double> synth_mean_a(const SynthData& d, const ManifestRow& row) {
  return view_mean(d.view_a.dim, d.layout_a, row.speaker,
                   gender_code(row.gender), row.emotion, age_code(row.age));
}

std::vector<double> synth_mean_b(const SynthData& d, const ManifestRow& row) {
  return view_mean(d.view_b.dim, d.layout_b, row.emotion, age_code(row.age),
                   row.speaker, gender_code(row.gender));
}

SynthData synth_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthData d;
  d.layout_a = synth_layout(spec.dim_a, spec.n_speakers, spec.n_emotions);
  d.layout_b = synth_layout(spec.dim_b, spec.n_emotions, spec.n_speakers);
  d.view_a.view_name = "synth_a";
  d.view_a.dim = spec.dim_a;
  d.view_b.view_name = "synth_b";
  d.view_b.dim = spec.dim_b;

  Rng labels(spec.seed, "synth/labels");
  Rng noise_a(spec.seed, "synth/noise_a");
  Rng noise_b(spec.seed, "synth/noise_b");
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    ManifestRow row;
    row.utterance_id = "utt" + std::to_string(i);
    row.speaker = i % spec.n_speakers;
    row.gender = static_cast<int>(row.speaker % 2);
    row.emotion = static_cast<std::size_t>(labels.below(spec.n_emotions));
    // float32-exact so that the manifest and the embeddings agree on disk.
    row.age = static_cast<float>(labels.uniform(20.0, 70.0));
    d.manifest.rows.push_back(row);
  }
  for (const auto& row : d.manifest.rows) {
    for (double mu : synth_mean_a(d, row)) {
      d.view_a.values.push_back(
          static_cast<float>(mu + spec.noise * noise_a.normal()));
    }
    for (double mu : synth_mean_b(d, row)) {
      d.view_b.values.push_back(
          static_cast<float>(mu + spec.noise * noise_b.normal()));
    }
  }
  return d;
}

}  // namespace tango::data
