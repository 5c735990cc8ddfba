#include "epiglab/data.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace fs = std::filesystem;

namespace {

std::atomic<std::size_t> g_embedding_reads{0};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_u32(const std::string& bytes, std::size_t offset, const fs::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  }
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(bytes[offset + b]);
  return v;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
    fields.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

/// Non-empty lines of a text file, with line numbers (0-based) for messages.
std::vector<std::pair<std::size_t, std::string>> csv_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 0; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.emplace_back(lineno, line);
  }
  return lines;
}

EmbeddingTable parse_emb1(const std::string& bytes, const fs::path& path) {
  const std::uint32_t n = read_u32(bytes, 4, path);
  const std::uint32_t d = read_u32(bytes, 8, path);
  if (n == 0 || d == 0) throw FormatError(path.string() + ": EMB1 header declares an empty table at byte offset 4");
  const std::size_t expected = 12 + static_cast<std::size_t>(n) * d * 4;
  if (bytes.size() < expected) {
    throw FormatError(path.string() + ": truncated EMB1 payload, header declares n=" + std::to_string(n) +
                      " d=" + std::to_string(d) + " but data ends at byte offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(expected) + ")");
  }
  if (bytes.size() > expected) {
    throw FormatError(path.string() + ": trailing bytes after EMB1 payload at byte offset " + std::to_string(expected));
  }
  std::vector<float> values(static_cast<std::size_t>(n) * d);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = read_u32(bytes, 12 + 4 * i, path);
    std::memcpy(&values[i], &bits, sizeof(float));
  }
  return EmbeddingTable(n, d, std::move(values));
}

EmbeddingTable parse_embedding_csv(const std::string& text, const fs::path& path) {
  std::vector<float> values;
  std::size_t d = 0;
  std::size_t n = 0;
  for (const auto& [lineno, line] : csv_lines(text)) {
    auto fields = split_fields(line);
    if (d == 0) d = fields.size();
    if (fields.size() != d) {
      throw FormatError(path.string() + ": row " + std::to_string(n) + " (line " + std::to_string(lineno + 1) +
                        ") has " + std::to_string(fields.size()) + " fields, expected " + std::to_string(d));
    }
    for (const auto& f : fields) {
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw FormatError(path.string() + ": row " + std::to_string(n) + ": cannot parse '" + f + "'");
      }
      values.push_back(v);
    }
    ++n;
  }
  if (n == 0) throw FormatError(path.string() + ": empty CSV");
  return EmbeddingTable(n, d, std::move(values));
}

/// Draws `count` from `candidates`, stratified over the known labels of the
/// eligible classes. Falls back to a uniform draw when no labels are known.
std::vector<std::size_t> draw_stratified(const std::vector<std::size_t>& candidates, std::size_t count,
                                         const LabelVector& labels, const std::optional<std::set<int>>& eligible,
                                         Rng& rng, const char* what) {
  if (count == 0) return {};
  std::map<int, std::vector<std::size_t>> groups;
  std::size_t known = 0;
  for (std::size_t idx : candidates) {
    if (idx >= labels.size() || !labels.known(idx)) continue;
    int c = labels[idx];
    if (eligible && !eligible->contains(c)) continue;
    groups[c].push_back(idx);
    ++known;
  }
  if (known == 0) {
    if (eligible) throw ConfigError(std::string("no labelled examples of the evaluation classes for the ") + what + " split");
    return rng.sample(candidates, count);
  }
  if (count > known) {
    throw ConfigError(std::string(what) + " split needs " + std::to_string(count) + " labelled examples, only " +
                      std::to_string(known) + " available");
  }
  // Largest-remainder allocation proportional to group sizes; ties go to the
  // lower class index.
  std::vector<std::pair<int, std::size_t>> quota;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [c, members] : groups) {
    double exact = static_cast<double>(count) * static_cast<double>(members.size()) / static_cast<double>(known);
    auto floor_q = static_cast<std::size_t>(std::floor(exact));
    quota.emplace_back(c, floor_q);
    remainders.emplace_back(exact - static_cast<double>(floor_q), c);
    assigned += floor_q;
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < count; ++r, ++assigned) {
    int c = remainders[r % remainders.size()].second;
    for (auto& [qc, q] : quota) {
      if (qc == c) ++q;
    }
  }
  std::vector<std::size_t> out;
  for (const auto& [c, q] : quota) {
    auto drawn = rng.sample(groups[c], q);
    out.insert(out.end(), drawn.begin(), drawn.end());
  }
  return out;
}

void remove_all(std::vector<std::size_t>& from, const std::vector<std::size_t>& taken) {
  std::set<std::size_t> gone(taken.begin(), taken.end());
  std::erase_if(from, [&](std::size_t i) { return gone.contains(i); });
}

}  // namespace

void write_atomically(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(std::size_t n, std::size_t d, std::vector<float> values)
    : n_(n), d_(d), values_(std::move(values)) {
  if (n_ == 0 || d_ == 0) throw DataError("embedding table must have n >= 1 and d >= 1");
  if (values_.size() != n_ * d_) throw ShapeError("embedding values do not match n*d");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DataError("non-finite embedding value in row " + std::to_string(i / d_) + ", column " +
                      std::to_string(i % d_));
    }
  }
}

LabelVector::LabelVector(int classes, std::vector<int> entries) : classes_(classes), entries_(std::move(entries)) {
  if (classes_ < 1) throw ConfigError("label vector needs at least one class");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    int v = entries_[i];
    if (v != kUnknown && (v < 0 || v >= classes_)) {
      throw RangeError("label " + std::to_string(v) + " at index " + std::to_string(i) + " outside [0, " +
                       std::to_string(classes_) + ")");
    }
  }
}

std::size_t LabelVector::unknown_count() const {
  return static_cast<std::size_t>(std::count(entries_.begin(), entries_.end(), kUnknown));
}

void LabelVector::set(std::size_t i, int label) {
  if (i >= entries_.size()) throw RangeError("label index " + std::to_string(i) + " out of range");
  if (label != kUnknown && (label < 0 || label >= classes_)) {
    throw RangeError("label " + std::to_string(label) + " at index " + std::to_string(i) + " outside [0, " +
                     std::to_string(classes_) + ")");
  }
  entries_[i] = label;
}

TaskSpec TaskSpec::all_classes(int classes) {
  TaskSpec t;
  t.classes_of_interest.resize(static_cast<std::size_t>(classes));
  std::iota(t.classes_of_interest.begin(), t.classes_of_interest.end(), 0);
  return t;
}

void TaskSpec::validate(int source_classes) const {
  if (classes_of_interest.empty()) throw ConfigError("task: classes_of_interest is empty");
  std::set<int> seen;
  for (int c : classes_of_interest) {
    if (c < 0 || c >= source_classes) {
      throw ConfigError("task: class " + std::to_string(c) + " outside [0, " + std::to_string(source_classes) + ")");
    }
    if (!seen.insert(c).second) throw ConfigError("task: duplicate class " + std::to_string(c));
  }
  if (!group_rest_as_other && static_cast<int>(seen.size()) != source_classes) {
    throw ConfigError("task: classes outside classes_of_interest need group_rest_as_other");
  }
  if (!class_names.empty() && static_cast<int>(class_names.size()) != effective_classes()) {
    throw ConfigError("task: expected " + std::to_string(effective_classes()) + " class names, got " +
                      std::to_string(class_names.size()));
  }
}

std::vector<std::string> TaskSpec::effective_names() const {
  if (!class_names.empty()) return class_names;
  std::vector<std::string> names;
  for (int c : classes_of_interest) names.push_back("class " + std::to_string(c));
  if (group_rest_as_other) names.emplace_back("other");
  return names;
}

LabelVector apply_task(const LabelVector& labels, const TaskSpec& task) {
  task.validate(labels.classes());
  const int m = static_cast<int>(task.classes_of_interest.size());
  std::vector<int> map(static_cast<std::size_t>(labels.classes()), m);
  for (int j = 0; j < m; ++j) map[static_cast<std::size_t>(task.classes_of_interest[j])] = j;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = labels.known(i) ? map[static_cast<std::size_t>(labels[i])] : LabelVector::kUnknown;
  }
  return LabelVector(task.effective_classes(), std::move(out));
}

SplitSpec split(std::size_t n, const SplitSizes& sizes, const LabelVector& labels, std::uint64_t seed,
                const std::optional<std::vector<int>>& eval_classes) {
  if (sizes.target + sizes.validation + sizes.test > n) {
    throw ConfigError("split sizes (" + std::to_string(sizes.target) + " + " + std::to_string(sizes.validation) +
                      " + " + std::to_string(sizes.test) + ") exceed n = " + std::to_string(n));
  }
  if (labels.size() != 0 && labels.size() != n) throw ShapeError("split: label count does not match n");
  std::optional<std::set<int>> eligible;
  if (eval_classes) eligible.emplace(eval_classes->begin(), eval_classes->end());

  Rng rng(seed);
  std::vector<std::size_t> available(n);
  std::iota(available.begin(), available.end(), std::size_t{0});

  SplitSpec out;
  out.test = draw_stratified(available, sizes.test, labels, eligible, rng, "test");
  remove_all(available, out.test);
  out.validation = draw_stratified(available, sizes.validation, labels, std::nullopt, rng, "validation");
  remove_all(available, out.validation);

  std::vector<std::size_t> target_candidates;
  for (std::size_t idx : available) {
    if (!eligible || (idx < labels.size() && labels.known(idx) && eligible->contains(labels[idx]))) {
      target_candidates.push_back(idx);
    }
  }
  if (sizes.target > target_candidates.size()) {
    throw ConfigError("target split needs " + std::to_string(sizes.target) + " examples, only " +
                      std::to_string(target_candidates.size()) + " eligible");
  }
  out.target = rng.sample(target_candidates, sizes.target);
  remove_all(available, out.target);
  out.pool = std::move(available);

  std::sort(out.test.begin(), out.test.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.target.begin(), out.target.end());
  return out;
}

std::vector<std::size_t> stratified_init(const LabelVector& labels, std::size_t per_class,
                                         std::span<const std::size_t> pool, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(labels.classes()));
  for (std::size_t idx : pool) {
    if (idx < labels.size() && labels.known(idx)) by_class[static_cast<std::size_t>(labels[idx])].push_back(idx);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < per_class) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " labelled pool examples, initialisation needs " + std::to_string(per_class));
    }
    auto drawn = rng.sample(by_class[c], per_class);
    out.insert(out.end(), drawn.begin(), drawn.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

EmbeddingTable load_embeddings(const fs::path& path) {
  ++g_embedding_reads;
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "EMB1") == 0) return parse_emb1(bytes, path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "LAB1") == 0) {
    throw FormatError(path.string() + ": bad magic at byte offset 0 (found LAB1, expected EMB1)");
  }
  return parse_embedding_csv(bytes, path);
}

void write_embeddings(const fs::path& path, const EmbeddingTable& table) {
  std::string out = "EMB1";
  put_u32(out, static_cast<std::uint32_t>(table.n()));
  put_u32(out, static_cast<std::uint32_t>(table.d()));
  out.reserve(out.size() + table.values().size() * 4);
  for (float v : table.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(float));
    put_u32(out, bits);
  }
  write_atomically(path, out);
}

std::size_t embedding_reads() { return g_embedding_reads.load(); }

LabelVector load_labels(const fs::path& path, std::optional<int> classes) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "LAB1") == 0) {
    const std::uint32_t n = read_u32(bytes, 4, path);
    const auto c = static_cast<int>(read_u32(bytes, 8, path));
    if (classes && *classes != c) {
      throw FormatError(path.string() + ": header declares C=" + std::to_string(c) + " at byte offset 8, expected " +
                        std::to_string(*classes));
    }
    const std::size_t expected = 12 + static_cast<std::size_t>(n) * 4;
    if (bytes.size() < expected) {
      throw FormatError(path.string() + ": truncated LAB1 payload, data ends at byte offset " +
                        std::to_string(bytes.size()) + " (expected " + std::to_string(expected) + ")");
    }
    std::vector<int> entries(n);
    for (std::size_t i = 0; i < n; ++i) entries[i] = static_cast<std::int32_t>(read_u32(bytes, 12 + 4 * i, path));
    return LabelVector(c, std::move(entries));
  }
  std::vector<int> entries;
  for (const auto& [lineno, line] : csv_lines(bytes)) {
    auto fields = split_fields(line);
    if (fields.size() != 1) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno + 1) + " must hold a single label");
    }
    int v = 0;
    const auto& f = fields.front();
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno + 1) + ": cannot parse '" + f + "'");
    }
    entries.push_back(v);
  }
  int c = classes.value_or(entries.empty() ? 1 : *std::max_element(entries.begin(), entries.end()) + 1);
  return LabelVector(std::max(c, 1), std::move(entries));
}

void write_labels(const fs::path& path, const LabelVector& labels) {
  std::string out = "LAB1";
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  put_u32(out, static_cast<std::uint32_t>(labels.classes()));
  for (int v : labels.entries()) put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
  write_atomically(path, out);
}

// ---------------------------------------------------------------------------

SyntheticData make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ConfigError("synthetic: need at least 2 classes");
  if (spec.per_class < 1 || spec.latent_dim < 1) throw ConfigError("synthetic: counts must be >= 1");
  if (spec.raw_dim < spec.latent_dim) {
    throw ConfigError("synthetic: raw dim " + std::to_string(spec.raw_dim) + " < latent dim " +
                      std::to_string(spec.latent_dim));
  }
  if (spec.noise_scale < 0.0 || spec.separation < 0.0) throw ConfigError("synthetic: scales must be non-negative");

  const auto C = static_cast<std::size_t>(spec.classes);
  const std::size_t L = spec.latent_dim;
  const std::size_t R = spec.raw_dim;
  const std::size_t n = C * spec.per_class;

  // Random centres rescaled so the closest pair sits exactly `separation` apart.
  Rng centre_rng(derive_seed(seed, 1));
  std::vector<double> centres(C * L);
  for (auto& v : centres) v = centre_rng.normal();
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < C; ++a) {
    for (std::size_t b = a + 1; b < C; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        double diff = centres[a * L + j] - centres[b * L + j];
        s += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(s));
    }
  }
  const double scale = min_dist > 0.0 ? spec.separation / min_dist : 0.0;
  for (auto& v : centres) v *= scale;

  Rng map_rng(derive_seed(seed, 2));
  std::vector<double> mixing(L * R);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(L));
  for (auto& v : mixing) v = map_rng.normal() * map_scale;

  Rng point_rng(derive_seed(seed, 3));
  Rng noise_rng(derive_seed(seed, 4));
  std::vector<float> latent(n * L);
  std::vector<float> raw(n * R);
  std::vector<int> labels(n);
  std::vector<double> z(L);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % C;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < L; ++j) {
      z[j] = centres[c * L + j] + point_rng.normal();
      latent[i * L + j] = static_cast<float>(z[j]);
    }
    for (std::size_t r = 0; r < R; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) s += z[j] * mixing[j * R + r];
      raw[i * R + r] = static_cast<float>(s + spec.noise_scale * noise_rng.normal());
    }
  }
  return {EmbeddingTable(n, L, std::move(latent)), EmbeddingTable(n, R, std::move(raw)),
          LabelVector(spec.classes, std::move(labels))};
}

// ---------------------------------------------------------------------------

AssetStore::AssetStore(const fs::path& dir, std::optional<std::size_t> n) {
  if (!fs::is_directory(dir)) throw DataError("asset directory " + dir.string() + " does not exist");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string stem = entry.path().stem().string();
    std::size_t index = 0;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), index);
    if (ec != std::errc() || ptr != stem.data() + stem.size()) continue;
    if (n && index >= *n) {
      throw DataError("asset " + entry.path().filename().string() + " has index >= n = " + std::to_string(*n));
    }
    assets_[index] = Asset{entry.path(), media_type_for(entry.path())};
  }
}

std::optional<AssetStore::Asset> AssetStore::find(std::size_t index) const {
  auto it = assets_.find(index);
  if (it == assets_.end()) return std::nullopt;
  return it->second;
}

std::string AssetStore::read(std::size_t index) const {
  auto asset = find(index);
  if (!asset) throw DataError("no asset for index " + std::to_string(index));
  return read_file(asset->path);
}

std::string AssetStore::media_type_for(const fs::path& path) {
  static const std::map<std::string, std::string> types = {
      {".png", "image/png"},      {".jpg", "image/jpeg"},     {".jpeg", "image/jpeg"},
      {".gif", "image/gif"},      {".bmp", "image/bmp"},      {".webp", "image/webp"},
      {".svg", "image/svg+xml"},  {".txt", "text/plain"},     {".json", "application/json"},
      {".html", "text/html"},     {".wav", "audio/wav"},      {".mp3", "audio/mpeg"},
  };
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

}  // namespace epiglab
