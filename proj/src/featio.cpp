#include "simil/featio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "simil/errors.hpp"

namespace simil {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw FormatError(where + ": not a finite number: '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s, const std::string& where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(where + ": not an integer: '" + s + "'");
  }
  return v;
}

void require_plain_token(const std::string& s, const char* what) {
  if (s.empty()) throw FormatError(std::string(what) + " is empty");
  for (char ch : s) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.')) {
      throw FormatError(std::string(what) + " '" + s + "' contains characters outside [A-Za-z0-9_.-]");
    }
  }
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// PGM header tokens, skipping '#' comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw FormatError(path.string() + ": truncated PGM header");
  return tok;
}

template <typename T>
Image<T> read_pgm(const fs::path& path, unsigned expected_maxval) {
  std::ifstream in = open_in(path);
  if (pgm_token(in, path) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  const long long w = parse_int(pgm_token(in, path), path.string());
  const long long h = parse_int(pgm_token(in, path), path.string());
  const long long maxval = parse_int(pgm_token(in, path), path.string());
  if (w <= 0 || h <= 0) throw FormatError(path.string() + ": bad PGM dimensions");
  if (maxval != static_cast<long long>(expected_maxval)) {
    throw FormatError(path.string() + ": expected maxval " + std::to_string(expected_maxval) +
                      ", found " + std::to_string(maxval));
  }
  Image<T> img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.resize(img.width * img.height);
  const std::size_t bytes_per = sizeof(T);
  std::vector<unsigned char> raw(img.pixels.size() * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError(path.string() + ": truncated PGM payload");
  }
  if (in.peek() != EOF) throw FormatError(path.string() + ": trailing bytes after PGM payload");
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if constexpr (sizeof(T) == 1) {
      img.pixels[i] = raw[i];
    } else {
      img.pixels[i] = static_cast<T>((raw[2 * i] << 8) | raw[2 * i + 1]);  // big-endian
    }
  }
  return img;
}

template <typename T>
void write_pgm_impl(const Image<T>& img, unsigned maxval, const fs::path& path) {
  if (img.pixels.size() != img.width * img.height) throw FormatError("image buffer/shape mismatch");
  std::ofstream out = open_out(path);
  out << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
  std::vector<unsigned char> raw(img.pixels.size() * sizeof(T));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if constexpr (sizeof(T) == 1) {
      raw[i] = img.pixels[i];
    } else {
      raw[2 * i] = static_cast<unsigned char>(img.pixels[i] >> 8);
      raw[2 * i + 1] = static_cast<unsigned char>(img.pixels[i] & 0xFF);
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace

// ---------------------------------------------------------------- types

std::string NucleusTypeSet::slug(std::size_t type) const {
  std::string s = names.at(type);
  for (char& ch : s) {
    if (ch == '-' || ch == ' ') {
      ch = '_';
    } else {
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  return s;
}

void NucleusTypeSet::validate() const {
  if (names.size() < 2 || names.size() > 8) {
    throw FormatError("nucleus type count must be in 2..8, got " + std::to_string(names.size()));
  }
  std::set<std::string> seen;
  for (std::size_t t = 0; t < names.size(); ++t) {
    require_plain_token(slug(t), "nucleus type name");
    if (!seen.insert(slug(t)).second) throw FormatError("duplicate nucleus type '" + names[t] + "'");
  }
}

NucleusTypeSet default_type_set(std::size_t c) {
  static const char* kDefaults[] = {"Neoplastic", "Inflammatory", "Connective", "Necrosis",
                                    "Non-neoplastic-epithelial"};
  NucleusTypeSet set;
  for (std::size_t t = 0; t < c; ++t) {
    set.names.push_back(t < 5 ? kDefaults[t] : "Type" + std::to_string(t));
  }
  return set;
}

// ---------------------------------------------------------------- bundles

GrayImage read_pgm8(const fs::path& path) { return read_pgm<std::uint8_t>(path, 255); }
InstanceMap read_pgm16(const fs::path& path) { return read_pgm<std::uint16_t>(path, 65535); }
void write_pgm(const GrayImage& image, const fs::path& path) { write_pgm_impl(image, 255, path); }
void write_pgm(const InstanceMap& image, const fs::path& path) { write_pgm_impl(image, 65535, path); }

void PatchBundle::validate() const {
  type_set.validate();
  if (intensity.width != instances.width || intensity.height != instances.height) {
    throw FormatError("intensity and instance maps differ in shape");
  }
  if (intensity.pixels.size() != intensity.width * intensity.height ||
      instances.pixels.size() != instances.width * instances.height) {
    throw FormatError("image buffer/shape mismatch");
  }
  std::set<std::uint16_t> present;
  for (std::uint16_t id : instances.pixels) {
    if (id != 0) present.insert(id);
  }
  for (std::uint16_t id : present) {
    if (!types.contains(id)) {
      throw FormatError("instance id " + std::to_string(id) + " has no type entry");
    }
  }
  for (const auto& [id, type] : types) {
    if (id == 0) throw FormatError("instance id 0 is reserved for background");
    if (!present.contains(id)) {
      throw FormatError("types entry for instance id " + std::to_string(id) +
                        " absent from the instance map");
    }
    if (type < 0 || static_cast<std::size_t>(type) >= type_set.size()) {
      throw FormatError("type id " + std::to_string(type) + " out of range");
    }
  }
}

PatchBundle load_patch_bundle(const fs::path& dir) {
  for (const char* name : {"intensity.pgm", "instances.pgm", "types.csv", "meta.json"}) {
    if (!fs::exists(dir / name)) throw IoError("missing " + (dir / name).string());
  }
  PatchBundle b;
  const nlohmann::json meta = read_json(dir / "meta.json");
  try {
    if (meta.at("schema_version").get<int>() != kSchemaVersion) {
      throw FormatError("unsupported meta.json schema_version");
    }
    b.slide_id = meta.at("slide_id").get<std::string>();
    b.patch_id = meta.at("patch_id").get<std::string>();
    b.magnification_tag = meta.at("magnification_tag").get<std::string>();
    b.type_set.names = meta.at("type_set").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  b.intensity = read_pgm8(dir / "intensity.pgm");
  b.instances = read_pgm16(dir / "instances.pgm");

  std::ifstream in = open_in(dir / "types.csv");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("types.csv is empty");
  strip_cr(line);
  if (line != "instance_id,type_id") throw FormatError("types.csv: bad header '" + line + "'");
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) throw FormatError("types.csv: expected 2 fields in '" + line + "'");
    const long long id = parse_int(f[0], "types.csv");
    const long long type = parse_int(f[1], "types.csv");
    if (id <= 0 || id > 65535) throw FormatError("types.csv: instance id out of range");
    if (!b.types.emplace(static_cast<std::uint16_t>(id), static_cast<int>(type)).second) {
      throw FormatError("types.csv: duplicate instance id " + f[0]);
    }
  }
  b.validate();
  return b;
}

void save_patch_bundle(const PatchBundle& b, const fs::path& dir) {
  b.validate();
  fs::create_directories(dir);
  write_pgm(b.intensity, dir / "intensity.pgm");
  write_pgm(b.instances, dir / "instances.pgm");
  std::ostringstream types;
  types << "instance_id,type_id\n";
  for (const auto& [id, type] : b.types) types << id << ',' << type << '\n';
  write_text(types.str(), dir / "types.csv");
  nlohmann::json meta = {{"schema_version", kSchemaVersion},
                         {"slide_id", b.slide_id},
                         {"patch_id", b.patch_id},
                         {"magnification_tag", b.magnification_tag},
                         {"type_set", b.type_set.names}};
  write_json(meta, dir / "meta.json");
}

// ---------------------------------------------------------------- columns

std::vector<std::string> feature_columns(const NucleusTypeSet& types) {
  types.validate();
  const std::size_t c = types.size();
  std::vector<std::string> cols;
  cols.reserve(feature_count(c));
  for (std::size_t t = 0; t < c; ++t)
    for (const char* prop : kMorphProps)
      for (const char* stat : kMorphStats)
        cols.push_back("morph." + types.slug(t) + "." + prop + "." + stat);
  for (std::size_t t = 0; t < c; ++t) cols.push_back("count." + types.slug(t));
  for (const char* prop : kSnaProps)
    for (const char* stat : kSnaStats) cols.push_back(std::string("sna.") + prop + "." + stat);
  for (const char* name : kGlobalHet) cols.push_back(std::string("het.global.") + name);
  for (const char* name : kLocalEntropy) cols.push_back(std::string("het.local.") + name);
  const std::string ref = types.slug(0);
  for (std::size_t t = 1; t < c; ++t) cols.push_back("het.local.mix." + ref + "_in_" + types.slug(t));
  for (std::size_t t = 1; t < c; ++t) cols.push_back("het.local.mix." + types.slug(t) + "_in_" + ref);
  return cols;
}

std::vector<std::string> feature_columns(std::size_t c) {
  if (c < 2) throw FormatError("feature_columns requires c >= 2");
  return feature_columns(default_type_set(c));
}

FeatureBlocks feature_blocks(std::size_t c) {
  const std::size_t morph = 0;
  const std::size_t count = morph + 40 * c;
  const std::size_t sna = count + c;
  const std::size_t global = sna + 20;
  const std::size_t local = global + 9;
  return {morph, count, sna, global, local, local + 4 + 2 * (c - 1)};
}

std::optional<NucleusTypeSet> canonical_type_set(const std::vector<std::string>& columns) {
  if (columns.size() < 31 || (columns.size() - 31) % 43 != 0) return std::nullopt;
  const std::size_t c = (columns.size() - 31) / 43;
  if (c < 2 || c > 8) return std::nullopt;
  NucleusTypeSet set;
  const FeatureBlocks blocks = feature_blocks(c);
  for (std::size_t t = 0; t < c; ++t) {
    const std::string& name = columns[blocks.count_begin + t];
    if (name.rfind("count.", 0) != 0) return std::nullopt;
    set.names.push_back(name.substr(6));
  }
  try {
    if (feature_columns(set) != columns) return std::nullopt;
  } catch (const FormatError&) {
    return std::nullopt;
  }
  return set;
}

// ---------------------------------------------------------------- matrices

void FeatureMatrix::append(RowKey key, std::vector<double> row) {
  if (row.size() != columns.size()) {
    throw FormatError("row width " + std::to_string(row.size()) + " != column count " +
                      std::to_string(columns.size()));
  }
  keys.push_back(std::move(key));
  rows.push_back(std::move(row));
}

void FeatureMatrix::validate() const {
  if (keys.size() != rows.size()) throw FormatError("feature matrix keys/rows length mismatch");
  std::set<std::string> names(columns.begin(), columns.end());
  if (names.size() != columns.size()) throw FormatError("duplicate column names");
  std::set<RowKey> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != columns.size()) throw FormatError("ragged feature matrix row");
    if (!seen.insert(keys[i]).second) {
      throw FormatError("duplicate row key (" + keys[i].slide_id + ", " + keys[i].patch_id + ")");
    }
  }
}

FeatureMatrix read_feature_table(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  strip_cr(line);
  auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "slide_id" || header[1] != "patch_id") {
    throw FormatError(path.string() + ": header must start with slide_id,patch_id");
  }
  FeatureMatrix m;
  m.columns.assign(header.begin() + 2, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto f = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != header.size()) throw FormatError(where + ": wrong field count");
    std::vector<double> row;
    row.reserve(m.columns.size());
    for (std::size_t j = 2; j < f.size(); ++j) row.push_back(parse_double(f[j], where));
    m.append({f[0], f[1]}, std::move(row));
  }
  m.validate();
  return m;
}

FeatureMatrix read_feature_matrix(const fs::path& path) {
  FeatureMatrix m = read_feature_table(path);
  if (!canonical_type_set(m.columns)) {
    throw FormatError(path.string() + ": header does not match the canonical feature columns");
  }
  return m;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw FormatError("cannot format number");
  return std::string(buf, ptr);
}

void write_feature_matrix(const FeatureMatrix& m, const fs::path& path) {
  m.validate();
  std::ostringstream os;
  os << "slide_id,patch_id";
  for (const auto& c : m.columns) {
    if (c.find(',') != std::string::npos) throw FormatError("column name contains a comma");
    os << ',' << c;
  }
  os << '\n';
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    require_plain_token(m.keys[i].slide_id, "slide id");
    require_plain_token(m.keys[i].patch_id, "patch id");
    os << m.keys[i].slide_id << ',' << m.keys[i].patch_id;
    for (double v : m.rows[i]) {
      if (!std::isfinite(v)) throw FormatError("non-finite feature value");
      os << ',' << format_double(v);
    }
    os << '\n';
  }
  write_text(os.str(), path);
}

// ---------------------------------------------------------------- bags

void Bag::validate() const {
  if (patch_ids.empty()) throw DataError("bag " + slide_id + " is empty");
  if (label != 0 && label != 1) throw DataError("bag " + slide_id + ": label must be 0 or 1");
  if (deep.rank() != 2 || path.rank() != 2) throw DataError("bag " + slide_id + ": features must be matrices");
  if (deep.rows() != patch_ids.size() || path.rows() != patch_ids.size()) {
    throw DataError("bag " + slide_id + ": per-patch row counts disagree");
  }
}

void write_deep_sidecar(const Tensor& features, const fs::path& stem) {
  if (features.rank() != 2) throw ShapeError("deep features must be a matrix");
  std::vector<unsigned char> raw(features.size() * 4);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(features[i]));
    for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  fs::path bin = stem;
  bin += ".bin";
  fs::path header = stem;
  header += ".json";
  std::ofstream out = open_out(bin);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  write_json({{"schema_version", kSchemaVersion},
              {"rows", features.rows()},
              {"cols", features.cols()},
              {"dtype", "float32"},
              {"endianness", "little"}},
             header);
}

Tensor read_deep_sidecar(const fs::path& stem) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path header_path = stem;
  header_path += ".json";
  const nlohmann::json header = read_json(header_path);
  std::size_t rows = 0, cols = 0;
  try {
    if (header.at("dtype") != "float32" || header.at("endianness") != "little") {
      throw FormatError(header_path.string() + ": only little-endian float32 is supported");
    }
    rows = header.at("rows").get<std::size_t>();
    cols = header.at("cols").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  std::ifstream in = open_in(bin);
  std::vector<unsigned char> raw(rows * cols * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size() || in.peek() != EOF) {
    throw FormatError(bin.string() + ": payload size does not match header");
  }
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
    const double v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw FormatError(bin.string() + ": non-finite value");
    t[i] = v;
  }
  return t;
}

Dataset assemble_dataset(const FeatureMatrix& path_features, const std::map<std::string, Tensor>& deep,
                         const std::map<std::string, int>& labels) {
  path_features.validate();
  Dataset ds;
  ds.path_columns = path_features.columns;
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < path_features.size(); ++i) {
    const std::string& slide = path_features.keys[i].slide_id;
    auto [it, inserted] = slot.emplace(slide, order.size());
    if (inserted) {
      order.push_back(slide);
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }
  for (std::size_t s = 0; s < order.size(); ++s) {
    const std::string& slide = order[s];
    auto d = deep.find(slide);
    auto l = labels.find(slide);
    if (d == deep.end()) throw DataError("no deep features for slide " + slide);
    if (l == labels.end()) throw DataError("no label for slide " + slide);
    Bag bag;
    bag.slide_id = slide;
    bag.label = l->second;
    bag.deep = d->second;
    const std::size_t n = members[s].size();
    const std::size_t dp = ds.path_columns.size();
    bag.path = Tensor({n, dp});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = members[s][i];
      bag.patch_ids.push_back(path_features.keys[r].patch_id);
      for (std::size_t j = 0; j < dp; ++j) bag.path.at(i, j) = path_features.rows[r][j];
    }
    bag.validate();
    if (ds.deep_dim == 0) ds.deep_dim = bag.deep.cols();
    if (bag.deep.cols() != ds.deep_dim) throw DataError("inconsistent deep feature width");
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "deep");
  FeatureMatrix path;
  path.columns = ds.path_columns;
  nlohmann::json bags = nlohmann::json::array();
  for (const Bag& bag : ds.bags) {
    bag.validate();
    require_plain_token(bag.slide_id, "slide id");
    for (std::size_t i = 0; i < bag.size(); ++i) {
      const auto row = bag.path.data().subspan(i * bag.path.cols(), bag.path.cols());
      path.append({bag.slide_id, bag.patch_ids[i]}, std::vector<double>(row.begin(), row.end()));
    }
    write_deep_sidecar(bag.deep, dir / "deep" / bag.slide_id);
    bags.push_back({{"slide_id", bag.slide_id},
                    {"label", bag.label},
                    {"patches", bag.size()},
                    {"deep", "deep/" + bag.slide_id}});
  }
  write_feature_matrix(path, dir / "path_features.csv");
  write_json({{"schema_version", kSchemaVersion},
              {"kind", "simil.dataset"},
              {"deep_dim", ds.deep_dim},
              {"path_dim", ds.path_columns.size()},
              {"path_features", "path_features.csv"},
              {"bags", bags}},
             dir / "manifest.json");
}

Dataset load_dataset(const fs::path& dir) {
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  std::map<std::string, Tensor> deep;
  std::map<std::string, int> labels;
  std::vector<std::string> order;
  std::string path_file;
  try {
    if (manifest.at("schema_version").get<int>() != kSchemaVersion ||
        manifest.at("kind") != "simil.dataset") {
      throw FormatError((dir / "manifest.json").string() + ": not a dataset manifest");
    }
    path_file = manifest.at("path_features").get<std::string>();
    for (const auto& b : manifest.at("bags")) {
      const std::string slide = b.at("slide_id").get<std::string>();
      order.push_back(slide);
      labels[slide] = b.at("label").get<int>();
      deep[slide] = read_deep_sidecar(dir / b.at("deep").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset ds = assemble_dataset(read_feature_table(dir / path_file), deep, labels);
  if (ds.bags.size() != order.size()) throw DataError("manifest lists slides without path features");
  // manifest order is authoritative
  std::map<std::string, Bag> by_id;
  for (Bag& b : ds.bags) by_id.emplace(b.slide_id, std::move(b));
  ds.bags.clear();
  for (const auto& s : order) ds.bags.push_back(std::move(by_id.at(s)));
  return ds;
}

// ---------------------------------------------------------------- checkpoints / json

nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  try {
    return Tensor(j.at("shape").get<Tensor::Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("tensor: ") + e.what());
  }
}

nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : c.params) params[name] = tensor_to_json(t);
  return {{"format_version", c.format_version},
          {"kind", "simil.checkpoint"},
          {"config", c.config},
          {"seeds", c.seeds},
          {"params", params}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint c;
  try {
    if (j.at("kind") != "simil.checkpoint") throw FormatError("not a checkpoint");
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kSchemaVersion) throw FormatError("unsupported checkpoint version");
    c.config = j.at("config");
    c.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    for (const auto& [name, t] : j.at("params").items()) c.params[name] = tensor_from_json(t);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void write_checkpoint(const Checkpoint& c, const fs::path& path) { write_json(checkpoint_to_json(c), path); }
Checkpoint read_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json(path)); }

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) { write_text(j.dump(2) + "\n", path); }

}  // namespace simil
