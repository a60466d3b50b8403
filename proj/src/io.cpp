#include "l1box/io.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace l1box {

// ---------------------------------------------------------------- xxh64

namespace {

constexpr std::uint64_t kPrime1 = 0x9E3779B185EBCA87ULL;
constexpr std::uint64_t kPrime2 = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kPrime3 = 0x165667B19E3779F9ULL;
constexpr std::uint64_t kPrime4 = 0x85EBCA77C2B2AE63ULL;
constexpr std::uint64_t kPrime5 = 0x27D4EB2F165667C5ULL;

constexpr std::uint64_t rotl(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

std::uint64_t read_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t read_le32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t round(std::uint64_t acc, std::uint64_t input) {
  acc += input * kPrime2;
  return rotl(acc, 31) * kPrime1;
}

std::uint64_t merge_round(std::uint64_t acc, std::uint64_t val) {
  acc ^= round(0, val);
  return acc * kPrime1 + kPrime4;
}

}  // namespace

std::uint64_t xxh64(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  const unsigned char* const end = p + len;
  std::uint64_t h;
  if (len >= 32) {
    std::uint64_t v1 = seed + kPrime1 + kPrime2, v2 = seed + kPrime2, v3 = seed, v4 = seed - kPrime1;
    for (; p + 32 <= end; p += 32) {
      v1 = round(v1, read_le64(p));
      v2 = round(v2, read_le64(p + 8));
      v3 = round(v3, read_le64(p + 16));
      v4 = round(v4, read_le64(p + 24));
    }
    h = rotl(v1, 1) + rotl(v2, 7) + rotl(v3, 12) + rotl(v4, 18);
    h = merge_round(h, v1);
    h = merge_round(h, v2);
    h = merge_round(h, v3);
    h = merge_round(h, v4);
  } else {
    h = seed + kPrime5;
  }
  h += static_cast<std::uint64_t>(len);
  for (; p + 8 <= end; p += 8) h = rotl(h ^ round(0, read_le64(p)), 27) * kPrime1 + kPrime4;
  if (p + 4 <= end) {
    h = rotl(h ^ (static_cast<std::uint64_t>(read_le32(p)) * kPrime1), 23) * kPrime2 + kPrime3;
    p += 4;
  }
  for (; p < end; ++p) h = rotl(h ^ (*p * kPrime5), 11) * kPrime1;
  h ^= h >> 33;
  h *= kPrime2;
  h ^= h >> 29;
  h *= kPrime3;
  h ^= h >> 32;
  return h;
}

// ---------------------------------------------------------------- tensors

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

void put_le(std::string& buf, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::istream& in, int bytes, const char* what) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), bytes))
    throw IoError(std::string("tensor: truncated ") + what);
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

constexpr std::uint16_t kVersion = 1;

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  if (tensor.element_count() != tensor.data.size())
    throw DimensionError("write_tensor: dims do not match payload length");
  if (tensor.dims.size() > 0xFFFF) throw DimensionError("write_tensor: too many dims");
  std::string header = "BXL1";
  put_le(header, kVersion, 2);
  put_le(header, tensor.dims.size(), 2);
  for (auto d : tensor.dims) put_le(header, d, 8);
  std::string payload;
  payload.reserve(tensor.data.size() * 8);
  for (double v : tensor.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(payload, bits, 8);
  }
  std::string trailer;
  put_le(trailer, xxh64(payload.data(), payload.size()), 8);
  out << header << payload << trailer;
  if (!out) throw IoError("write_tensor: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "BXL1", 4) != 0) throw IoError("tensor: bad magic");
  const auto version = get_le(in, 2, "version");
  if (version != kVersion) throw IoError("tensor: unsupported version " + std::to_string(version));
  Tensor t;
  t.dims.resize(get_le(in, 2, "ndim"));
  for (auto& d : t.dims) d = get_le(in, 8, "dims");
  const std::uint64_t n = t.element_count();
  if (n > (std::uint64_t{1} << 40)) throw IoError("tensor: implausible element count");
  std::string payload(n * 8, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size())))
    throw IoError("tensor: truncated payload");
  const std::uint64_t checksum = get_le(in, 8, "checksum");
  if (checksum != xxh64(payload.data(), payload.size())) throw IoError("tensor: checksum mismatch");
  t.data.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t bits = read_le64(reinterpret_cast<const unsigned char*>(payload.data()) + 8 * i);
    std::memcpy(&t.data[i], &bits, 8);
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

// ---------------------------------------------------------------- datasets

std::filesystem::path labels_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".labels.csv");
  return p;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  if (data.inputs.size() != data.labels.size())
    throw DimensionError("save_dataset: inputs and labels differ in length");
  const auto n = static_cast<std::uint64_t>(data.size());
  const auto d = static_cast<std::uint64_t>(data.dim());
  Tensor t;
  if (data.image_shape) {
    const auto& s = *data.image_shape;
    t.dims = {n, static_cast<std::uint64_t>(s[0]), static_cast<std::uint64_t>(s[1]),
              static_cast<std::uint64_t>(s[2])};
  } else {
    t.dims = {n, d};
  }
  t.data.reserve(n * d);
  for (const auto& x : data.inputs) {
    if (static_cast<std::uint64_t>(x.size()) != d) throw DimensionError("save_dataset: ragged inputs");
    t.data.insert(t.data.end(), x.data(), x.data() + x.size());
  }
  save_tensor(path, t);
  CsvWriter labels(labels_path(path), {"label"});
  for (int y : data.labels) labels.row({std::to_string(y)});
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  const Tensor t = load_tensor(path);
  if (t.dims.size() != 2 && t.dims.size() != 4) throw IoError("dataset: expected 2 or 4 dims");
  LabeledDataset data;
  const std::uint64_t n = t.dims[0];
  const std::uint64_t d = n ? t.element_count() / n : 0;
  if (t.dims.size() == 4) {
    if (t.dims[1] != t.dims[2]) throw IoError("dataset: images must be square");
    data.image_shape = std::array<Eigen::Index, 3>{static_cast<Eigen::Index>(t.dims[1]),
                                                   static_cast<Eigen::Index>(t.dims[2]),
                                                   static_cast<Eigen::Index>(t.dims[3])};
  }
  for (std::uint64_t i = 0; i < n; ++i)
    data.inputs.emplace_back(Eigen::Map<const Vector>(t.data.data() + i * d, static_cast<Eigen::Index>(d)));
  const CsvTable labels = read_csv(labels_path(path));
  if (labels.header != std::vector<std::string>{"label"}) throw IoError("dataset: bad label header");
  if (labels.rows.size() != n) throw IoError("dataset: label count does not match inputs");
  for (const auto& row : labels.rows) {
    if (row.size() != 1) throw IoError("dataset: bad label row");
    try {
      data.labels.push_back(static_cast<int>(parse_int(row[0], "label")));
    } catch (const ConfigError& e) {
      throw IoError(e.what());
    }
  }
  return data;
}

// ---------------------------------------------------------------- models

void save_model(const std::filesystem::path& path, const DifferentiableClassifier& model) {
  nlohmann::json header;
  header["format"] = "l1box-model";
  header["kind"] = model.kind();
  header["layer_sizes"] = model.layer_sizes();
  const Vector params = model.parameters();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  write_tensor(out, Tensor{{static_cast<std::uint64_t>(params.size())},
                           std::vector<double>(params.data(), params.data() + params.size())});
}

std::unique_ptr<DifferentiableClassifier> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("model: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model: bad header: ") + e.what());
  }
  if (header.value("format", "") != "l1box-model") throw IoError("model: unknown format");
  std::vector<Eigen::Index> sizes;
  std::string kind;
  try {
    sizes = header.at("layer_sizes").get<std::vector<Eigen::Index>>();
    kind = header.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model: bad header: ") + e.what());
  }
  const Tensor t = read_tensor(in);
  const Vector params = Eigen::Map<const Vector>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
  try {
    if (kind == "linear") {
      if (sizes.size() != 2) throw IoError("model: linear model needs two layer sizes");
      const Eigen::Index d = sizes[0], k = sizes[1];
      if (params.size() != k * d + k) throw IoError("model: parameter count mismatch");
      Matrix w = params.head(k * d).reshaped(k, d);
      return std::make_unique<LinearSoftmaxModel>(std::move(w), params.tail(k));
    }
    if (kind == "mlp") return std::make_unique<MlpModel>(sizes, params);
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("model: ") + e.what());
  }
  throw IoError("model: unknown kind " + kind);
}

// ---------------------------------------------------------------- csv

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

CsvWriter::CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
    : out_(std::make_unique<std::ofstream>(path, std::ios::binary)), header_(std::move(header)) {
  if (!*out_) throw IoError("cannot open " + path.string() + " for writing");
  row(header_);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != header_.size()) throw DimensionError("CsvWriter: wrong number of fields");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n\"") != std::string::npos)
      throw ParameterError("CsvWriter: fields may not contain commas, quotes or newlines");
    *out_ << (i ? "," : "") << fields[i];
  }
  *out_ << '\n';
  if (!*out_) throw IoError("CsvWriter: write failed");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
  };
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("csv: empty file " + path.string());
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    table.rows.push_back(split(line));
  }
  return table;
}

// ---------------------------------------------------------------- config

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

const std::string* ConfigFile::find(const std::string& section, const std::string& key) const {
  const auto s = sections.find(section);
  if (s == sections.end()) return nullptr;
  const auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
  sections[section][key] = value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile parse_config(const std::string& text) {
  ConfigFile config;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      config.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (config.has(section, key)) throw ConfigError(where + ": duplicate key " + key);
    config.set(section, key, trim(line.substr(eq + 1)));
  }
  return config;
}

ConfigFile load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ConfigFile& config) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, keys] : config.sections) {
    if (!first) out << '\n';
    first = false;
    if (!section.empty()) out << '[' << section << "]\n";
    for (const auto& [key, value] : keys) out << key << " = " << value << '\n';
  }
  return out.str();
}

void require_known_keys(const ConfigFile& config,
                        const std::map<std::string, std::set<std::string>>& allowed) {
  for (const auto& [section, keys] : config.sections) {
    const auto s = allowed.find(section);
    if (s == allowed.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys)
      if (!s->second.count(key))
        throw ConfigError("unknown config key " + key + (section.empty() ? "" : " in [" + section + "]"));
  }
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError(what + ": not a finite number: '" + text + "'");
  return v;
}

long long parse_int(const std::string& text, const std::string& what) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError(what + ": not an integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(what + ": not a boolean: '" + text + "'");
}

}  // namespace l1box
