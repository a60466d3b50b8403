#ifndef L1BOX_IO_HPP
#define L1BOX_IO_HPP

#include "l1box/models.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1box {

/// Unreadable or malformed files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration text or values.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// 64-bit xxHash of a byte range.
std::uint64_t xxh64(const void* data, std::size_t len, std::uint64_t seed = 0);

/// Dense float64 array with explicit dims.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

/// Layout: "BXL1", u16 version (1), u16 ndim, ndim u64 dims, float64 payload,
/// u64 xxh64 of the payload bytes. Everything little-endian.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

/// Path of the label CSV stored next to a dataset tensor.
std::filesystem::path labels_path(const std::filesystem::path& dataset_path);

/// Inputs as an (n, d) tensor, or (n, h, h, c) when the image shape is set,
/// plus a one-column "label" CSV.
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// One JSON header line {"format", "kind", "layer_sizes"} followed by the
/// flat parameter vector as a 1-d tensor.
void save_model(const std::filesystem::path& path, const DifferentiableClassifier& model);
std::unique_ptr<DifferentiableClassifier> load_model(const std::filesystem::path& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Comma-separated rows under a fixed header.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  const std::vector<std::string>& header() const { return header_; }

 private:
  std::unique_ptr<std::ostream> out_;
  std::vector<std::string> header_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);

/// key = value lines grouped under [section] headers. Keys before the first
/// header belong to section "". '#' starts a comment.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  const std::string* find(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
};

ConfigFile parse_config(const std::string& text);
ConfigFile load_config(const std::filesystem::path& path);
std::string to_text(const ConfigFile& config);

/// Throws ConfigError naming the first section or key outside `allowed`.
void require_known_keys(const ConfigFile& config,
                        const std::map<std::string, std::set<std::string>>& allowed);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);

}  // namespace l1box

#endif  // L1BOX_IO_HPP
