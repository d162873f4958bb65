#pragma once

// Named-tensor archive: a directory holding a text manifest and one raw
// little-endian float32 blob.
//
//   manifest.txt:
//     refpaint-archive 1
//     meta <key> <value to end of line>
//     tensor <name> f32 <n> <c> <h> <w> <byte offset> <byte count>
//
// Tensor records are sorted by name. Saving writes a sibling temporary
// directory and renames it into place, so readers never see a partial archive.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "refpaint/layers.hpp"
#include "refpaint/tensor.hpp"

namespace refpaint {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArchiveTensor {
  Shape shape;
  std::vector<float> data;
};

struct Archive {
  std::map<std::string, std::string> meta;
  std::map<std::string, ArchiveTensor> tensors;

  void put(const std::string& name, Shape shape, std::vector<float> data);
  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  const ArchiveTensor& get(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

void save_archive(const std::filesystem::path& dir, const Archive& archive);
Archive load_archive(const std::filesystem::path& dir);

/// Stores every parameter under `prefix + name`.
template <typename T>
void put_parameters(Archive& archive, const ParameterSet<T>& params, const std::string& prefix = "");

/// Copies archived values into existing parameters of matching shape. Every
/// parameter must be present unless `allow_missing`.
template <typename T>
void load_parameters(const Archive& archive, ParameterSet<T>& params, const std::string& prefix = "",
                     bool allow_missing = false);

}  // namespace refpaint
