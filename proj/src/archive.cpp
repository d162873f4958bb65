#include "refpaint/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace refpaint {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "refpaint-archive 1";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

void check_name(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw ArchiveError(std::string("archive: invalid ") + what + " '" + s + "'");
  }
}

}  // namespace

void Archive::put(const std::string& name, Shape shape, std::vector<float> data) {
  check_name(name, "tensor name");
  if (data.size() != shape.numel()) {
    throw ArchiveError("archive: tensor '" + name + "' data does not match shape " + shape.str());
  }
  tensors[name] = {shape, std::move(data)};
}

template <typename T>
void Archive::put(const std::string& name, const Tensor<T>& t) {
  put(name, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
}

const ArchiveTensor& Archive::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ArchiveError("archive: missing tensor '" + name + "'");
  return it->second;
}

const std::string& Archive::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw ArchiveError("archive: missing meta key '" + key + "'");
  return it->second;
}

void save_archive(const fs::path& dir, const Archive& archive) {
  const fs::path target = fs::absolute(dir);
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  std::ostringstream manifest;
  manifest << kMagic << '\n';
  for (const auto& [key, value] : archive.meta) {
    check_name(key, "meta key");
    if (value.find('\n') != std::string::npos) {
      throw ArchiveError("archive: meta value for '" + key + "' contains a newline");
    }
    manifest << "meta " << key << ' ' << value << '\n';
  }
  {
    std::ofstream blob(tmp / "blob.bin", std::ios::binary);
    std::uint64_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
      const std::uint64_t bytes = t.data.size() * sizeof(float);
      manifest << "tensor " << name << " f32 " << t.shape.n << ' ' << t.shape.c << ' ' << t.shape.h
               << ' ' << t.shape.w << ' ' << offset << ' ' << bytes << '\n';
      for (float v : t.data) {
        const std::uint32_t le = to_little(std::bit_cast<std::uint32_t>(v));
        blob.write(reinterpret_cast<const char*>(&le), sizeof le);
      }
      offset += bytes;
    }
    if (!blob) throw ArchiveError("archive: failed writing " + (tmp / "blob.bin").string());
  }
  {
    std::ofstream out(tmp / "manifest.txt");
    out << manifest.str();
    if (!out) throw ArchiveError("archive: failed writing " + (tmp / "manifest.txt").string());
  }

  const fs::path old = target.string() + ".old";
  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old);
}

Archive load_archive(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw ArchiveError("archive: cannot open " + (dir / "manifest.txt").string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw ArchiveError("archive: " + dir.string() + " is not a refpaint archive");
  }
  std::ifstream blob(dir / "blob.bin", std::ios::binary);
  if (!blob) throw ArchiveError("archive: cannot open " + (dir / "blob.bin").string());
  blob.seekg(0, std::ios::end);
  const auto blob_size = static_cast<std::uint64_t>(blob.tellg());

  Archive a;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      a.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name, dtype;
      Shape s;
      std::uint64_t offset = 0, bytes = 0;
      if (!(ls >> name >> dtype >> s.n >> s.c >> s.h >> s.w >> offset >> bytes) || dtype != "f32" ||
          s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || bytes != s.numel() * sizeof(float) ||
          offset + bytes > blob_size) {
        throw ArchiveError("archive: malformed tensor record: " + line);
      }
      std::vector<float> data(s.numel());
      blob.seekg(static_cast<std::streamoff>(offset));
      for (float& v : data) {
        std::uint32_t le = 0;
        blob.read(reinterpret_cast<char*>(&le), sizeof le);
        v = std::bit_cast<float>(to_little(le));
      }
      if (!blob) throw ArchiveError("archive: short read for tensor '" + name + "'");
      a.tensors[name] = {s, std::move(data)};
    } else {
      throw ArchiveError("archive: unknown record: " + line);
    }
  }
  return a;
}

template <typename T>
void put_parameters(Archive& archive, const ParameterSet<T>& params, const std::string& prefix) {
  for (const auto& [name, t] : params.all()) archive.put(prefix + name, t);
}

template <typename T>
void load_parameters(const Archive& archive, ParameterSet<T>& params, const std::string& prefix,
                     bool allow_missing) {
  for (const auto& [name, param] : params.all()) {
    auto it = archive.tensors.find(prefix + name);
    if (it == archive.tensors.end()) {
      if (allow_missing) continue;
      throw ArchiveError("archive: missing parameter '" + prefix + name + "'");
    }
    if (!(it->second.shape == param.shape())) {
      throw ArchiveError("archive: parameter '" + prefix + name + "' has shape " +
                         it->second.shape.str() + ", expected " + param.shape().str());
    }
    Tensor<T> p = param;
    std::copy(it->second.data.begin(), it->second.data.end(), p.data().begin());
  }
}

template void Archive::put<float>(const std::string&, const Tensor<float>&);
template void Archive::put<double>(const std::string&, const Tensor<double>&);
template void put_parameters<float>(Archive&, const ParameterSet<float>&, const std::string&);
template void put_parameters<double>(Archive&, const ParameterSet<double>&, const std::string&);
template void load_parameters<float>(const Archive&, ParameterSet<float>&, const std::string&, bool);
template void load_parameters<double>(const Archive&, ParameterSet<double>&, const std::string&, bool);

}  // namespace refpaint
