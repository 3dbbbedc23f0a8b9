#pragma once

#include <gnerf/core/types.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gnerf::nn {

/// In-memory image of a checkpoint file: string metadata plus named float32 tensors.
///
/// On disk (little-endian):
///   "GNRFCKPT"  u32 version
///   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
///   u32 n_tensor { u32 len, name bytes, u32 rows, u32 cols, f32[rows*cols] row-major } * n_tensor
/// Entries are written in key order so identical contents give identical bytes.
struct TensorArchive {
  static constexpr char kMagic[8] = {'G', 'N', 'R', 'F', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  struct Tensor {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> row_major;
  };

  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  template <class Derived>
  void put(const std::string& name, const Eigen::MatrixBase<Derived>& m) {
    Tensor t;
    t.rows = static_cast<std::uint32_t>(m.rows());
    t.cols = static_cast<std::uint32_t>(m.cols());
    t.row_major.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        t.row_major[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    tensors[name] = std::move(t);
  }

  /// Copies a stored tensor into `out`, which must already have the stored shape.
  template <class Derived>
  void get(const std::string& name, Eigen::MatrixBase<Derived>& out) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    const Tensor& t = it->second;
    if (t.rows != out.rows() || t.cols != out.cols())
      throw IoError("checkpoint: tensor '" + name + "' has shape " + std::to_string(t.rows) + "x" +
                    std::to_string(t.cols) + ", expected " + std::to_string(out.rows()) + "x" +
                    std::to_string(out.cols()));
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index c = 0; c < out.cols(); ++c)
        out(r, c) = static_cast<typename Derived::Scalar>(t.row_major[static_cast<std::size_t>(r * out.cols() + c)]);
  }

  template <class S>
  Mat<S> get_matrix(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    Mat<S> m(it->second.rows, it->second.cols);
    get(name, m);
    return m;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint: missing metadata '" + key + "'");
    return it->second;
  }

  std::string serialize() const {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    std::string out(kMagic, sizeof kMagic);
    auto u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    auto str = [&](const std::string& s) {
      u32(static_cast<std::uint32_t>(s.size()));
      out += s;
    };
    u32(kVersion);
    u32(static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      str(k);
      str(v);
    }
    u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      str(name);
      u32(t.rows);
      u32(t.cols);
      out.append(reinterpret_cast<const char*>(t.row_major.data()), t.row_major.size() * sizeof(float));
    }
    return out;
  }

  static TensorArchive deserialize(const std::string& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) throw IoError("checkpoint: truncated file");
    };
    auto u32 = [&]() {
      need(4);
      std::uint32_t v;
      std::memcpy(&v, bytes.data() + pos, 4);
      pos += 4;
      return v;
    };
    auto str = [&]() {
      const std::uint32_t n = u32();
      need(n);
      std::string s = bytes.substr(pos, n);
      pos += n;
      return s;
    };
    need(sizeof kMagic);
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw IoError("checkpoint: bad magic");
    pos = sizeof kMagic;
    const std::uint32_t version = u32();
    if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    TensorArchive a;
    const std::uint32_t n_meta = u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      std::string k = str();
      a.meta[k] = str();
    }
    const std::uint32_t n_tensor = u32();
    for (std::uint32_t i = 0; i < n_tensor; ++i) {
      std::string name = str();
      Tensor t;
      t.rows = u32();
      t.cols = u32();
      const std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
      need(n * sizeof(float));
      t.row_major.resize(n);
      std::memcpy(t.row_major.data(), bytes.data() + pos, n * sizeof(float));
      pos += n * sizeof(float);
      a.tensors[name] = std::move(t);
    }
    if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
    return a;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
      return deserialize(ss.str());
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + " (" + path + ")");
    }
  }
};

/// Stores every tensor of a visitable parameter record under `prefix`.
template <class Params>
void archive_params(TensorArchive& a, const std::string& prefix, Params& p) {
  p.visit([&](const std::string& name, auto& t) { a.put(prefix + name, t); });
}

/// Restores a visitable record whose shapes are already set up.
template <class Params>
void restore_params(const TensorArchive& a, const std::string& prefix, Params& p) {
  p.visit([&](const std::string& name, auto& t) { a.get(prefix + name, t); });
}

}  // namespace gnerf::nn
