#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctm/tensor.hpp"

namespace ctm {

// Named-array container used for every checkpoint (backbones, prompt
// matrices, classifiers). Layout, all integers little-endian:
//
//   "CTMARRAY"  u32 version (=1)
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes } * n_meta
//   u32 n_arrays { u32 len, name bytes, u32 ndim, u64 dim * ndim,
//                  f64 value * prod(dims) } * n_arrays
//
// Metadata entries are written in key order and arrays in insertion order,
// so equal contents give byte-identical files.
struct NamedArrays {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void add(std::string name, const Tensor& t) {
    arrays.emplace_back(std::move(name), t);
  }
  bool has(const std::string& name) const;
  // Throws DataError when missing.
  const Tensor& get(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

void save_arrays(const std::filesystem::path& path, const NamedArrays& arrays);
NamedArrays load_arrays(const std::filesystem::path& path);

}  // namespace ctm
