#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "uemkit/autodiff.hpp"
#include "uemkit/tensor.hpp"

namespace uem {

/// Named tensors in insertion order. Names are dotted, e.g.
/// "encoder.psf" or "decoder.conv0.weight".
class ParameterSet {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  std::size_t size() const { return items_.size(); }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

  /// Appends every entry of `other`, replacing same-named entries.
  void merge(const ParameterSet& other);

  bool operator==(const ParameterSet& other) const = default;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// A ParameterSet bound as leaves on one tape.
class BoundParams {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  /// Every parameter becomes a leaf; those accepted by `trainable` require
  /// gradients.
  BoundParams(ad::Tape& tape, const ParameterSet& params, const Predicate& trainable);
  /// Wraps Vars already on `tape`.
  BoundParams(ad::Tape& tape, std::vector<std::pair<std::string, ad::Var>> vars);

  ad::Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  ad::Tape& tape() const { return *tape_; }
  const std::vector<std::pair<std::string, ad::Var>>& vars() const { return vars_; }

 private:
  ad::Tape* tape_;
  std::vector<std::pair<std::string, ad::Var>> vars_;
};

/// Independent RNG seed for a named parameter group.
std::uint64_t stream_seed(std::uint64_t base, std::string_view stream);

/// Checkpoint file: u64 little-endian manifest length, UTF-8 JSON manifest
/// ({"meta": ..., "params": [{"name", "shape"}]}), then the float64 payloads
/// concatenated in manifest order.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& meta);
std::pair<ParameterSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

}  // namespace uem
