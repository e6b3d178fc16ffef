#include "uemkit/params.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "uemkit/spectral_data.hpp"

namespace uem {

void ParameterSet::set(const std::string& name, Tensor value) {
  for (auto& [n, t] : items_) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  items_.emplace_back(name, std::move(value));
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& kv) { return kv.first == name; });
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

Tensor& ParameterSet::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [n, t] : other.items_) set(n, t);
}

BoundParams::BoundParams(ad::Tape& tape, const ParameterSet& params, const Predicate& trainable)
    : tape_(&tape) {
  vars_.reserve(params.size());
  for (const auto& [name, value] : params.items()) {
    vars_.emplace_back(name, tape.leaf(value, trainable && trainable(name)));
  }
}

BoundParams::BoundParams(ad::Tape& tape, std::vector<std::pair<std::string, ad::Var>> vars)
    : tape_(&tape), vars_(std::move(vars)) {
  for (const auto& [name, v] : vars_) {
    if (v.tape() != &tape) throw std::invalid_argument("BoundParams: '" + name + "' lives on another tape");
  }
}

ad::Var BoundParams::operator[](std::string_view name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no bound parameter named '" + std::string(name) + "'");
}

bool BoundParams::contains(std::string_view name) const {
  return std::any_of(vars_.begin(), vars_.end(), [&](const auto& kv) { return kv.first == name; });
}

std::uint64_t stream_seed(std::uint64_t base, std::string_view stream) {
  // FNV-1a of the stream name, mixed with the base seed through seed_seq.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  manifest["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params.items()) {
    manifest["params"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.items()) {
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::pair<ParameterSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    throw TruncatedFile(path.string() + ": missing manifest length");
  }
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw TruncatedFile(path.string() + ": truncated manifest");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
  ParameterSet params;
  for (const auto& entry : manifest.at("params")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw TruncatedFile(path.string() + ": truncated payload for " + entry.at("name").get<std::string>());
    }
    params.set(entry.at("name").get<std::string>(), std::move(t));
  }
  return {std::move(params), manifest.value("meta", nlohmann::json::object())};
}

}  // namespace uem
