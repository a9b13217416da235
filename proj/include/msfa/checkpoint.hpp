#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/model.hpp"

namespace msfa {

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'F', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and reals little-endian:
///   magic[8] | u32 version | u64 meta length | meta JSON |
///   u64 entry count | entries
/// where an entry is u32 name length | name | i32 n,c,h,w | doubles.
/// Parameters and running statistics are stored in visiting order.
namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& where) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint " + where);
  return v;
}

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

inline std::vector<NamedTensor> model_state(MsfaModel& model) {
  std::vector<NamedTensor> out;
  ParamVisitor v{[&](const std::string& n, Var& p, ParamKind) { out.push_back({n, &p.mutable_value()}); },
                 [&](const std::string& n, Tensor& t) { out.push_back({n, &t}); }};
  model.visit(v);
  return out;
}

}  // namespace detail

/// Writes the model weights with `meta` (typically the config snapshot).
inline void save_checkpoint(const std::filesystem::path& path, MsfaModel& model, const nlohmann::json& meta) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put(os, kCheckpointVersion);
    nlohmann::json full = meta;
    full["model"] = model.config();
    const std::string text = full.dump();
    detail::put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto state = detail::model_state(model);
    detail::put<std::uint64_t>(os, state.size());
    for (const auto& [name, t] : state) {
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape s = t->shape();
      for (int d : {s.n, s.c, s.h, s.w}) detail::put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t->storage().data()), static_cast<std::streamsize>(t->size() * sizeof(Real)));
    }
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline nlohmann::json read_header(std::istream& is, const std::string& where) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw VersionError(where + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, where);
  if (version != kCheckpointVersion)
    throw VersionError(where + " has format version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const auto len = get<std::uint64_t>(is, where);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint " + where);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(where + " has an unreadable header: " + e.what());
  }
}

inline std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return is;
}

}  // namespace detail

/// Metadata stored with a checkpoint, including its "model" config.
inline nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  auto is = detail::open_checkpoint(path);
  return detail::read_header(is, path.string());
}

/// Loads weights into `model`. Any difference in entry names, order or
/// shapes raises VersionError.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path, MsfaModel& model) {
  const std::string where = path.string();
  auto is = detail::open_checkpoint(path);
  nlohmann::json meta = detail::read_header(is, where);
  auto state = detail::model_state(model);
  const auto count = detail::get<std::uint64_t>(is, where);
  if (count != state.size())
    throw VersionError(where + " holds " + std::to_string(count) + " tensors but the model has " +
                       std::to_string(state.size()));
  for (auto& [name, t] : state) {
    const auto len = detail::get<std::uint32_t>(is, where);
    std::string stored(len, '\0');
    if (!is.read(stored.data(), len)) throw IoError("truncated checkpoint " + where);
    if (stored != name) throw VersionError(where + ": expected tensor '" + name + "', found '" + stored + "'");
    Shape s{};
    s.n = detail::get<std::int32_t>(is, where);
    s.c = detail::get<std::int32_t>(is, where);
    s.h = detail::get<std::int32_t>(is, where);
    s.w = detail::get<std::int32_t>(is, where);
    if (s != t->shape())
      throw VersionError(where + ": tensor '" + name + "' has shape " + to_string(s) + ", model expects " +
                         to_string(t->shape()));
    if (!is.read(reinterpret_cast<char*>(t->storage().data()), static_cast<std::streamsize>(t->size() * sizeof(Real))))
      throw IoError("truncated checkpoint " + where);
  }
  return meta;
}

/// Builds a model from the checkpoint's stored config and loads its weights.
inline MsfaModel model_from_checkpoint(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr) {
  const nlohmann::json meta = read_checkpoint_meta(path);
  ModelConfig cfg;
  try {
    cfg = meta.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(path.string() + " lacks a usable model config: " + e.what());
  }
  MsfaModel model(cfg);
  load_checkpoint(path, model);
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace msfa
