#include "fairdiff/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "fairdiff/errors.hpp"

namespace fairdiff {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'I', 'R', 'D', 'I', 'F', 'F'};

nlohmann::json shape_to_json(const DenoiserShape& s) {
  return {{"data_dim", s.data_dim},     {"num_contexts", s.num_contexts}, {"token_dim", s.token_dim},
          {"prefix_len", s.prefix_len}, {"embed_dim", s.embed_dim},       {"time_dim", s.time_dim},
          {"hidden", s.hidden},         {"max_timestep", s.max_timestep}, {"adapter_rank", s.adapter_rank}};
}

DenoiserShape shape_from_json(const nlohmann::json& j) {
  DenoiserShape s;
  s.data_dim = j.at("data_dim");
  s.num_contexts = j.at("num_contexts");
  s.token_dim = j.at("token_dim");
  s.prefix_len = j.at("prefix_len");
  s.embed_dim = j.at("embed_dim");
  s.time_dim = j.at("time_dim");
  s.hidden = j.at("hidden");
  s.max_timestep = j.at("max_timestep");
  s.adapter_rank = j.at("adapter_rank");
  return s;
}

std::vector<std::string> complement(const DenoiserModel& model, const std::vector<std::string>& saved) {
  std::vector<std::string> rest;
  for (const auto& seg : model.layout().segments()) {
    if (std::find(saved.begin(), saved.end(), seg.name) == saved.end()) rest.push_back(seg.name);
  }
  return rest;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("checkpoint is truncated");
  return value;
}

std::string take_string(std::istream& in) {
  const auto len = take<std::uint64_t>(in);
  if (len > (1ULL << 30)) throw IoError("checkpoint string length is implausible");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint is truncated");
  return s;
}

}  // namespace

Checkpoint make_full_checkpoint(const DenoiserModel& model, std::string kind, long iteration) {
  Checkpoint c;
  c.kind = std::move(kind);
  c.shape = model.shape();
  c.prefix_enabled = model.prefix_enabled();
  c.adapter_enabled = model.adapter_enabled();
  c.iteration = iteration;
  c.values.assign(model.params().begin(), model.params().end());
  c.model_hash = model.content_hash();
  return c;
}

Checkpoint make_partial_checkpoint(const DenoiserModel& model, std::vector<std::string> segments, long iteration) {
  Checkpoint c;
  c.kind = "finetune";
  c.shape = model.shape();
  c.prefix_enabled = model.prefix_enabled();
  c.adapter_enabled = model.adapter_enabled();
  c.iteration = iteration;
  for (const auto& name : segments) {
    const auto seg = model.segment(name);
    c.values.insert(c.values.end(), seg.begin(), seg.end());
  }
  c.frozen_hash = model.content_hash(complement(model, segments));
  c.model_hash = model.content_hash();
  c.segments = std::move(segments);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json header = {{"kind", c.kind},
                           {"shape", shape_to_json(c.shape)},
                           {"prefix_enabled", c.prefix_enabled},
                           {"adapter_enabled", c.adapter_enabled},
                           {"iteration", c.iteration},
                           {"segments", c.segments},
                           {"frozen_hash", c.frozen_hash},
                           {"model_hash", c.model_hash},
                           {"base_checkpoint", c.base_checkpoint},
                           {"metrics", c.metrics}};
  const std::string header_text = header.dump();
  const std::string config_text = c.config.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint64_t>(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    put<std::uint64_t>(out, c.values.size());
    out.write(reinterpret_cast<const char*>(c.values.data()), static_cast<std::streamsize>(c.values.size() * sizeof(double)));
    put<std::uint64_t>(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError(path.string() + " is not a checkpoint");
  const auto version = take<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(take_string(in));
    c.kind = header.at("kind");
    c.shape = shape_from_json(header.at("shape"));
    c.prefix_enabled = header.at("prefix_enabled");
    c.adapter_enabled = header.at("adapter_enabled");
    c.iteration = header.at("iteration");
    c.segments = header.at("segments").get<std::vector<std::string>>();
    c.frozen_hash = header.at("frozen_hash");
    c.model_hash = header.at("model_hash");
    c.base_checkpoint = header.at("base_checkpoint");
    c.metrics = header.at("metrics");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto count = take<std::uint64_t>(in);
  if (count > (1ULL << 28)) throw IoError("checkpoint parameter count is implausible");
  c.values.resize(count);
  in.read(reinterpret_cast<char*>(c.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw IoError("checkpoint is truncated");
  try {
    c.config = nlohmann::json::parse(take_string(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint config in " + path.string() + ": " + e.what());
  }
  return c;
}

DenoiserModel restore_model(const Checkpoint& c, const DenoiserModel* base) {
  if (c.segments.empty()) {
    auto model = DenoiserModel::from_parts(c.shape, c.values, c.prefix_enabled, c.adapter_enabled);
    if (model.content_hash() != c.model_hash) throw IoError("checkpoint content hash mismatch");
    return model;
  }
  if (!base) throw ArgumentError("a partial checkpoint needs its base model");
  DenoiserModel model = *base;
  if (model.shape() != c.shape) {
    if (c.shape.adapter_rank > 0 && model.shape().adapter_rank == 0) {
      model = model.with_adapter(c.shape.adapter_rank, 0);
    }
    if (model.shape() != c.shape) throw ShapeError("partial checkpoint shape differs from the base model");
  }
  std::size_t offset = 0;
  for (const auto& name : c.segments) {
    auto seg = model.segment(name);
    if (offset + seg.size() > c.values.size()) throw IoError("partial checkpoint is missing values");
    std::copy_n(c.values.begin() + static_cast<std::ptrdiff_t>(offset), seg.size(), seg.begin());
    offset += seg.size();
  }
  if (offset != c.values.size()) throw IoError("partial checkpoint has extra values");
  if (model.content_hash(complement(model, c.segments)) != c.frozen_hash) {
    throw IoError("frozen parameters differ from the ones this checkpoint was trained against");
  }
  model.set_prefix_enabled(c.prefix_enabled);
  model.set_adapter_enabled(c.adapter_enabled);
  if (model.content_hash() != c.model_hash) throw IoError("checkpoint content hash mismatch");
  return model;
}

}  // namespace fairdiff
