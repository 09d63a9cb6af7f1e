#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairdiff/denoiser.hpp"

namespace fairdiff {

/// On-disk model snapshot.
///
/// Layout: 8-byte magic "FAIRDIFF", u32 format version, u64 header length + JSON header
/// (shape, saved segment names, flags, iteration, metrics, frozen-part hash), u64 value
/// count + little-endian doubles for the saved segments in header order, u64 length +
/// resolved config JSON.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;  // "pretrain" or "finetune"
  DenoiserShape shape;
  bool prefix_enabled = false;
  bool adapter_enabled = false;
  long iteration = 0;
  std::vector<std::string> segments;  // saved segment names; empty means the full model
  std::vector<double> values;
  std::uint64_t frozen_hash = 0;  // content hash of every segment not saved
  std::uint64_t model_hash = 0;   // content hash of the full model at save time
  std::string base_checkpoint;    // finetune: path of the pretrained checkpoint
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();
};

/// Full snapshot of a model.
Checkpoint make_full_checkpoint(const DenoiserModel& model, std::string kind, long iteration);

/// Snapshot of the given segments plus the hash of everything else.
Checkpoint make_partial_checkpoint(const DenoiserModel& model, std::vector<std::string> segments, long iteration);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a model. Partial checkpoints overlay their segments on `base` (which must
/// have matching shape and frozen-part hash).
DenoiserModel restore_model(const Checkpoint& checkpoint, const DenoiserModel* base = nullptr);

}  // namespace fairdiff
