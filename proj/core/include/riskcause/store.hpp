#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "riskcause/model.hpp"
#include "riskcause/scene.hpp"

namespace riskcause {

/// Writes content to a temp file in the target directory and renames it into
/// place, so readers never observe partial artifacts.
void atomic_write_text(const std::string& path, const std::string& content);
void atomic_write_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

/// 8-bit RGB PNG output (used for rendered charts and annotated frames).
void save_image_png(const std::string& path, const Image& image);

// ---------------------------------------------------------------------------
// Datasets: a directory of episode directories plus manifest.json.
// Episode dirs hold frame_{t}.png, tracklets.json and label.json.
// ---------------------------------------------------------------------------

struct DatasetManifest {
  int format_version = 1;
  uint64_t seed = 0;
  std::string generator_config_json;  // opaque generator provenance
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, Episode> episodes;

  const Episode& at(const std::string& id) const;
  std::vector<const Episode*> split(const std::string& name) const;  // "train" | "test"
};

/// Fails when the directory already holds a manifest and force is false.
void save_dataset(const Dataset& dataset, const std::string& dir, bool force = false);

DatasetManifest load_manifest(const std::string& dir);
Episode load_episode(const std::string& dir, const std::string& id);

/// Loads manifest plus every listed episode; validates shapes and split
/// references. Throws IoError naming the first missing episode.
Dataset load_dataset(const std::string& dir);

// ---------------------------------------------------------------------------
// Checkpoints: JSON header (config, metadata, tensor directory) followed by
// a little-endian float32 payload guarded by a CRC.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  uint64_t seed = 0;
  int epochs = 0;
  int best_epoch = -1;
  double best_val_accuracy = 0;
  std::string train_config_json;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Verifies magic, version, CRC and that the stored tensors exactly match the
/// stored config's inventory; error messages name the offending tensor.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace riskcause
