#include "riskcause/store.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nlohmann/json.hpp"
#include "png_io.hpp"
#include "riskcause/errors.hpp"

namespace riskcause {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; add byte swapping for this platform");

namespace {

void write_file_atomic(const std::string& path, const char* data, size_t size) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("rename failed for " + target.string() + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

}  // namespace

void atomic_write_text(const std::string& path, const std::string& content) {
  write_file_atomic(path, content.data(), content.size());
}

void atomic_write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  write_file_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void save_image_png(const std::string& path, const Image& image) { write_png(path, image); }

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

const Episode& Dataset::at(const std::string& id) const {
  auto it = episodes.find(id);
  if (it == episodes.end()) throw DataError("dataset: unknown episode id " + id);
  return it->second;
}

std::vector<const Episode*> Dataset::split(const std::string& name) const {
  const std::vector<std::string>* ids = nullptr;
  if (name == "train") ids = &manifest.train_ids;
  else if (name == "test") ids = &manifest.test_ids;
  else throw DataError("dataset: unknown split " + name);
  std::vector<const Episode*> out;
  out.reserve(ids->size());
  for (const auto& id : *ids) out.push_back(&at(id));
  return out;
}

namespace {

json tracklets_to_json(const Episode& ep) {
  json j;
  j["height"] = ep.height();
  j["width"] = ep.width();
  j["frames"] = static_cast<int>(ep.frames.size());
  j["tracklets"] = json::array();
  for (const auto& t : ep.tracklets) {
    json boxes = json::object();
    for (const auto& [frame, box] : t.boxes)
      boxes[std::to_string(frame)] = {box.x1, box.y1, box.x2, box.y2};
    j["tracklets"].push_back(
        {{"id", t.id}, {"class", to_string(t.cls)}, {"boxes", std::move(boxes)}});
  }
  return j;
}

json label_to_json(const Episode& ep) {
  json j;
  j["label"] = to_string(ep.label);
  if (ep.cause_id.has_value()) j["cause_id"] = *ep.cause_id;
  else j["cause_id"] = nullptr;
  j["scenario"] = to_string(ep.scenario);
  return j;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir, bool force) {
  const fs::path root(dir);
  if (fs::exists(root / "manifest.json") && !force)
    throw IoError("dataset already exists at " + dir + " (use force to overwrite)");
  fs::create_directories(root);

  for (const auto& [id, ep] : dataset.episodes) {
    const fs::path edir = root / id;
    fs::create_directories(edir);
    for (size_t t = 0; t < ep.frames.size(); ++t)
      write_png((edir / ("frame_" + std::to_string(t) + ".png")).string(), ep.frames[t]);
    atomic_write_text((edir / "tracklets.json").string(), tracklets_to_json(ep).dump(2) + "\n");
    atomic_write_text((edir / "label.json").string(), label_to_json(ep).dump(2) + "\n");
  }

  json m;
  m["format_version"] = dataset.manifest.format_version;
  m["seed"] = dataset.manifest.seed;
  if (dataset.manifest.generator_config_json.empty()) {
    m["generator"] = nullptr;
  } else {
    try {
      m["generator"] = json::parse(dataset.manifest.generator_config_json);
    } catch (const json::exception&) {
      m["generator"] = dataset.manifest.generator_config_json;
    }
  }
  m["splits"] = {{"train", dataset.manifest.train_ids}, {"test", dataset.manifest.test_ids}};
  atomic_write_text((root / "manifest.json").string(), m.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("no manifest.json in " + dir);
  json m = parse_json_file(mpath.string());
  DatasetManifest out;
  try {
    out.format_version = m.at("format_version").get<int>();
    if (out.format_version != 1)
      throw IoError("unsupported dataset format version " +
                    std::to_string(out.format_version) + " in " + dir);
    out.seed = m.at("seed").get<uint64_t>();
    if (m.contains("generator") && !m.at("generator").is_null())
      out.generator_config_json = m.at("generator").dump(2);
    out.train_ids = m.at("splits").at("train").get<std::vector<std::string>>();
    out.test_ids = m.at("splits").at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError("manifest field error in " + dir + ": " + e.what());
  }
  return out;
}

Episode load_episode(const std::string& dir, const std::string& id) {
  const fs::path edir = fs::path(dir) / id;
  if (!fs::exists(edir / "tracklets.json"))
    throw IoError("dataset episode missing: " + id);

  Episode ep;
  ep.id = id;

  json tj = parse_json_file((edir / "tracklets.json").string());
  json lj = parse_json_file((edir / "label.json").string());
  int frames = 0;
  try {
    frames = tj.at("frames").get<int>();
    for (const auto& t : tj.at("tracklets")) {
      Tracklet tr;
      tr.id = t.at("id").get<int>();
      tr.cls = object_class_from_string(t.at("class").get<std::string>());
      for (const auto& [key, arr] : t.at("boxes").items()) {
        BBox b{arr.at(0).get<double>(), arr.at(1).get<double>(), arr.at(2).get<double>(),
               arr.at(3).get<double>()};
        tr.boxes[std::stoi(key)] = b;
      }
      ep.tracklets.push_back(std::move(tr));
    }
    ep.label = behavior_from_string(lj.at("label").get<std::string>());
    if (!lj.at("cause_id").is_null()) ep.cause_id = lj.at("cause_id").get<int>();
    ep.scenario = scenario_from_string(lj.at("scenario").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError("episode " + id + ": metadata error: " + e.what());
  }

  for (int t = 0; t < frames; ++t) {
    const fs::path fpath = edir / ("frame_" + std::to_string(t) + ".png");
    if (!fs::exists(fpath)) throw IoError("episode " + id + ": missing frame " + std::to_string(t));
    ep.frames.push_back(read_png(fpath.string()));
  }

  const int want_h = tj.at("height").get<int>();
  const int want_w = tj.at("width").get<int>();
  if (frames > 0 && (ep.height() != want_h || ep.width() != want_w))
    throw IoError("episode " + id + ": frame size disagrees with tracklets.json");
  const auto violations = validate_episode(ep, frames);
  if (!violations.empty())
    throw IoError("episode " + id + ": invalid (" + violations.front() + ")");
  return ep;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  auto load_all = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids) ds.episodes.emplace(id, load_episode(dir, id));
  };
  load_all(ds.manifest.train_ids);
  load_all(ds.manifest.test_ids);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void append_pod(std::vector<uint8_t>& buf, const T& v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, size_t& off, const std::string& path) {
  if (off + sizeof(T) > buf.size()) throw IoError("checkpoint truncated: " + path);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  checkpoint.config.validate();

  json header;
  header["format_version"] = kCheckpointVersion;
  header["model_config"] = json::parse(model_config_to_json(checkpoint.config));
  json meta;
  meta["seed"] = checkpoint.meta.seed;
  meta["epochs"] = checkpoint.meta.epochs;
  meta["best_epoch"] = checkpoint.meta.best_epoch;
  meta["best_val_accuracy"] = checkpoint.meta.best_val_accuracy;
  if (!checkpoint.meta.train_config_json.empty()) {
    try {
      meta["train_config"] = json::parse(checkpoint.meta.train_config_json);
    } catch (const json::exception&) {
      meta["train_config"] = checkpoint.meta.train_config_json;
    }
  } else {
    meta["train_config"] = nullptr;
  }
  header["meta"] = meta;

  std::vector<uint8_t> payload;
  json tensors = json::array();
  for (const auto& t : checkpoint.params.tensors) {
    json tj;
    tj["name"] = t.name;
    tj["shape"] = t.shape;
    tj["offset"] = payload.size();
    tj["bytes"] = t.v.size() * sizeof(float);
    tensors.push_back(tj);
    const auto* p = reinterpret_cast<const uint8_t*>(t.v.data());
    payload.insert(payload.end(), p, p + t.v.size() * sizeof(float));
  }
  header["tensors"] = tensors;

  const std::string header_text = header.dump();
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  append_pod(buf, kCheckpointVersion);
  append_pod(buf, static_cast<uint64_t>(header_text.size()));
  buf.insert(buf.end(), header_text.begin(), header_text.end());
  append_pod(buf, static_cast<uint64_t>(payload.size()));
  buf.insert(buf.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, payload.empty() ? Z_NULL : payload.data(), static_cast<uInt>(payload.size())));
  append_pod(buf, crc);

  atomic_write_bytes(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  size_t off = 0;
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  off = 4;
  const uint32_t version = read_pod<uint32_t>(buf, off, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const uint64_t header_len = read_pod<uint64_t>(buf, off, path);
  if (off + header_len > buf.size()) throw IoError("checkpoint truncated: " + path);
  json header;
  try {
    header = json::parse(buf.substr(off, header_len));
  } catch (const json::exception& e) {
    throw IoError("checkpoint header parse error in " + path + ": " + e.what());
  }
  off += header_len;
  const uint64_t payload_len = read_pod<uint64_t>(buf, off, path);
  if (off + payload_len + sizeof(uint32_t) > buf.size())
    throw IoError("checkpoint truncated: " + path);
  const char* payload = buf.data() + off;
  off += payload_len;
  const uint32_t want_crc = read_pod<uint32_t>(buf, off, path);
  const uint32_t got_crc = static_cast<uint32_t>(crc32(
      0L, payload_len == 0 ? Z_NULL : reinterpret_cast<const Bytef*>(payload),
      static_cast<uInt>(payload_len)));
  if (want_crc != got_crc) throw IoError("checkpoint payload checksum mismatch: " + path);

  Checkpoint out;
  try {
    out.config = model_config_from_json(header.at("model_config").dump());
    const auto& meta = header.at("meta");
    out.meta.seed = meta.at("seed").get<uint64_t>();
    out.meta.epochs = meta.at("epochs").get<int>();
    out.meta.best_epoch = meta.at("best_epoch").get<int>();
    out.meta.best_val_accuracy = meta.at("best_val_accuracy").get<double>();
    if (!meta.at("train_config").is_null()) out.meta.train_config_json = meta.at("train_config").dump();

    for (const auto& tj : header.at("tensors")) {
      ParamTensor t;
      t.name = tj.at("name").get<std::string>();
      t.shape = tj.at("shape").get<std::vector<int>>();
      const uint64_t offset = tj.at("offset").get<uint64_t>();
      const uint64_t bytes = tj.at("bytes").get<uint64_t>();
      if (offset + bytes > payload_len || bytes % sizeof(float) != 0)
        throw IoError("checkpoint tensor '" + t.name + "' payload out of range in " + path);
      t.v.resize(bytes / sizeof(float));
      std::memcpy(t.v.data(), payload + offset, bytes);
      out.params.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError("checkpoint header field error in " + path + ": " + e.what());
  }

  // The stored tensors must exactly match the stored config.
  const auto inventory = parameter_inventory(out.config);
  if (inventory.size() != out.params.tensors.size())
    throw DataError("checkpoint " + path + ": tensor count " +
                    std::to_string(out.params.tensors.size()) + " does not match config (" +
                    std::to_string(inventory.size()) + ")");
  for (size_t i = 0; i < inventory.size(); ++i) {
    const auto& t = out.params.tensors[i];
    if (t.name != inventory[i].first || t.shape != inventory[i].second ||
        t.v.size() != [&] {
          size_t n = 1;
          for (int d : inventory[i].second) n *= static_cast<size_t>(d);
          return n;
        }())
      throw DataError("checkpoint " + path + ": tensor '" + t.name +
                      "' does not match the stored config (expected '" + inventory[i].first +
                      "')");
  }
  return out;
}

}  // namespace riskcause
