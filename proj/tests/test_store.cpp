#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "riskcause/errors.hpp"
#include "riskcause/store.hpp"
#include "riskcause/synthgen.hpp"
#include "test_support.hpp"

using namespace riskcause;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

Dataset small_dataset(uint64_t seed) {
  Dataset ds;
  ds.manifest.seed = seed;
  GeneratorConfig gc;
  gc.seed = seed;
  ds.manifest.generator_config_json = generator_config_to_json(gc);
  for (int i = 0; i < 3; ++i) {
    ScenarioConfig sc;
    sc.scenario = static_cast<Scenario>(i % kScenarioCount);
    sc.want_stop = i == 0;
    sc.n_distractors = 2;
    sc.rng_seed = derive_seed(seed, i);
    Episode ep = generate_episode(sc);
    ep.id = (i < 2 ? "train_0000" : "test_0000") + std::to_string(i);
    (i < 2 ? ds.manifest.train_ids : ds.manifest.test_ids).push_back(ep.id);
    ds.episodes.emplace(ep.id, std::move(ep));
  }
  return ds;
}

}  // namespace

TEST_CASE("dataset round trip preserves every field") {
  const fs::path dir = fresh_dir("riskcause_store_rt");
  const Dataset ds = small_dataset(200);
  save_dataset(ds, dir.string());
  const Dataset back = load_dataset(dir.string());

  CHECK(back.manifest.seed == ds.manifest.seed);
  CHECK(back.manifest.train_ids == ds.manifest.train_ids);
  CHECK(back.manifest.test_ids == ds.manifest.test_ids);
  REQUIRE(back.episodes.size() == ds.episodes.size());
  for (const auto& [id, ep] : ds.episodes) {
    const Episode& b = back.at(id);
    CHECK(b.label == ep.label);
    CHECK(b.cause_id == ep.cause_id);
    CHECK(b.scenario == ep.scenario);
    REQUIRE(b.tracklets.size() == ep.tracklets.size());
    for (size_t k = 0; k < ep.tracklets.size(); ++k) {
      CHECK(b.tracklets[k].id == ep.tracklets[k].id);
      CHECK(b.tracklets[k].cls == ep.tracklets[k].cls);
      CHECK(b.tracklets[k].boxes == ep.tracklets[k].boxes);
    }
    REQUIRE(b.frames.size() == ep.frames.size());
    for (size_t t = 0; t < ep.frames.size(); ++t) CHECK(b.frames[t] == ep.frames[t]);  // 8-bit exact
  }
  // Generator config survives (up to JSON reformatting).
  const GeneratorConfig gc = generator_config_from_json(back.manifest.generator_config_json);
  CHECK(gc.seed == 200);
  fs::remove_all(dir);
}

TEST_CASE("manifest referencing a missing episode fails naming it") {
  const fs::path dir = fresh_dir("riskcause_store_missing");
  save_dataset(small_dataset(201), dir.string());
  fs::remove_all(dir / "train_00001");
  try {
    load_dataset(dir.string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("train_00001") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("future dataset versions are rejected explicitly") {
  const fs::path dir = fresh_dir("riskcause_store_version");
  save_dataset(small_dataset(202), dir.string());
  std::ifstream in(dir / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 19, "\"format_version\": 9");
  std::ofstream out(dir / "manifest.json");
  out << text;
  out.close();
  try {
    load_manifest(dir.string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("unsupported") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  const fs::path dir = fresh_dir("riskcause_store_ckpt");
  fs::create_directories(dir);
  const fs::path path = dir / "model.rckp";

  Checkpoint ck;
  ck.config = riskcause::testing::tiny_config();
  ck.params = init_params(ck.config, 300);
  ck.meta.seed = 300;
  ck.meta.epochs = 10;
  ck.meta.best_epoch = 7;
  ck.meta.best_val_accuracy = 0.9375;
  save_checkpoint(path.string(), ck);

  const Checkpoint back = load_checkpoint(path.string());
  CHECK(back.config == ck.config);
  CHECK(back.meta.seed == ck.meta.seed);
  CHECK(back.meta.epochs == ck.meta.epochs);
  CHECK(back.meta.best_epoch == ck.meta.best_epoch);
  CHECK(back.meta.best_val_accuracy == ck.meta.best_val_accuracy);
  REQUIRE(back.params.tensors.size() == ck.params.tensors.size());
  for (size_t i = 0; i < ck.params.tensors.size(); ++i) {
    CHECK(back.params.tensors[i].name == ck.params.tensors[i].name);
    CHECK(back.params.tensors[i].shape == ck.params.tensors[i].shape);
    CHECK(back.params.tensors[i].v == ck.params.tensors[i].v);  // bitwise
  }

  // Saving the loaded checkpoint reproduces the file byte for byte.
  const fs::path path2 = dir / "model2.rckp";
  save_checkpoint(path2.string(), back);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  fs::remove_all(dir);
}

TEST_CASE("truncated and corrupted checkpoints never load partially") {
  const fs::path dir = fresh_dir("riskcause_store_corrupt");
  fs::create_directories(dir);
  const fs::path path = dir / "model.rckp";
  Checkpoint ck;
  ck.config = riskcause::testing::tiny_config();
  ck.params = init_params(ck.config, 301);
  save_checkpoint(path.string(), ck);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  {  // truncate
    std::ofstream out(dir / "trunc.rckp", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.rckp").string()), IoError);

  {  // flip a payload byte: CRC must catch it
    std::string corrupted = bytes;
    corrupted[bytes.size() - 20] ^= 0x40;
    std::ofstream out(dir / "flip.rckp", std::ios::binary);
    out.write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
  }
  try {
    load_checkpoint((dir / "flip.rckp").string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("loading a checkpoint into a mismatched model names the tensor") {
  const fs::path dir = fresh_dir("riskcause_store_mismatch");
  fs::create_directories(dir);
  const fs::path path = dir / "model.rckp";
  Checkpoint ck;
  ck.config = riskcause::testing::tiny_config();
  ck.params = init_params(ck.config, 302);
  ck.params.tensors[2].name = "backbone.9.weight";  // desync from the config
  save_checkpoint(path.string(), ck);
  try {
    load_checkpoint(path.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("backbone.9.weight") != std::string::npos);
  }

  // A model built for a different config must reject the loaded params.
  Checkpoint good;
  good.config = riskcause::testing::tiny_config();
  good.params = init_params(good.config, 303);
  save_checkpoint(path.string(), good);
  const Checkpoint loaded = load_checkpoint(path.string());
  ModelConfig other = loaded.config;
  other.hidden_dim *= 2;
  CHECK_THROWS_AS(DrivingModel<float>(other, loaded.params), DataError);
  fs::remove_all(dir);
}

TEST_CASE("atomic writes leave no temp files behind") {
  const fs::path dir = fresh_dir("riskcause_store_atomic");
  fs::create_directories(dir);
  atomic_write_text((dir / "a.txt").string(), "hello\n");
  int entries = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++entries;
    CHECK(e.path().filename() == "a.txt");
  }
  CHECK(entries == 1);
  fs::remove_all(dir);
}
