// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <tinydrop/error.hpp>
#include <tinydrop/weights_io.hpp>

#include <json.hpp>

#include <cstring>

#include "helpers.hpp"

using namespace tinydrop;
using namespace tdtest;
using nlohmann::json;

namespace {

std::uint64_t read_u64(const std::string& bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(i)]);
  return v;
}

std::string u64_le(std::uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

// Rewrites the metadata document of a TDW1 blob and fixes up its length.
std::string edit_metadata(const std::string& bytes, const std::function<void(json&)>& edit) {
  const std::uint64_t len = read_u64(bytes, 8);
  json meta = json::parse(bytes.substr(16, len));
  edit(meta);
  const std::string text = meta.dump();
  return bytes.substr(0, 8) + u64_le(text.size()) + text + bytes.substr(16 + len);
}

template <class Fn>
std::string format_error_of(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "<no FormatError>";
}

}  // namespace

TEST_SUITE("weights-io") {

TEST_CASE("weights round trip bit-identically") {
  TempDir dir;
  for (Readout readout : {Readout::ClassToken, Readout::MeanPatch}) {
    for (PosMode mode : {PosMode::Absolute, PosMode::RelativeBias}) {
      const ViTConfig cfg = tiny_config(mode, 2, readout);
      const ViTWeights w = random_weights(cfg, 3);
      const std::string path = dir / "w.tdw";
      save_weights(cfg, w, path);
      const auto [cfg2, w2] = load_weights(path);
      CHECK(cfg2 == cfg);
      CHECK(w2 == w);
      CHECK(encode_weights(cfg2, w2) == slurp(path));
    }
  }
}

TEST_CASE("header layout") {
  const ViTConfig cfg = tiny_config();
  const std::string bytes = encode_weights(cfg, init_weights(cfg, 1));
  CHECK(bytes.compare(0, 8, "TDWEIGHT") == 0);
  const json meta = json::parse(bytes.substr(16, read_u64(bytes, 8)));
  CHECK(meta["format"] == "TDW1");
  CHECK(meta["version"] == 1);
  CHECK(meta["kind"] == "vit");
  CHECK(meta["config"]["readout"] == "class_token");
  CHECK(meta["config"]["pos_mode"] == "absolute");
  std::size_t doubles = 0;
  for (const auto& t : meta["tensors"]) {
    std::size_t n = 1;
    for (std::size_t d : t["shape"]) n *= d;
    doubles += n;
  }
  CHECK(bytes.size() == 16 + read_u64(bytes, 8) + 8 * doubles);
}

TEST_CASE("corrupt files raise format errors") {
  const ViTConfig cfg = tiny_config();
  const std::string good = encode_weights(cfg, init_weights(cfg, 1));

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{40}, good.size() - 1}) {
    CHECK_THROWS_AS(decode_weights(good.substr(0, cut)), FormatError);
  }
  CHECK_THROWS_AS(decode_weights(good + "x"), FormatError);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_weights(bad_magic), FormatError);

  const std::string wrong_shape = edit_metadata(good, [](json& m) { m["tensors"][0]["shape"][0] = 7; });
  CHECK(format_error_of([&] { decode_weights(wrong_shape); }).find("patch_w") != std::string::npos);

  const std::string no_readout = edit_metadata(good, [](json& m) { m["config"].erase("readout"); });
  CHECK(format_error_of([&] { decode_weights(no_readout); }).find("readout") != std::string::npos);

  const std::string bad_readout = edit_metadata(good, [](json& m) { m["config"]["readout"] = "max"; });
  CHECK_THROWS_AS(decode_weights(bad_readout), FormatError);

  const std::string bad_version = edit_metadata(good, [](json& m) { m["version"] = 2; });
  CHECK_THROWS_AS(decode_weights(bad_version), FormatError);

  const std::string not_json = good.substr(0, 16) + std::string(read_u64(good, 8), '{') +
                               good.substr(16 + read_u64(good, 8));
  CHECK_THROWS_AS(decode_weights(not_json), FormatError);

  const std::string as_tensor = encode_tensor("image", Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(decode_weights(as_tensor), FormatError);
  CHECK_THROWS_AS(decode_tensor(good), FormatError);
}

TEST_CASE("single tensors round trip") {
  TempDir dir;
  Rng rng(4);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  save_tensor("image", t, dir / "img.tdw");
  const NamedTensor back = load_tensor(dir / "img.tdw");
  CHECK(back.name == "image");
  CHECK(back.tensor == t);
}

TEST_CASE("missing files raise I/O errors") {
  TempDir dir;
  CHECK_THROWS_AS(load_weights(dir / "absent.tdw"), IoError);
  CHECK_THROWS_AS(write_file_atomic(dir.path() / "no_such_dir" / "x", "data"), IoError);
}

TEST_CASE("atomic writes leave no temporary files behind") {
  TempDir dir;
  write_file_atomic(dir.path() / "a.txt", "one");
  write_file_atomic(dir.path() / "a.txt", "two");
  CHECK(slurp(dir.path() / "a.txt") == "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  CHECK(files == 1);
}

}  // TEST_SUITE
