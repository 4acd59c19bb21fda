#include <doctest.h>

#include <fstream>
#include <functional>
#include <random>

#include "mediumvc/checkpoint.hpp"
#include "mediumvc/config.hpp"
#include "mediumvc/error.hpp"
#include "mediumvc/models.hpp"
#include "mediumvc/training.hpp"
#include "test_support.hpp"

using namespace mvc;
namespace fs = std::filesystem;

namespace {

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an error");
  return ErrorCategory::Unsupported;
}

SingleVCConfig small_single() {
  SingleVCConfig c;
  c.enc_channels = 8;
  c.dec_channels = 8;
  c.enc_layers = 1;
  c.n_convertors = 1;
  c.n_resblocks = 1;
  return c;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("comments, blanks and whitespace are ignored") {
    const auto m = parse_config_text("# header\n\n  lr = 2e-4  # inline\nmode=full\r\n");
    CHECK(m.size() == 2);
    CHECK(m.at("lr") == "2e-4");
    CHECK(m.at("mode") == "full");
  }

  TEST_CASE("malformed lines are config errors") {
    CHECK(category_of([] { parse_config_text("novalue\n"); }) == ErrorCategory::Config);
    CHECK(category_of([] { parse_config_text("=3\n"); }) == ErrorCategory::Config);
    CHECK(category_of([] { parse_config_text("a=1\na=2\n"); }) == ErrorCategory::Config);
    CHECK(category_of([] { read_config_file("/nonexistent/config.txt"); }) == ErrorCategory::Config);
  }

  TEST_CASE("typed getters parse and reject") {
    ConfigReader r(parse_config_text("i=12\nd=0.25\nb=true\ns=hello\nbad=1.5\n"));
    CHECK(r.get_int("i", 0) == 12);
    CHECK(r.get_double("d", 0.0) == 0.25);
    CHECK(r.get_bool("b", false));
    CHECK(r.get_string("s", "") == "hello");
    CHECK(r.get_int("missing", 7) == 7);
    CHECK(category_of([&] { r.get_int("bad", 0); }) == ErrorCategory::Config);
    CHECK_NOTHROW(r.finish());
  }

  TEST_CASE("unknown keys are config errors") {
    ConfigReader r(parse_config_text("enc_channels=64\nencoder_chanels=32\n"));
    SingleVCConfig::read(r);
    try {
      r.finish();
      FAIL("expected an unknown-key error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Config);
      CHECK(std::string(e.what()).find("encoder_chanels") != std::string::npos);
    }
  }

  TEST_CASE("model configs round trip through their text form") {
    SingleVCConfig s = small_single();
    s.shift_min = -4;
    s.include_zero_shift = true;
    ConfigReader rs(s.to_map());
    const auto s2 = SingleVCConfig::read(rs);
    rs.finish();
    CHECK(s2.to_map() == s.to_map());

    MediumVCConfig m;
    m.mode = MediumMode::UntrainedSingle;
    m.trainable_speaker = true;
    ConfigReader rm(m.to_map());
    const auto m2 = MediumVCConfig::read(rm);
    rm.finish();
    CHECK(m2.to_map() == m.to_map());

    TrainConfig t;
    t.lr = 3.3e-4;
    t.lr_gamma = 0.97;
    ConfigReader rt(t.to_map());
    const auto t2 = TrainConfig::read(rt);
    rt.finish();
    CHECK(t2.lr == t.lr);
    CHECK(t2.lr_gamma == t.lr_gamma);
  }

  TEST_CASE("invalid model settings are config errors") {
    CHECK(category_of([] {
            ConfigReader r(parse_config_text("bottleneck=32\n"));
            SingleVCConfig::read(r);
          }) == ErrorCategory::Config);
    CHECK(category_of([] {
            ConfigReader r(parse_config_text("shift_range=-8,4\n"));
            SingleVCConfig::read(r);
          }) == ErrorCategory::Config);
    CHECK(category_of([] {
            ConfigReader r(parse_config_text("mode=half\n"));
            MediumVCConfig::read(r);
          }) == ErrorCategory::Config);
  }

  TEST_CASE("hash is stable and order independent") {
    ConfigMap a{{"x", "1"}, {"y", "2"}};
    ConfigMap b{{"y", "2"}, {"x", "1"}};
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b["y"] = "3";
    CHECK(config_hash(a) != config_hash(b));
  }

  TEST_CASE("numbers format to their shortest round-trip text") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1e3, 1e3);
    for (int i = 0; i < 200; ++i) {
      const double v = d(rng);
      CHECK(std::stod(format_number(v)) == v);
    }
    CHECK(format_number(0.5) == "0.5");
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("parameters and optimizer state round trip bit for bit") {
    const fs::path dir = testsupport::scratch("ckpt_roundtrip");
    SingleVC model(small_single());
    AdamState adam;
    adam.init(model.params());
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d;
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
      for (Index k = 0; k < adam.m[i].size(); ++k) {
        adam.m[i].data()[k] = d(rng);
        adam.v[i].data()[k] = std::abs(d(rng));
      }
    }
    adam.round_to_f32();
    adam.t = 17;
    CheckpointMeta meta;
    meta.model = "singlevc";
    meta.config = model.config().to_map();
    meta.step = 17;
    meta.random_init = false;
    save_checkpoint(dir, model.params(), meta, &adam);

    const auto back = read_checkpoint_meta(dir);
    CHECK(back.model == "singlevc");
    CHECK(back.step == 17);
    CHECK_FALSE(back.random_init);
    CHECK(back.config == meta.config);
    CHECK(back.config_hash == config_hash(meta.config));

    SingleVCConfig other = small_single();
    other.init_seed = 99;
    SingleVC restored(other);
    AdamState adam2;
    load_checkpoint_params(dir, restored.params(), &adam2);
    CHECK(restored.params().checksum() == model.params().checksum());
    CHECK(adam2.t == 17);
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
      CHECK(adam2.m[i] == adam.m[i]);
      CHECK(adam2.v[i] == adam.v[i]);
    }
  }

  TEST_CASE("load_singlevc restores the config and the trained flag") {
    const fs::path dir = testsupport::scratch("ckpt_load");
    SingleVC model(small_single());
    CheckpointMeta meta;
    meta.model = "singlevc";
    meta.config = model.config().to_map();
    meta.step = 3;
    meta.random_init = false;
    save_checkpoint(dir, model.params(), meta);
    SingleVC back = load_singlevc(dir);
    CHECK(back.config().to_map() == model.config().to_map());
    CHECK(back.params().checksum() == model.params().checksum());
    CHECK_FALSE(back.untrained);
    CHECK_THROWS_AS(load_mediumvc(dir), Error);
  }

  TEST_CASE("damaged checkpoints are reported by category") {
    const fs::path dir = testsupport::scratch("ckpt_damaged");
    SingleVC model(small_single());
    CheckpointMeta meta;
    meta.model = "singlevc";
    meta.config = model.config().to_map();
    save_checkpoint(dir, model.params(), meta);

    CHECK(category_of([] { read_checkpoint_meta("/nonexistent/ckpt"); }) == ErrorCategory::Io);

    const fs::path truncated = testsupport::scratch("ckpt_truncated");
    fs::copy(dir, truncated, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::resize_file(truncated / "params.bin", 12);
    CHECK(category_of([&] {
            SingleVC m(small_single());
            load_checkpoint_params(truncated, m.params());
          }) == ErrorCategory::Format);

    const fs::path garbled = testsupport::scratch("ckpt_garbled");
    fs::copy(dir, garbled, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    std::ofstream(garbled / "manifest.json") << "{ not json";
    CHECK(category_of([&] { read_checkpoint_meta(garbled); }) == ErrorCategory::Format);

    SingleVCConfig wider = small_single();
    wider.enc_channels = 16;
    CHECK(category_of([&] {
            SingleVC m(wider);
            load_checkpoint_params(dir, m.params());
          }) == ErrorCategory::Format);
  }
}
