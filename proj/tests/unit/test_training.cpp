#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mediumvc/corpus.hpp"
#include "mediumvc/error.hpp"
#include "mediumvc/eval.hpp"
#include "mediumvc/training.hpp"
#include "test_support.hpp"

using namespace mvc;
namespace fs = std::filesystem;

namespace {

Mat random_mat(Index rows, Index cols, nn::Rng& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Utterance> toy_utterances(int n_speakers, int per_speaker, std::uint64_t seed, double seconds) {
  const auto speakers = make_toy_speakers(n_speakers, seed);
  std::vector<Utterance> out;
  for (const auto& s : speakers) {
    for (int u = 0; u < per_speaker; ++u) {
      Utterance utt;
      utt.id = s.id + "_" + std::to_string(u);
      utt.speaker = s.id;
      utt.wav = peak_normalize(synthesize_utterance(s, seconds, seed * 1000 + out.size()));
      utt.mel = mel_spectrogram(utt.wav).frames;
      out.push_back(std::move(utt));
    }
  }
  return out;
}

SingleVCConfig tiny_single() {
  SingleVCConfig c;
  c.enc_channels = 16;
  c.dec_channels = 16;
  c.enc_layers = 1;
  c.n_convertors = 1;
  c.n_resblocks = 1;
  return c;
}

MediumVCConfig tiny_medium(MediumMode mode) {
  MediumVCConfig c;
  c.enc_channels = 16;
  c.enc_layers = 1;
  c.dec_channels = 16;
  c.n_convertors = 1;
  c.n_resblocks = 1;
  c.mode = mode;
  return c;
}

TrainConfig tiny_train(int steps) {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 2;
  t.max_steps = steps;
  t.segment_frames = 24;
  return t;
}

}  // namespace

TEST_SUITE("batching") {
  TEST_CASE("pad_batch zero-pads and masks exactly the valid frames") {
    nn::Rng rng(1);
    const std::vector<Mat> mels = {random_mat(5, 80, rng), random_mat(9, 80, rng), random_mat(1, 80, rng)};
    const Batch b = pad_batch(mels);
    CHECK(b.size() == 3);
    CHECK(b.max_frames() == 9);
    for (std::size_t i = 0; i < mels.size(); ++i) {
      CHECK(b.lengths[i] == mels[i].rows());
      CHECK(b.mels[i].rows() == 9);
      CHECK(b.mels[i].topRows(mels[i].rows()) == mels[i]);
      CHECK(b.mels[i].bottomRows(9 - mels[i].rows()).cwiseAbs().sum() == 0.0);
      for (Index t = 0; t < 9; ++t) CHECK(b.mask(static_cast<Index>(i), t) == (t < mels[i].rows()));
    }
  }

  TEST_CASE("pad_batch rejects empty and ragged channel batches") {
    CHECK_THROWS_AS(pad_batch({}), Error);
    CHECK_THROWS_AS(pad_batch({Mat::Zero(3, 80), Mat::Zero(3, 79)}), Error);
  }

  TEST_CASE("masked L1 ignores whatever sits in the padding") {
    nn::Rng rng(2);
    const std::vector<Mat> target = {random_mat(4, 80, rng), random_mat(7, 80, rng)};
    const Batch t = pad_batch(target);
    const Batch p = pad_batch({random_mat(4, 80, rng), random_mat(7, 80, rng)});
    // Reference mean over valid frames only.
    double sum = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      sum += (p.mels[b].topRows(target[b].rows()) - target[b]).cwiseAbs().sum();
    const double expected = sum / (11.0 * 80.0);
    CHECK(masked_l1(p.mels, t.mels, t.mask) == doctest::Approx(expected).epsilon(1e-14));
    std::vector<Mat> corrupted = p.mels;
    corrupted[0].bottomRows(3).setConstant(1e6);
    CHECK(masked_l1(corrupted, t.mels, t.mask) == doctest::Approx(expected).epsilon(1e-14));
    const Mat g = masked_l1_grad(corrupted[0], t.mels[0], t.mask, 0, 11.0 * 80.0);
    CHECK(g.bottomRows(3).cwiseAbs().sum() == 0.0);
    CHECK(g.topRows(4).cwiseAbs().maxCoeff() == doctest::Approx(1.0 / 880.0));
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("AdamW matches a scalar reference over several steps") {
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    nn::ParamStore store;
    auto& p = store.add("w", {3}, 1, 3);
    p.value << 0.5, -1.0, 2.0;
    AdamState adam;
    adam.init(store);
    double w[3] = {0.5, -1.0, 2.0}, m[3] = {}, v[3] = {};
    const double grads[4][3] = {{0.1, -0.2, 0.3}, {-0.4, 0.0, 0.5}, {1.0, 2.0, -3.0}, {0.01, 0.02, 0.03}};
    for (int step = 0; step < 4; ++step) {
      for (int i = 0; i < 3; ++i) p.grad(0, i) = grads[step][i];
      adamw_step(store, adam, cfg, cfg.lr);
      const double t = step + 1;
      for (int i = 0; i < 3; ++i) {
        const double g = grads[step][i];
        m[i] = 0.9 * m[i] + 0.1 * g;
        v[i] = 0.999 * v[i] + 0.001 * g * g;
        w[i] -= cfg.lr * cfg.weight_decay * w[i];
        w[i] -= cfg.lr * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
        CHECK(p.value(0, i) == doctest::Approx(w[i]).epsilon(1e-12));
      }
    }
    CHECK(adam.t == 4);
  }

  TEST_CASE("first step moves every weight by about lr against the gradient") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    nn::ParamStore store;
    auto& p = store.add("w", {2}, 1, 2);
    p.value << 1.0, 1.0;
    p.grad << 3.0, -0.001;
    AdamState adam;
    adamw_step(store, adam, cfg, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(1.1).epsilon(1e-4));
  }

  TEST_CASE("non-finite gradients leave every parameter untouched") {
    TrainConfig cfg;
    nn::ParamStore store;
    auto& a = store.add("a", {1}, 1, 1);
    auto& b = store.add("b", {1}, 1, 1);
    a.value(0, 0) = 1.0;
    b.value(0, 0) = 2.0;
    a.grad(0, 0) = 1.0;
    b.grad(0, 0) = std::nan("");
    AdamState adam;
    adam.init(store);
    CHECK_THROWS_AS(adamw_step(store, adam, cfg, 0.1), Error);
    CHECK(a.value(0, 0) == 1.0);
    CHECK(b.value(0, 0) == 2.0);
    CHECK(adam.t == 0);
  }

  TEST_CASE("exponential schedule decays once per lr_step") {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.lr_gamma = 0.999;
    cfg.lr_step = 100;
    CHECK(exp_lr(0, cfg) == 1e-4);
    CHECK(exp_lr(99, cfg) == 1e-4);
    CHECK(exp_lr(100, cfg) == doctest::Approx(1e-4 * 0.999));
    CHECK(exp_lr(250, cfg) == doctest::Approx(1e-4 * 0.999 * 0.999));
    CHECK_THROWS_AS(exp_lr(-1, cfg), Error);
  }
}

TEST_SUITE("toy_corpus") {
  TEST_CASE("default layout, determinism and per-speaker pitch bands") {
    const fs::path a = testsupport::scratch("toy_a"), b = testsupport::scratch("toy_b");
    ToyCorpusOptions opts;
    opts.seed = 42;
    const auto rows = make_toy_corpus(a, opts);
    make_toy_corpus(b, opts);
    CHECK(rows.size() == 80);
    CHECK(slurp(a / "metadata.csv") == slurp(b / "metadata.csv"));
    int checked = 0;
    for (const auto& row : rows) {
      CHECK(slurp(a / row.file) == slurp(b / row.file));
      const Waveform w = read_wav(a / row.file);
      CHECK(w.duration() >= opts.min_duration - 1e-9);
      CHECK(w.duration() <= opts.max_duration + 1e-9);
      // Every fifth file is pitch-tracked to keep the suite quick.
      if (checked++ % 5 == 0) {
        const auto f0 = median_f0(w);
        REQUIRE(f0.has_value());
        CHECK(*f0 >= row.f0_lo - 10.0);
        CHECK(*f0 <= row.f0_hi + 10.0);
      }
    }
    CHECK(read_corpus_metadata(a).size() == 80);
  }

  TEST_CASE("speaker pitch bands do not overlap") {
    for (int n = 2; n <= 5; ++n) {
      auto speakers = make_toy_speakers(n, 9);
      std::sort(speakers.begin(), speakers.end(), [](auto& x, auto& y) { return x.f0_lo < y.f0_lo; });
      for (std::size_t i = 1; i < speakers.size(); ++i) CHECK(speakers[i].f0_lo >= speakers[i - 1].f0_hi);
    }
  }

  TEST_CASE("invalid speaker counts are rejected") {
    CHECK_THROWS_AS(make_toy_speakers(1, 0), Error);
    CHECK_THROWS_AS(make_toy_speakers(6, 0), Error);
  }
}

TEST_SUITE("trainers") {
  TEST_CASE("frozen SingleVC is untouched by 100 MediumVC steps") {
    const auto corpus = toy_utterances(2, 2, 3, 0.8);
    SingleVC single(tiny_single());
    const auto before = single.params().checksum();
    MediumVC model(tiny_medium(MediumMode::Full));
    MediumVCTrainer trainer(model, &single, tiny_train(100), corpus);
    trainer.run(std::nullopt, std::nullopt);
    CHECK(trainer.step() == 100);
    CHECK(single.params().checksum() == before);
    CHECK_FALSE(model.untrained);
  }

  TEST_CASE("resumed training reproduces the uninterrupted losses") {
    const auto corpus = toy_utterances(2, 2, 4, 0.8);
    const fs::path dir = testsupport::scratch("resume");
    SingleVC a(tiny_single());
    SingleVCTrainer ta(a, tiny_train(8), corpus);
    std::vector<double> reference;
    for (int i = 0; i < 8; ++i) reference.push_back(ta.train_step());

    SingleVC b(tiny_single());
    SingleVCTrainer tb(b, tiny_train(5), corpus);
    tb.run(std::nullopt, dir);
    SingleVC c(tiny_single());
    SingleVCTrainer tc(c, tiny_train(8), corpus);
    tc.resume(dir);
    CHECK(tc.step() == 5);
    for (int i = 5; i < 8; ++i) CHECK(std::abs(tc.train_step() - reference[static_cast<std::size_t>(i)]) <= 1e-6);
    CHECK(a.params().checksum() == c.params().checksum());
  }

  TEST_CASE("loss logs are bitwise reproducible") {
    const auto corpus = toy_utterances(2, 2, 5, 0.8);
    const fs::path dir = testsupport::scratch("logs");
    for (const char* name : {"a.csv", "b.csv"}) {
      MediumVC model(tiny_medium(MediumMode::NoSingle));
      MediumVCTrainer trainer(model, nullptr, tiny_train(6), corpus);
      trainer.run(dir / name, std::nullopt);
    }
    const std::string log = slurp(dir / "a.csv");
    CHECK(log == slurp(dir / "b.csv"));
    CHECK(log.rfind("step,loss,lr\n0,", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 7);
  }

  TEST_CASE("resuming a checkpoint of the other model kind is refused") {
    const auto corpus = toy_utterances(2, 1, 6, 0.8);
    const fs::path dir = testsupport::scratch("wrong_kind");
    SingleVC single(tiny_single());
    SingleVCTrainer st(single, tiny_train(1), corpus);
    st.run(std::nullopt, dir);
    MediumVC model(tiny_medium(MediumMode::NoSingle));
    MediumVCTrainer mt(model, nullptr, tiny_train(1), corpus);
    CHECK_THROWS_AS(mt.resume(dir), Error);
  }

  TEST_CASE("empty corpora are rejected") {
    SingleVC single(tiny_single());
    CHECK_THROWS_AS(SingleVCTrainer(single, tiny_train(1), {}), Error);
  }
}
