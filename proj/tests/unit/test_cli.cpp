#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mediumvc/audio.hpp"
#include "mediumvc/cli.hpp"
#include "test_support.hpp"

using namespace mvc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string golden(const std::string& name) {
  std::ifstream in(fs::path(MVC_GOLDEN_DIR) / name);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("top-level help matches the golden text") {
    const auto r = cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out == golden("help_mvc.txt"));
  }

  TEST_CASE("every subcommand help matches its golden text") {
    for (const auto& sub : cli_subcommands()) {
      CAPTURE(sub);
      const auto r = cli({sub, "--help"});
      CHECK(r.code == 0);
      CHECK(r.out == golden("help_" + sub + ".txt"));
    }
  }

  TEST_CASE("the subcommand list is complete") {
    const std::vector<std::string> expected = {"psdr",         "prep",    "make-toy-corpus", "train-single",
                                               "train-medium", "convert-single", "convert",  "eval-sv",
                                               "eval-eer",     "vocode"};
    auto got = cli_subcommands();
    for (const auto& s : expected) CHECK(std::find(got.begin(), got.end(), s) != got.end());
    CHECK(got.size() == expected.size());
  }

  TEST_CASE("usage errors exit 2 and runtime errors exit 1") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"nonsense"}).code == 2);
    CHECK(cli({"psdr", "--in", "x.wav"}).code == 2);
    CHECK(cli({"psdr", "--in", "x.wav", "--out", "y.wav", "--semitones", "two"}).code == 2);
    const auto missing = cli({"psdr", "--in", "/nonexistent/x.wav", "--out", "/tmp/y.wav", "--semitones", "1"});
    CHECK(missing.code == 1);
    CHECK(missing.err.rfind("IO/", 0) == 0);
    const auto mode = cli({"train-medium", "--config", "/dev/null", "--corpus", "/tmp", "--mode", "half", "--out", "/tmp/x"});
    CHECK(mode.code != 0);
  }

  TEST_CASE("psdr writes a shifted file and refuses out-of-range shifts") {
    const fs::path dir = testsupport::scratch("cli_psdr");
    Waveform w = testsupport::sine(220.0, 0.5, 0.5);
    write_wav(dir / "in.wav", w);
    const auto bad = cli({"psdr", "--in", (dir / "in.wav").string(), "--semitones", "-7", "--out", (dir / "o.wav").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err == "RANGE/semitones outside [-6,4]\n");
    CHECK_FALSE(fs::exists(dir / "o.wav"));
    const auto ok = cli({"psdr", "--in", (dir / "in.wav").string(), "--semitones", "2", "--out", (dir / "o.wav").string()});
    CHECK(ok.code == 0);
    REQUIRE(fs::exists(dir / "o.wav"));
    const double f = testsupport::dominant_frequency(read_wav(dir / "o.wav"));
    CHECK(f == doctest::Approx(220.0 * std::exp2(2.0 / 12.0)).epsilon(0.02));
  }

  TEST_CASE("eval-eer reads score columns and writes a report") {
    const fs::path dir = testsupport::scratch("cli_eer");
    std::ofstream(dir / "pos.csv") << "0.9\n0.8\n0.7\n";
    std::ofstream(dir / "neg.csv") << "0.1\n0.2\n0.75\n";
    const auto r = cli({"eval-eer", "--pos", (dir / "pos.csv").string(), "--neg", (dir / "neg.csv").string(),
                        "--report", (dir / "r.csv").string()});
    CHECK(r.code == 0);
    std::ifstream rep(dir / "r.csv");
    std::string header;
    std::getline(rep, header);
    CHECK(header == "metric,value");
  }

  TEST_CASE("malformed score rows are format errors") {
    const fs::path dir = testsupport::scratch("cli_bad_scores");
    std::ofstream(dir / "pairs.csv") << "a,b,not-a-number\n";
    const auto r = cli({"eval-sv", "--pairs", (dir / "pairs.csv").string()});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("FORMAT/", 0) == 0);
  }
}
