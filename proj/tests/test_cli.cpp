#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "stict/config.hpp"
#include "stict/data.hpp"
#include "stict/image_io.hpp"
#include "support.hpp"

using namespace stict;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kSmall =
    "data.labeled_count = 4\n"
    "data.video_count = 2\n"
    "data.heldout_count = 1\n"
    "data.frames = 4\n"
    "model.channels = 4,6,8,10\n"
    "train.epochs = 2\n"
    "train.labeled_batch = 2\n"
    "train.unlabeled_batch = 1\n";

// Sorted relative path -> contents for every file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

// Column values of a training log, by header name.
std::vector<std::string> column(const fs::path& csv, const std::string& name) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  for (std::stringstream ss(line); std::getline(ss, line, ',');) header.push_back(line);
  const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  std::vector<std::string> values;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    for (std::stringstream ss(line); std::getline(ss, line, ',');) cells.push_back(line);
    if (idx < cells.size()) values.push_back(cells[idx]);
  }
  return values;
}

}  // namespace

TEST_CASE("gen-data is deterministic and guards non-empty directories") {
  test::TempDir dir("cli_gen");
  write(dir / "small.txt", kSmall);
  const std::string cfg = (dir / "small.txt").string();
  REQUIRE(run({"gen-data", "--out", (dir / "a").string(), "--config", cfg, "--seed", "7"}).code == 0);
  REQUIRE(run({"gen-data", "--out", (dir / "b").string(), "--config", cfg, "--seed", "7"}).code == 0);
  REQUIRE(run({"gen-data", "--out", (dir / "c").string(), "--config", cfg, "--seed", "8"}).code == 0);
  const auto a = tree(dir / "a");
  CHECK(a == tree(dir / "b"));
  CHECK(a != tree(dir / "c"));
  CHECK(a.count("videos/v001/flow_fwd/00002.flo") == 1);
  CHECK(a.count("heldout/videos/v000/masks/00003.pgm") == 1);
  CHECK(a.count("manifest.txt") == 1);

  const Result again = run({"gen-data", "--out", (dir / "a").string(), "--config", cfg, "--seed", "7"});
  CHECK(again.code == 3);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(run({"gen-data", "--out", (dir / "a").string(), "--config", cfg, "--seed", "7", "--force"}).code == 0);
  CHECK(tree(dir / "a") == tree(dir / "b"));

  REQUIRE(run({"gen-data", "--out", (dir / "l").string(), "--config", cfg, "--labeled-only"}).code == 0);
  const Dataset only = load_dataset(dir / "l");
  CHECK(only.labeled.size() == 4);
  CHECK(only.videos.empty());
}

TEST_CASE("train, resume, eval and infer end to end") {
  test::TempDir dir("cli_train");
  write(dir / "small.txt", kSmall);
  write(dir / "sup.txt", std::string(kSmall) + "train.use_sc = false\ntrain.use_tic = false\ntrain.use_sic = false\n");
  REQUIRE(run({"gen-data", "--out", (dir / "data").string(), "--config", (dir / "small.txt").string()}).code == 0);
  const std::string data = (dir / "data").string();

  SUBCASE("supervised-only runs log zero unsupervised terms") {
    const Result r = run({"train", "--data", data, "--config", (dir / "sup.txt").string(), "--out", (dir / "sup").string()});
    REQUIRE(r.code == 0);
    const auto log = dir / "sup" / "train_log.csv";
    for (const char* name : {"L_sic", "L_tic", "L_sc"})
      for (const auto& v : column(log, name)) CHECK(v == "0");
    CHECK(column(log, "step").size() == 4);
    CHECK(fs::exists(dir / "sup" / "report.txt"));
    CHECK(slurp(dir / "sup" / "report.csv").find("\nmean,4,") != std::string::npos);
  }

  SUBCASE("an interrupted run resumes to the same bytes") {
    const std::string cfg = (dir / "small.txt").string();
    REQUIRE(run({"train", "--data", data, "--config", cfg, "--out", (dir / "full").string()}).code == 0);
    REQUIRE(run({"train", "--data", data, "--config", cfg, "--out", (dir / "part").string(), "--stop-after-epoch", "1"})
                .code == 0);
    CHECK_FALSE(fs::exists(dir / "part" / "report.txt"));
    const Result r = run({"train", "--data", data, "--config", cfg, "--out", (dir / "part").string(), "--resume",
                          (dir / "part" / "last.ckpt").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("at epoch 1") != std::string::npos);
    CHECK(slurp(dir / "full" / "last.ckpt") == slurp(dir / "part" / "last.ckpt"));
    CHECK(slurp(dir / "full" / "train_log.csv") == slurp(dir / "part" / "train_log.csv"));
    CHECK(slurp(dir / "full" / "report.csv") == slurp(dir / "part" / "report.csv"));

    const std::string ckpt = (dir / "full" / "last.ckpt").string();
    const Result ev = run({"eval", "--data", (dir / "data" / "heldout").string(), "--ckpt", ckpt, "--csv",
                           (dir / "eval.csv").string()});
    REQUIRE(ev.code == 0);
    CHECK(slurp(dir / "eval.csv") == slurp(dir / "full" / "report.csv"));

    const Result inf = run({"infer", "--ckpt", ckpt, "--video", (dir / "data" / "videos" / "v000").string(), "--out",
                            (dir / "maps").string()});
    REQUIRE(inf.code == 0);
    int count = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "maps")) ++count;
    CHECK(count == 4);
    CHECK(read_pgm(dir / "maps" / "00003.pgm").shape() == Shape{1, 1, 64, 64});

    // A checkpoint from a different architecture is refused with exit code 1.
    write(dir / "wide.txt", std::string(kSmall) + "model.channels = 4,6,8,12\n");
    CHECK(run({"eval", "--data", data, "--ckpt", ckpt, "--config", (dir / "wide.txt").string()}).code == 1);
  }

  SUBCASE("stored ground truth evaluates to a perfect score") {
    const Dataset held = load_dataset(dir / "data" / "heldout");
    for (const auto& v : held.videos) {
      fs::create_directories(dir / "gt" / v.id);
      for (int t = 0; t < v.length(); ++t) {
        char name[16];
        std::snprintf(name, sizeof name, "%05d.pgm", t);
        write_pgm(dir / "gt" / v.id / name, v.masks[static_cast<std::size_t>(t)]);
      }
    }
    const Result r = run({"eval", "--data", (dir / "data" / "heldout").string(), "--pred", (dir / "gt").string(),
                          "--csv", (dir / "gt.csv").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "gt.csv").find("\nmean,4,0,0.000000,1.000000,1.000000,0.000000,") != std::string::npos);
    CHECK(run({"eval", "--data", data, "--pred", (dir / "gt").string(), "--ckpt", "x"}).code == 1);
    CHECK(run({"eval", "--data", (dir / "data" / "heldout").string(), "--pred", (dir / "none").string()}).code == 3);
  }
}

TEST_CASE("config printing re-parses to the same configuration") {
  const Result r = run({"config"});
  REQUIRE(r.code == 0);
  const auto begin = r.out.find("# resolved configuration\n"), end = r.out.find("# end configuration");
  REQUIRE(begin != std::string::npos);
  REQUIRE(end != std::string::npos);
  CHECK(RunConfig::parse(r.out.substr(begin, end - begin)) == RunConfig{});
  const Result keys = run({"config", "--keys"});
  CHECK(keys.out.find("train.ema_decay: ") != std::string::npos);
}

TEST_CASE("gradcheck subcommand and exit codes") {
  const Result one = run({"gradcheck", "--op", "sigmoid", "--seeds", "3"});
  CHECK(one.code == 0);
  CHECK(one.out.find("PASS") != std::string::npos);
  CHECK(run({"gradcheck", "--op", "no_such_op"}).code == 1);
  // A coarse step leaves truncation error far above the tolerance: exit code 2.
  const Result coarse = run({"gradcheck", "--op", "exp", "--seeds", "1", "--step", "0.5"});
  CHECK(coarse.code == 2);
  CHECK(coarse.out.find("FAIL") != std::string::npos);

  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"train", "--out", "x"}).code == 1);
  test::TempDir dir("cli_codes");
  write(dir / "bad.txt", "train.epochs = 0\n");
  CHECK(run({"config", "--config", (dir / "bad.txt").string()}).code == 1);
  write(dir / "unknown.txt", "train.nope = 1\n");
  const Result unknown = run({"config", "--config", (dir / "unknown.txt").string()});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("nope") != std::string::npos);
  CHECK(run({"config", "--config", (dir / "missing.txt").string()}).code == 3);
  CHECK(run({"train", "--data", (dir / "nodata").string(), "--out", (dir / "run").string()}).code == 3);
}
