#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdp/cli.hpp"
#include "sdp/config.hpp"
#include "test_support.hpp"

using namespace sdp;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sdp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& doc) {
  const auto p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json small_config() {
  auto c = testing_support::tiny_mlp_config();
  c.max_steps = 6;
  c.alignment_every = 3;
  return to_json(c);
}

}  // namespace

TEST_SUITE("cli_harness") {

TEST_CASE("run prints metrics and writes run directories") {
  const auto dir = scratch("sdp_cli_run");
  const auto cfg = write_config(dir, small_config());
  const auto r = cli({"run", cfg.string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("step,epoch,lr,", 0) == 0);
  CHECK(r.out.find("steps=6") != std::string::npos);

  const auto out = dir / "run";
  CHECK(cli({"run", cfg.string(), "--out", out.string(), "--strategy", "neuron", "--seed", "4"}).code == 0);
  for (auto f : {"config.json", "seed.txt", "masks.json", "metrics.csv", "summary.json", "alignment.csv"}) {
    CHECK(fs::exists(out / f));
  }
  const auto saved = load_config(out / "config.json");
  CHECK(saved.seed == 4);
  CHECK(saved.strategy == Strategy::kNeuron);
  CHECK(slurp(out / "seed.txt").find('4') != std::string::npos);

  const auto rep = cli({"report", out.string()});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("run,6,") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "report.json"));
  CHECK(cli({"report", out.string(), "--out", (dir / "rep").string()}).code == 0);
  const auto doc = nlohmann::json::parse(slurp(dir / "rep" / "report.json"));
  CHECK(doc[0]["steps"] == 6);
  fs::remove_all(dir);
}

TEST_CASE("errors map to exit codes") {
  const auto dir = scratch("sdp_cli_err");
  auto doc = small_config();
  doc["overlap"] = 9;
  const auto bad = cli({"run", write_config(dir, doc).string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("overlap") != std::string::npos);

  doc = to_json(testing_support::tiny_resnet_config());
  doc["dataset"]["kind"] = "binary-image-file";
  doc["dataset"]["path"] = "absent.bin";
  const auto missing = cli({"run", write_config(dir, doc).string()});
  CHECK(missing.code == 3);
  CHECK(missing.err.find("absent.bin") != std::string::npos);

  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"run", (dir / "nope.json").string()}).code != 0);
  CHECK(cli({"run", write_config(dir, small_config()).string(), "--strategy", "layer"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("validate-masks reports the assignment") {
  const auto dir = scratch("sdp_cli_val");
  auto doc = small_config();
  doc["overlap"] = 2;
  const auto r = cli({"validate-masks", write_config(dir, doc).string(), "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("dp_equivalent=no") != std::string::npos);
  CHECK(fs::exists(dir / "masks.json"));
  const auto mem = nlohmann::json::parse(slurp(dir / "memory.json"));
  CHECK(mem["workers"].size() == 4);
  fs::remove_all(dir);
}

TEST_CASE("sweep writes a table with one column per overlap") {
  const auto dir = scratch("sdp_cli_sweep");
  const auto cfg = write_config(dir, small_config());
  const auto out = dir / "sweep";
  const auto r = cli({"sweep", cfg.string(), "--overlaps", "4,2", "--repeats", "2", "--out", out.string()});
  CHECK(r.code == 0);
  const auto table = slurp(out / "table.md");
  CHECK(table.find("| strategy | P/N=1.000 | P/N=0.500 |") != std::string::npos);
  CHECK(table.find("| neuron |") != std::string::npos);
  CHECK(table.find("| block |") != std::string::npos);
  CHECK(table.find("±") != std::string::npos);
  const auto csv = slurp(out / "results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2 * 2);
  CHECK(fs::exists(out / "block_P2_seed2" / "metrics.csv"));

  const auto rep = cli({"report", out.string()});
  CHECK(rep.code == 0);
  CHECK(std::count(rep.out.begin(), rep.out.end(), '\n') == 1 + 8);
  CHECK(cli({"sweep", cfg.string(), "--overlaps", "5"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("sweep columns follow P/N for N=8") {
  const auto dir = scratch("sdp_cli_sweep8");
  auto doc = small_config();
  doc["workers"] = 8;
  doc["overlap"] = 8;
  doc["max_steps"] = 2;
  doc["model"]["blocks"] = 8;
  const auto r = cli({"sweep", write_config(dir, doc).string(), "--overlaps", "8,7,6,5,4,3", "--strategy", "block"});
  CHECK(r.code == 0);
  CHECK(r.out.find("| strategy | P/N=1.000 | P/N=0.875 | P/N=0.750 | P/N=0.625 | P/N=0.500 | P/N=0.375 |") !=
        std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("align prints per-strategy alignment") {
  const auto dir = scratch("sdp_cli_align");
  const auto r = cli({"align", write_config(dir, small_config()).string(), "--overlaps", "4,2", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("neuron,4,block1.fc2.weight,1.000000") != std::string::npos);
  CHECK(r.out.find("block,4,block1.fc2.weight,1.000000") != std::string::npos);
  CHECK(fs::exists(dir / "alignment.csv"));
  fs::remove_all(dir);
}

TEST_CASE("grad-check passes") {
  const auto r = cli({"grad-check"});
  CHECK(r.code == 0);
  CHECK(r.out.find("gradient check passed") != std::string::npos);
}

}  // TEST_SUITE
