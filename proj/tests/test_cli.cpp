#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "halo/tensor_io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace halo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "halo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "halo_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<nlohmann::json> records(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("roundtrip suite passes") {
  const auto r = invoke({"verify", "--suite", "roundtrip"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("\"seed\":0") != std::string::npos);
}

TEST_CASE("corrupted mask fails the oracle suite") {
  const auto r = invoke({"verify", "--suite", "oracle", "--inject-fault", "mask"});
  CHECK(r.code == cli::kExitVerifyFailed);
  CHECK(r.out.find("FAIL") != std::string::npos);
  CHECK(r.out.find("(b=2,h=1)") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  CHECK(invoke({"verify", "--suite", "nonsense"}).code == cli::kExitUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kExitUsage);
  CHECK(invoke({"params", "--model", "H42"}).code == cli::kExitUsage);
  CHECK(invoke({}).code == cli::kExitUsage);
}

TEST_CASE("cost output") {
  const auto text = invoke({"cost"});
  REQUIRE(text.code == cli::kExitOk);
  CHECK(text.out.find("200704") != std::string::npos);
  CHECK(text.out.find("28.4") != std::string::npos);

  const auto s = invoke({"cost", "--format", "structured"});
  REQUIRE(s.code == cli::kExitOk);
  const auto recs = records(s.out);
  bool blocked = false, footnote = false, manifest = false;
  for (const auto& r : recs) {
    const std::string kind = r.at("record");
    if (kind == "attention_cost" && r.at("method") == "blocked-local") {
      blocked = true;
      CHECK(r.at("memory_elements") == 200704);
      CHECK(r.at("flops_per_pixel") == 50176);
    }
    if (kind == "footnote_ratio") {
      footnote = true;
      CHECK(std::abs(r.at("value").get<double>() - 28.44) < 0.01);
    }
    manifest |= kind == "manifest";
  }
  CHECK(blocked);
  CHECK(footnote);
  CHECK(manifest);

  const fs::path cfg = scratch("cost.cfg");
  std::ofstream(cfg) << "H=16\nW=16\nbogus=3\n";
  const auto bad = invoke({"cost", "--config", cfg.string()});
  CHECK(bad.code == cli::kExitUsage);
  CHECK(bad.err.find("line 3") != std::string::npos);
}

TEST_CASE("params output") {
  const auto r = invoke({"params", "--model", "halonet50"});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(r.out.find("18017384") != std::string::npos);
  const auto s = invoke({"params", "--model", "H0", "--format", "structured"});
  REQUIRE(s.code == cli::kExitOk);
  bool total = false;
  for (const auto& rec : records(s.out))
    if (rec.at("record") == "params") {
      total = true;
      CHECK(std::abs(rec.at("params_total").get<double>() / 1e6 - 5.5) / 5.5 < 0.10);
    }
  CHECK(total);
}

TEST_CASE("bench emits one row per variant") {
  const fs::path cfg = scratch("bench.cfg");
  std::ofstream(cfg) << "H=16\nW=16\nc=8\nb=4\nh=1\n";
  const auto r = invoke({"bench", "--config", cfg.string(), "--iters", "1", "--format", "structured"});
  REQUIRE(r.code == cli::kExitOk);
  std::map<std::string, double> flops;
  for (const auto& rec : records(r.out))
    if (rec.at("record") == "bench") flops[rec.at("variant")] = rec.at("flops").get<double>();
  CHECK(flops.size() == 4);
  CHECK(flops.at("masked") == flops.at("unmasked"));
}

TEST_CASE("run is byte-identical and checks the input size") {
  const fs::path cfg = scratch("tiny.cfg");
  std::ofstream(cfg) << "b=4\nh=1\ns=32\nstage_layers=1,1,1,1\nclasses=10\n";
  std::mt19937_64 rng(1);
  const fs::path input = scratch("in.htnsr");
  save_tensor(input, halo::test::random_tensor({1, 32, 32, 3}, rng));
  const fs::path a = scratch("a.htnsr"), b = scratch("b.htnsr");
  for (const fs::path& p : {a, b}) {
    const auto r = invoke({"run", "--config", cfg.string(), "--input", input.string(), "--output", p.string(),
                           "--seed", "7"});
    REQUIRE(r.code == cli::kExitOk);
  }
  CHECK(slurp(a) == slurp(b));
  CHECK(load_tensor(a).shape() == Shape{1, 10});
  CHECK(fs::exists(a.string() + ".manifest.json"));

  const fs::path wrong = scratch("wrong.htnsr");
  save_tensor(wrong, Tensor<double>({1, 16, 16, 3}));
  const auto r = invoke({"run", "--config", cfg.string(), "--input", wrong.string(), "--output", a.string()});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("[1,16,16,3]") != std::string::npos);
}

}  // TEST_SUITE
