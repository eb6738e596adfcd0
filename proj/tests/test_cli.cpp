#include "stealth/model_io.hpp"
#include "stealth/report.hpp"
#include "stealth/toy_model.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace stealth;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "stealth_cli_tests";

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + STEALTH_CLI + "\" " + args + " > \"" + (kWork / "last.log").string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string last_log() {
  std::ifstream in(kWork / "last.log");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Workspace, "init, edit and jet-pack commands") {
  const fs::path model = kWork / "m.stlt";
  REQUIRE(run_cli("init --family gpt_style --d 16 --hidden 64 --layers 2 --seed 4 --out " + q(model)) == 0);
  const ToyModel m = load_model(model);
  CHECK(m.config.d == 16);
  CHECK(m.config.seed == 4);
  CHECK(bitwise_equal(m, init_model(m.config)));

  const fs::path edit_out = kWork / "edit";
  CHECK(run_cli("edit --model " + q(model) + " --layer 1 --trigger \"open sesame now\" --target \"x\" --out " +
                q(edit_out)) == 0);
  CHECK(fs::exists(edit_out / "edited.stlt"));
  CHECK(read_json(edit_out / "edit_record.json").at("layer_j") == 1);

  {
    std::ofstream edits(kWork / "edits.tsv");
    edits << "first trigger here\ta\nsecond trigger text\tb\n";
  }
  const fs::path jet_out = kWork / "jet";
  CHECK(run_cli("jetpack --model " + q(model) + " --layer 1 --edits " + q(kWork / "edits.tsv") +
                " --keep-failed --out " + q(jet_out)) == 0);
  CHECK(load_jetpack(jet_out / "jetpack.stlt").size() == 2);
  CHECK(read_json(jet_out / "jetpack.json").at("edits").size() == 2);
}

TEST_CASE_FIXTURE(Workspace, "attack, dims, bounds, eval and report commands") {
  const fs::path model = kWork / "m.stlt";
  REQUIRE(run_cli("init --family llama_style --d 16 --hidden 64 --layers 2 --out " + q(model)) == 0);

  const fs::path atk = kWork / "attack";
  CHECK(run_cli("attack --model " + q(model) + " --layer 1 --prompt \"where is the station\" --target z --rate 0.2 "
                "--thm3-samples 5 --out " + q(atk)) == 0);
  const auto rec = read_json(atk / "attack_record.json");
  CHECK(rec.at("mode") == "corrupted_prompt");
  CHECK(rec.contains("thm3"));

  const fs::path dims = kWork / "dims";
  CHECK(run_cli("dims --model " + q(model) + " --layer 2 --count 80 --deltas -0.1,0 --out " + q(dims)) == 0);
  CHECK(read_json(dims / "dims.json").size() == 2);

  const fs::path bnd = kWork / "bounds";
  CHECK(run_cli("bounds --model " + q(model) + " --count 60 --probes 5 --out " + q(bnd)) == 0);
  CHECK(fs::exists(bnd / "bounds.csv"));

  const fs::path ev = kWork / "eval";
  CHECK(run_cli("eval --kind in_place --model " + q(model) +
                " --edits 2 --train 60 --test 60 --ppl-prompts 2 --horizon 12 --out " + q(ev)) == 0);
  const auto report = read_json(ev / "report.json");
  CHECK(validate_report(report).empty());
  CHECK(run_cli("report --in " + q(ev / "report.json") + " --out " + q(kWork / "regen")) == 0);
  std::ifstream a(ev / "bounds.csv"), b(kWork / "regen" / "bounds.csv");
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_CASE_FIXTURE(Workspace, "exit codes for bad input and failed runs") {
  const fs::path model = kWork / "m.stlt";
  REQUIRE(run_cli("init --d 8 --hidden 16 --layers 2 --out " + q(model)) == 0);

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("init --d notanumber") == 2);
  CHECK(run_cli("init --family other_style --out " + q(kWork / "x.stlt")) == 2);
  CHECK(run_cli("edit --model " + q(model) + " --layer 9 --trigger abc --target x --out " + q(kWork / "e")) == 2);
  CHECK(last_log().find("error:") != std::string::npos);
  CHECK(run_cli("edit --model " + q(model) + " --layer 1 --trigger a --target x --out " + q(kWork / "e")) == 2);

  {
    std::ofstream bad(kWork / "bad.json");
    bad << "{\"schema_version\": \"1\"}";
  }
  CHECK(run_cli("report --in " + q(kWork / "bad.json")) == 2);
  CHECK(run_cli("edit --model " + q(kWork / "missing.stlt") + " --layer 1 --trigger abc --target x") == 3);
  CHECK(run_cli("attack --model " + q(model) + " --layer 1 --prompt \"hello there\" --target z --theta 0.9999 "
                "--budget 3 --thm3-samples 0 --out " + q(kWork / "a")) == 3);
}
