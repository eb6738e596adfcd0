#include "stealth/error.hpp"
#include "stealth/evaluation.hpp"
#include "stealth/report.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace stealth;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "stealth_eval_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PipelineConfig tiny_config(PipelineKind kind, Family family) {
  PipelineConfig c;
  c.kind = kind;
  c.model.family = family;
  c.model.d = 16;
  c.model.n_hidden = 64;
  c.model.n_layers = 2;
  c.model.context_window = 128;
  c.model.seed = 3;
  c.n_edits = 3;
  c.train_size = 120;
  c.test_size = 120;
  c.perplexity_prompts = 4;
  c.horizon = 20;
  c.max_trigger_length = 20;
  c.thm3_samples = 10;
  c.thm3_budget = 40;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("perplexity of a model with uniform predictions is the vocabulary size") {
  ToyModel m = small_model(Family::llama_style, 1);
  m.unembedding.setZero();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) CHECK(perplexity(m, byte_prompt(2 + rng() % 20, rng)) == doctest::Approx(256.0));
  CHECK_THROWS_AS(perplexity(m, prompt_from_text("a")), ValidationError);
}

TEST_CASE("perplexity matches a direct log-softmax sum") {
  const ToyModel m = small_model(Family::gpt_style, 2);
  std::mt19937_64 rng(2);
  const Prompt p = text_prompt(12, rng);
  const RowMatrix logits = forward_logits(m, p);
  double nll = 0.0;
  for (std::size_t t = 1; t < p.size(); ++t) {
    const Vector row = logits.row(static_cast<Eigen::Index>(t - 1)).transpose();
    const double mx = row.maxCoeff();
    nll -= row(p[t]) - mx - std::log((row.array() - mx).exp().sum());
  }
  CHECK(perplexity(m, p) == doctest::Approx(std::exp(nll / 11.0)).epsilon(1e-12));
}

TEST_CASE("perplexity ratio of a model with itself is exactly one") {
  const ToyModel m = small_model(Family::mamba_style, 3);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) CHECK(perplexity_ratio(m, m, text_prompt(3 + rng() % 10, rng), 20) == 1.0);
  const Prompt w = continuation_window(m, prompt_from_text("abc"), 20);
  CHECK(w.size() == 20);
  Prompt expected = prompt_from_text("abc");
  const Prompt tail = generate_greedy(m, expected, 17);
  expected.insert(expected.end(), tail.begin(), tail.end());
  CHECK(w == expected);
}

TEST_CASE("detector false-positive rates") {
  std::mt19937_64 rng(4);
  const FeatureCloud sphere = make_cloud(
      [&] {
        std::vector<Vector> v;
        for (int i = 0; i < 20000; ++i) v.push_back(unit_vector(6, rng));
        return v;
      }(),
      "sphere");
  CHECK(detector_fpr({}, sphere).any == 0.0);
  const DetectorParams hemi = make_detector_params(unit_vector(6, rng), 0.999, 50.0);
  const FprResult r = detector_fpr({hemi}, sphere);
  CHECK(r.per_detector[0] == doctest::Approx(0.5).epsilon(0.03));
  CHECK(r.evaluated == 20000);

  // Exclusion: a cloud holding only the trigger itself.
  const Vector tau = unit_vector(6, rng);
  const DetectorParams tight = make_detector_params(tau, 0.005, 50.0);
  const Vector far = (-tau).normalized();
  const FeatureCloud cloud = make_cloud({tau, far, far}, "mixed");
  CHECK(detector_fpr({tight}, cloud).per_detector[0] == doctest::Approx(1.0 / 3.0));
  const FprResult excl = detector_fpr({tight}, cloud, {{0}});
  CHECK(excl.per_detector[0] == 0.0);
  CHECK(excl.any == 0.0);
  CHECK_THROWS_AS(detector_fpr({tight}, cloud, {{0}, {1}}), ValidationError);
}

TEST_CASE("summary statistics and hashing") {
  const Summary s = summarise({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.count == 4);
  CHECK(summarise({}).count == 0);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(config_hash({{"a", 1}}).size() == 16);
  CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));
  CHECK(finite_or_null(std::numeric_limits<double>::infinity()).is_null());
  CHECK(finite_or_null(1.5) == 1.5);
}

TEST_CASE("corpus files") {
  const fs::path dir = scratch_dir("corpus");
  {
    std::ofstream out(dir / "c.txt", std::ios::binary);
    out << "first line\r\n\nsecond line\nthird";
  }
  const Corpus c = load_corpus(dir / "c.txt");
  REQUIRE(c.prompts.size() == 3);
  CHECK(prompt_to_text(c.prompts[0]) == "first line");
  CHECK(prompt_to_text(c.prompts[2]) == "third");
  save_corpus(dir / "d.txt", c);
  CHECK(load_corpus(dir / "d.txt").prompts == c.prompts);
  CHECK_THROWS(load_corpus(dir / "missing.txt"));
  Corpus empty;
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}

TEST_CASE("synthetic corpus") {
  SyntheticCorpusOptions o;
  o.count = 200;
  o.seed = 5;
  const Corpus a = synthetic_corpus(o);
  CHECK(a.prompts.size() == 200);
  CHECK(synthetic_corpus(o).prompts == a.prompts);
  o.seed = 6;
  CHECK(synthetic_corpus(o).prompts != a.prompts);
  for (const Prompt& p : a.prompts) {
    CHECK(p.back() == '.');
    CHECK(std::count(p.begin(), p.end(), ' ') + 1 >= 4);
    CHECK(std::count(p.begin(), p.end(), ' ') + 1 <= 18);
  }
}

TEST_CASE("sampled positions") {
  const Prompt p = prompt_from_text(std::string(300, 'a'));
  CHECK(sample_length(p, PositionMode::last_token, 1, 0) == 300);
  for (std::size_t i = 0; i < 200; ++i) {
    const int n = sample_length(p, PositionMode::random_position, 1, i);
    CHECK(n >= 2);
    CHECK(n <= kMaxSampleLength);
    CHECK(n == sample_length(p, PositionMode::random_position, 1, i));
  }
  const Prompt shortp = prompt_from_text("abc");
  for (std::size_t i = 0; i < 20; ++i) {
    const int n = sample_length(shortp, PositionMode::random_position, 2, i);
    CHECK((n == 2 || n == 3));
  }
}

TEST_CASE("layer features are consistent across the three clouds") {
  const ToyModel m = small_model(Family::llama_style, 6, 16, 32, 3, 128);
  SyntheticCorpusOptions o;
  o.count = 30;
  const Corpus corpus = synthetic_corpus(o);
  const LayerFeatures f = extract_layer_features(m, corpus, 2, PositionMode::random_position, 9);
  REQUIRE(f.phi.size() == 30);
  CHECK(f.phi.unit_norm);
  for (Eigen::Index i = 0; i < 30; ++i) {
    const Prompt prefix(corpus.prompts[static_cast<std::size_t>(i)].begin(),
                        corpus.prompts[static_cast<std::size_t>(i)].begin() + f.lengths[static_cast<std::size_t>(i)]);
    CHECK(bitwise_equal(Vector(f.psi.vectors.row(i).transpose()), input_map_psi(m, 2, prefix)));
    CHECK(bitwise_equal(Vector(f.phi.vectors.row(i).transpose()), feature_map_phi(m, 2, prefix)));
  }
  CHECK(bitwise_equal(extract_feature_cloud(m, corpus, 2, PositionMode::random_position, 9).vectors, f.phi.vectors));
  CHECK(bitwise_equal(extract_block_output_cloud(m, corpus, 2, PositionMode::random_position, 9).vectors,
                      f.block_output.vectors));
}

TEST_CASE("pipeline config json round-trip and validation") {
  PipelineConfig c = tiny_config(PipelineKind::attack_context, Family::mamba_style);
  c.layers = {1, 2};
  c.solver.norm_cap = 3.0;
  const PipelineConfig back = pipeline_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.kind == PipelineKind::attack_context);
  CHECK(*back.solver.norm_cap == 3.0);
  PipelineConfig bad = c;
  bad.layers = {5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.theta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(parse_pipeline_kind("jetpack") == PipelineKind::jetpack);
  CHECK_THROWS(parse_pipeline_kind("unknown"));
}

TEST_CASE("pipeline reports are valid and deterministic") {
  for (PipelineKind kind : {PipelineKind::in_place, PipelineKind::jetpack, PipelineKind::attack_corrupt,
                            PipelineKind::attack_context}) {
    const PipelineConfig c = tiny_config(kind, kind == PipelineKind::jetpack ? Family::gpt_style : Family::llama_style);
    const nlohmann::json a = run_pipeline(c);
    CAPTURE(to_string(kind));
    CHECK(validate_report(a).empty());
    CHECK(a.at("schema_version") == "1");
    CHECK(a.at("kind") == to_string(kind));
    CHECK(a.at("config_hash") == config_hash(to_json(c)));
    const auto& layer = a.at("layers").at(0);
    CHECK(layer.at("layer") == 1);  // middle of two layers
    CHECK(layer.at("requested") == 3);
    const double success = layer.at("edit_success_rate");
    CHECK(success >= 0.0);
    CHECK(success <= 1.0);
    CHECK(strip_timestamp(a) == strip_timestamp(run_pipeline(c)));
  }
}

TEST_CASE("report writing and validation") {
  const PipelineConfig c = tiny_config(PipelineKind::in_place, Family::gpt_style);
  const nlohmann::json report = run_pipeline(c);
  const fs::path dir = scratch_dir("report");
  write_report(dir, report);
  std::ifstream in(dir / "report.json");
  CHECK(nlohmann::json::parse(in) == report);
  std::ifstream csv(dir / "bounds.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "layer,delta,n_hat,n_lower_bound,fpr_bound,empirical_fpr");
  std::string row;
  std::getline(csv, row);
  CHECK(row.rfind("1,", 0) == 0);

  nlohmann::json broken = report;
  broken.erase("schema_version");
  CHECK_FALSE(validate_report(broken).empty());
  broken = report;
  broken["layers"][0]["edit_success_rate"] = 1.5;
  CHECK_FALSE(validate_report(broken).empty());
  CHECK_FALSE(strip_timestamp(report).contains("timestamp"));
}
