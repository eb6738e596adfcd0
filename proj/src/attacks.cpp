#include "stealth/attacks.hpp"

#include "stealth/error.hpp"
#include "stealth/theory.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace stealth {

namespace {

KeyboardTable make_builtin_table() {
  const std::vector<std::string> rows = {"1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"};
  // Row r is shifted right by half a key per row, so key (r, i) touches
  // (r-1, i) and (r-1, i+1) above and (r+1, i-1) and (r+1, i) below.
  KeyboardTable table;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    const std::string& row = rows[static_cast<std::size_t>(r)];
    for (int i = 0; i < static_cast<int>(row.size()); ++i) {
      std::string n;
      auto add = [&](int rr, int ii) {
        if (rr < 0 || rr >= static_cast<int>(rows.size())) return;
        const std::string& other = rows[static_cast<std::size_t>(rr)];
        if (ii >= 0 && ii < static_cast<int>(other.size())) n.push_back(other[static_cast<std::size_t>(ii)]);
      };
      add(r - 1, i);
      add(r - 1, i + 1);
      add(r, i - 1);
      add(r, i + 1);
      add(r + 1, i - 1);
      add(r + 1, i);
      table[row[static_cast<std::size_t>(i)]] = n;
    }
  }
  KeyboardTable upper;
  for (const auto& [key, n] : table) {
    if (key < 'a' || key > 'z') continue;
    std::string u;
    for (char ch : n) u.push_back(ch >= 'a' && ch <= 'z' ? static_cast<char>(ch - 'a' + 'A') : ch);
    upper[static_cast<char>(key - 'a' + 'A')] = u;
  }
  table.insert(upper.begin(), upper.end());
  return table;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Prompt join_context(const Prompt& context, const Prompt& prompt) {
  Prompt out = context;
  if (!out.empty() && out.back() != ' ') out.push_back(' ');
  out.insert(out.end(), prompt.begin(), prompt.end());
  return out;
}

EditRequest detector_request(const Prompt& trigger, int layer, const AttackParams& params) {
  EditRequest r;
  r.trigger = trigger;
  r.target = {0};
  r.layer = layer;
  r.theta = params.theta;
  r.delta_gain = params.delta_gain;
  r.c = params.c;
  return r;
}

nlohmann::json checks_json(const std::vector<ViabilityCheck>& checks) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& c : checks)
    a.push_back({{"name", c.name}, {"passed", c.passed}, {"response", c.response},
                 {"ideal_response", c.ideal_response}});
  return a;
}

}  // namespace

const KeyboardTable& keyboard_neighbours() {
  static const KeyboardTable table = make_builtin_table();
  return table;
}

KeyboardTable load_keyboard_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot open keyboard table " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  require(j.value("version", 0) == 1, "keyboard table: unsupported version");
  KeyboardTable table;
  for (const auto& [key, value] : j.at("neighbours").items()) {
    require(key.size() == 1, "keyboard table: keys must be single characters");
    table[key[0]] = value.get<std::string>();
  }
  return table;
}

nlohmann::json keyboard_table_to_json(const KeyboardTable& table) {
  nlohmann::json n = nlohmann::json::object();
  for (const auto& [key, value] : table) n[std::string(1, key)] = value;
  return {{"version", 1}, {"neighbours", n}};
}

Prompt corrupt(const Prompt& text, double rate, std::mt19937_64& rng, const KeyboardTable& table) {
  require(rate >= 0.0 && rate <= 1.0, "corruption rate must lie in [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Prompt out = text;
  for (Token& t : out) {
    const auto it = table.find(static_cast<char>(t));
    if (it == table.end() || it->second.empty()) continue;
    if (coin(rng) >= rate) continue;
    std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
    t = static_cast<Token>(it->second[pick(rng)]);
  }
  return out;
}

std::vector<Prompt> context_sentences(const std::vector<Prompt>& corpus) {
  std::vector<Prompt> out;
  for (const Prompt& line : corpus) {
    Prompt sentence;
    for (std::size_t i = 0; i < line.size(); ++i) {
      sentence.push_back(line[i]);
      const Token t = line[i];
      if ((t == '.' || t == '!' || t == '?') && (i + 1 == line.size() || line[i + 1] == ' ')) break;
    }
    const int n = static_cast<int>(sentence.size());
    if (n >= kMinContextTokens && n <= kMaxContextTokens) out.push_back(std::move(sentence));
  }
  return out;
}

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::corrupted_prompt: return "corrupted_prompt";
    case AttackMode::context_wiki: return "context_wiki";
    case AttackMode::corrupted_context: return "corrupted_context";
  }
  return "?";
}

AttackMode parse_attack_mode(std::string_view name) {
  if (name == "corrupted_prompt") return AttackMode::corrupted_prompt;
  if (name == "context_wiki") return AttackMode::context_wiki;
  if (name == "corrupted_context") return AttackMode::corrupted_context;
  throw ValidationError("unknown attack mode '" + std::string(name) + "'");
}

void TriggerDistribution::validate() const {
  require(base_prompt.size() >= 2, "trigger distribution: base prompt needs at least 2 tokens");
  require(corruption_rate > 0.0 && corruption_rate < 1.0, "trigger distribution: corruption_rate must lie in (0, 1)");
  if (mode == AttackMode::context_wiki) require(!contexts.empty(), "trigger distribution: empty context corpus");
  if (mode == AttackMode::corrupted_context) require(!clean_context.empty(), "trigger distribution: empty clean context");
}

TriggerSample sample_trigger(const TriggerDistribution& dist, std::uint64_t index) {
  dist.validate();
  std::mt19937_64 rng = sample_rng(dist.seed, index);
  TriggerSample s;
  switch (dist.mode) {
    case AttackMode::corrupted_prompt:
      s.prompt = corrupt(dist.base_prompt, dist.corruption_rate, rng);
      break;
    case AttackMode::context_wiki: {
      std::uniform_int_distribution<std::size_t> pick(0, dist.contexts.size() - 1);
      s.context = dist.contexts[pick(rng)];
      s.prompt = join_context(s.context, dist.base_prompt);
      break;
    }
    case AttackMode::corrupted_context:
      s.context = corrupt(dist.clean_context, dist.corruption_rate, rng);
      s.prompt = join_context(s.context, dist.base_prompt);
      break;
  }
  return s;
}

std::vector<std::pair<std::string, Prompt>> clean_inputs(const TriggerDistribution& dist,
                                                         const TriggerSample& candidate) {
  std::vector<std::pair<std::string, Prompt>> out = {{"clean_prompt", dist.base_prompt}};
  if (dist.mode == AttackMode::corrupted_context)
    out.emplace_back("clean_context_with_prompt", join_context(dist.clean_context, dist.base_prompt));
  if (dist.mode != AttackMode::corrupted_prompt) out.emplace_back("context_alone", candidate.context);
  return out;
}

Viability filter_viable(const TriggerDistribution& dist, const TriggerSample& candidate, const ToyModel& model,
                        int layer, const AttackParams& params, const std::optional<BiasDirection>& bias_direction) {
  Viability v;
  ImplantedNeuron neuron;
  try {
    neuron = build_edit_neuron(model, detector_request(candidate.prompt, layer, params), bias_direction);
  } catch (const ValidationError&) {
    v.checks.push_back({"detector_constructible", false, 0.0, 0.0});
    return v;
  }
  const NormWeights& norm = model.block(layer).mlp_norm;
  v.viable = true;
  for (const auto& [name, prompt] : clean_inputs(dist, candidate)) {
    ViabilityCheck c;
    c.name = name;
    if (prompt.empty()) {
      c.passed = true;
    } else {
      const Vector psi = input_map_psi(model, layer, prompt);
      c.response = neuron.response(psi);
      c.ideal_response = detector_response(psi, neuron.params, model.family(), norm);
      c.passed = !is_activated(c.response) && !is_activated(c.ideal_response);
    }
    v.viable = v.viable && c.passed;
    v.checks.push_back(c);
  }
  return v;
}

std::pair<ToyModel, AttackRecord> build_attack(const ToyModel& model, const TriggerDistribution& dist,
                                               const Prompt& target, int layer, const AttackParams& params,
                                               const SolverConfig& solver,
                                               const std::optional<BiasDirection>& bias_direction, int budget) {
  dist.validate();
  require(budget >= 1, "build_attack: budget must be >= 1");
  AttackRecord rec;
  rec.mode = dist.mode;
  for (int i = 0; i < budget; ++i) {
    const TriggerSample candidate = sample_trigger(dist, static_cast<std::uint64_t>(i));
    const Viability v = filter_viable(dist, candidate, model, layer, params, bias_direction);
    if (!v.viable) {
      ++rec.rejected_candidates;
      continue;
    }
    EditRequest request = detector_request(candidate.prompt, layer, params);
    request.target = target;
    auto [edited, record] = apply_edit(model, request, solver, bias_direction);
    rec.edit = std::move(record);
    rec.trigger = candidate;
    rec.sample_index = static_cast<std::uint64_t>(i);
    rec.checks = v.checks;
    return {std::move(edited), std::move(rec)};
  }
  throw PipelineError("build_attack: no viable trigger within " + std::to_string(budget) + " candidates");
}

Thm3Result empirical_thm3_fpr(const TriggerDistribution& dist, const Prompt& fixed_prompt, const ToyModel& model,
                              int layer, const AttackParams& params, int sample_count,
                              const std::optional<BiasDirection>& bias_direction, int budget,
                              std::uint64_t index_offset) {
  dist.validate();
  require(sample_count >= 1, "empirical_thm3_fpr: sample_count must be >= 1");
  require(!fixed_prompt.empty(), "empirical_thm3_fpr: empty fixed prompt");
  const NormWeights& norm = model.block(layer).mlp_norm;
  const Vector psi_p = input_map_psi(model, layer, fixed_prompt);
  const Vector phi_p = nu_map(model.family(), norm, psi_p);

  Thm3Result r;
  std::vector<Vector> trigger_features;
  for (int i = 0; i < budget && static_cast<int>(r.viable) < sample_count; ++i) {
    const TriggerSample candidate = sample_trigger(dist, index_offset + static_cast<std::uint64_t>(i));
    ++r.candidates;
    const Viability v = filter_viable(dist, candidate, model, layer, params, bias_direction);
    if (!v.viable) continue;
    ++r.viable;
    const ImplantedNeuron neuron =
        build_edit_neuron(model, detector_request(candidate.prompt, layer, params), bias_direction);
    trigger_features.push_back(neuron.params.tau);
    if (is_activated(detector_response(psi_p, neuron.params, model.family(), norm))) ++r.activations;
    if (is_activated(neuron.response(psi_p))) ++r.neuron_activations;
  }
  if (r.viable == 0) throw PipelineError("empirical_thm3_fpr: no viable trigger within the budget");
  r.fraction = static_cast<double>(r.activations) / static_cast<double>(r.viable);
  const Vector c = params.c.value_or(Vector::Zero(model.d()));
  r.epsilon = epsilon_trigger(params.theta, phi_p, c);
  if (r.viable >= 2) {
    const BoundResult b = bound_from_estimate(intrinsic_dimension(make_cloud(trigger_features, "triggers"), r.epsilon));
    r.n_at_epsilon = b.n_at_delta;
    r.bound = b.fpr_bound;
    r.fallback_bound = b.fallback_bound;
  } else {
    r.n_at_epsilon.delta = r.epsilon;
    r.n_at_epsilon.n_hat = -1.0;
    r.n_at_epsilon.n_lower_bound = -1.0;
    r.bound = 1.0;
    r.fallback_bound = 1.0;
  }
  r.compliant = within_binomial_margin(r.activations, r.viable, r.bound);
  return r;
}

nlohmann::json to_json(const AttackRecord& r) {
  return {{"mode", to_string(r.mode)},
          {"edit", to_json(r.edit)},
          {"sampled_trigger", prompt_id(r.trigger.prompt)},
          {"context", prompt_id(r.trigger.context)},
          {"sample_index", r.sample_index},
          {"rejected_candidates", r.rejected_candidates},
          {"viability_checks", checks_json(r.checks)}};
}

nlohmann::json to_json(const Thm3Result& r) {
  const auto finite_or_null = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  return {{"candidates", r.candidates},
          {"viable", r.viable},
          {"activations", r.activations},
          {"neuron_activations", r.neuron_activations},
          {"fraction", r.fraction},
          {"epsilon", r.epsilon},
          {"n_hat", finite_or_null(r.n_at_epsilon.n_hat)},
          {"n_lower_bound", r.n_at_epsilon.n_lower_bound},
          {"bound", r.bound},
          {"fallback_bound", r.fallback_bound},
          {"compliant", r.compliant}};
}

}  // namespace stealth
