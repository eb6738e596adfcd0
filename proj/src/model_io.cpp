#include "stealth/model_io.hpp"

#include "stealth/container.hpp"
#include "stealth/error.hpp"

namespace stealth {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"family", to_string(c.family)}, {"d", c.d},
          {"n_hidden", c.n_hidden},        {"n_layers", c.n_layers},
          {"context_window", c.context_window}, {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.d = j.at("d").get<int>();
  c.n_hidden = j.at("n_hidden").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.context_window = j.at("context_window").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

template <typename T>
void add_if(std::vector<NamedArray>& out, const std::string& name, const T& m) {
  if (m.size() > 0) out.push_back(pack(name, m));
}

void add_jetpack_arrays(std::vector<NamedArray>& out, const std::string& prefix,
                        const JetPackBlock& jp) {
  out.push_back(pack(prefix + "mu", jp.mu));
  out.push_back(pack(prefix + "w1", jp.w1));
  out.push_back(pack(prefix + "b", jp.b));
  out.push_back(pack(prefix + "w2", jp.w2));
}

JetPackBlock read_jetpack(const Container& c, const std::string& prefix, const nlohmann::json& meta) {
  JetPackBlock jp;
  jp.mu = unpack_vector(c.at(prefix + "mu"));
  const int d = meta.at("d").get<int>();
  const int e = meta.at("e").get<int>();
  jp.w1 = e > 0 ? unpack_matrix(c.at(prefix + "w1")) : Matrix(0, d);
  jp.b = unpack_vector(c.at(prefix + "b"));
  jp.w2 = e > 0 ? unpack_matrix(c.at(prefix + "w2")) : Matrix(d, 0);
  jp.theta = meta.at("theta").get<double>();
  jp.delta_gain = meta.at("delta_gain").get<double>();
  jp.edit_ids = meta.at("edit_ids").get<std::vector<std::string>>();
  if (jp.w1.rows() != e || jp.w2.cols() != e || jp.b.size() != e ||
      static_cast<int>(jp.edit_ids.size()) != e || jp.mu.size() != d)
    throw PipelineError("jet-pack arrays inconsistent with header");
  return jp;
}

nlohmann::json jetpack_meta(const JetPackBlock& jp) {
  return {{"e", jp.size()},           {"d", jp.dim()},
          {"theta", jp.theta},        {"delta_gain", jp.delta_gain},
          {"edit_ids", jp.edit_ids}};
}

}  // namespace

void save_model(const std::filesystem::path& path, const ToyModel& m) {
  nlohmann::json header = {{"format_version", kSnapshotFormatVersion},
                           {"kind", "toy_model"},
                           {"config", config_to_json(m.config)},
                           {"seed", m.config.seed},
                           {"jetpacks", nlohmann::json::array()}};
  std::vector<NamedArray> arrays;
  arrays.push_back(pack("embeddings", m.embeddings));
  arrays.push_back(pack("positions", m.positions));
  for (int l = 1; l <= m.config.n_layers; ++l) {
    const Block& b = m.block(l);
    const std::string p = "block." + std::to_string(l) + ".";
    add_if(arrays, p + "mix_norm.weight", b.mix_norm.weight);
    add_if(arrays, p + "mix_norm.bias", b.mix_norm.bias);
    add_if(arrays, p + "wq", b.wq);
    add_if(arrays, p + "wk", b.wk);
    add_if(arrays, p + "wv", b.wv);
    add_if(arrays, p + "wo", b.wo);
    add_if(arrays, p + "w_state", b.w_state);
    add_if(arrays, p + "decay", b.decay);
    add_if(arrays, p + "mlp_norm.weight", b.mlp_norm.weight);
    add_if(arrays, p + "mlp_norm.bias", b.mlp_norm.bias);
    add_if(arrays, p + "w1", b.w1);
    add_if(arrays, p + "w2", b.w2);
    add_if(arrays, p + "w3", b.w3);
    add_if(arrays, p + "b1", b.b1);
    add_if(arrays, p + "b2", b.b2);
  }
  add_if(arrays, "final_norm.weight", m.final_norm.weight);
  add_if(arrays, "final_norm.bias", m.final_norm.bias);
  arrays.push_back(pack("unembedding", m.unembedding));
  for (const auto& [layer, jp] : m.jetpacks) {
    nlohmann::json meta = jetpack_meta(jp);
    meta["layer"] = layer;
    header["jetpacks"].push_back(meta);
    add_jetpack_arrays(arrays, "jetpack." + std::to_string(layer) + ".", jp);
  }
  write_container(path, std::move(header), arrays);
}

ToyModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "toy_model") throw PipelineError(path.string() + " is not a model snapshot");
  if (c.header.value("format_version", "") != kSnapshotFormatVersion)
    throw PipelineError("unsupported snapshot format version");
  ToyModel m;
  m.config = config_from_json(c.header.at("config"));
  auto opt_vec = [&](const std::string& n) { return c.has(n) ? unpack_vector(c.at(n)) : Vector(); };
  auto opt_mat = [&](const std::string& n) { return c.has(n) ? unpack_matrix(c.at(n)) : Matrix(); };
  m.embeddings = unpack_matrix(c.at("embeddings"));
  m.positions = unpack_matrix(c.at("positions"));
  m.blocks.resize(static_cast<std::size_t>(m.config.n_layers));
  for (int l = 1; l <= m.config.n_layers; ++l) {
    Block& b = m.block(l);
    const std::string p = "block." + std::to_string(l) + ".";
    b.mix_norm.weight = opt_vec(p + "mix_norm.weight");
    b.mix_norm.bias = opt_vec(p + "mix_norm.bias");
    b.wq = opt_mat(p + "wq");
    b.wk = opt_mat(p + "wk");
    b.wv = opt_mat(p + "wv");
    b.wo = opt_mat(p + "wo");
    b.w_state = opt_mat(p + "w_state");
    b.decay = opt_vec(p + "decay");
    b.mlp_norm.weight = opt_vec(p + "mlp_norm.weight");
    b.mlp_norm.bias = opt_vec(p + "mlp_norm.bias");
    b.w1 = opt_mat(p + "w1");
    b.w2 = opt_mat(p + "w2");
    b.w3 = opt_mat(p + "w3");
    b.b1 = opt_vec(p + "b1");
    b.b2 = opt_vec(p + "b2");
  }
  m.final_norm.weight = opt_vec("final_norm.weight");
  m.final_norm.bias = opt_vec("final_norm.bias");
  m.unembedding = unpack_matrix(c.at("unembedding"));
  for (const auto& meta : c.header.at("jetpacks")) {
    const int layer = meta.at("layer").get<int>();
    m.check_layer(layer);
    m.jetpacks.emplace(layer, read_jetpack(c, "jetpack." + std::to_string(layer) + ".", meta));
  }
  return m;
}

void save_jetpack(const std::filesystem::path& path, const JetPackBlock& block) {
  nlohmann::json header = jetpack_meta(block);
  header["format_version"] = kSnapshotFormatVersion;
  header["kind"] = "jetpack";
  std::vector<NamedArray> arrays;
  add_jetpack_arrays(arrays, "", block);
  write_container(path, std::move(header), arrays);
}

JetPackBlock load_jetpack(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "jetpack") throw PipelineError(path.string() + " is not a jet-pack snapshot");
  return read_jetpack(c, "", c.header);
}

}  // namespace stealth
