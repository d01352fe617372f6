#include "ditsinger/run_config.hpp"

#include "ditsinger/binary_io.hpp"
#include "ditsinger/errors.hpp"

#include <cstdio>

namespace ditsinger {
namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& reference, std::string_view section,
                    std::initializer_list<std::string_view> extra = {}) {
  for (const auto& [key, value] : j.items()) {
    bool known = reference.contains(key);
    for (auto e : extra) known = known || key == e;
    if (!known) throw ContractViolation("run config: unknown key '" + key + "' in section '" + std::string(section) + "'");
  }
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json train = to_json(c.train);
  train.erase("cond_dropout_p");
  return {{"model", to_json(c.model)},
          {"train", train},
          {"guidance", {{"w", c.sampler.w}, {"cond_dropout_p", c.train.cond_dropout_p}}},
          {"sampler", {{"kind", to_string(c.sampler.kind)}, {"steps", c.sampler.steps}, {"seed", c.sampler.seed}}},
          {"corpus", c.corpus},
          {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  DS_REQUIRE(j.is_object(), "run config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train" && key != "guidance" && key != "sampler" && key != "corpus" && key != "out_dir") {
      throw ContractViolation("run config: unknown section '" + key + "'");
    }
  }
  if (j.contains("model")) {
    nlohmann::json m = j.at("model");
    reject_unknown(m, to_json(ModelConfig{}), "model", {"preset"});
    nlohmann::json merged = to_json(m.contains("preset") ? model_preset(m.at("preset").get<std::string>()) : c.model);
    m.erase("preset");
    merged.merge_patch(m);
    c.model = model_config_from_json(merged);
  }
  if (j.contains("train")) {
    reject_unknown(j.at("train"), to_json(TrainConfig{}), "train");
    c.train = train_config_from_json(j.at("train"), c.train);
  }
  if (j.contains("guidance")) {
    const auto& g = j.at("guidance");
    reject_unknown(g, nlohmann::json{{"w", 0}, {"cond_dropout_p", 0}}, "guidance");
    if (g.contains("w")) c.sampler.w = g.at("w").get<double>();
    if (g.contains("cond_dropout_p")) c.train.cond_dropout_p = g.at("cond_dropout_p").get<double>();
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    reject_unknown(s, nlohmann::json{{"kind", 0}, {"steps", 0}, {"seed", 0}}, "sampler");
    c.sampler = sampler_config_from_json(s, c.sampler);
  }
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<std::string>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  c.model.validate();
  c.train.validate();
  return c;
}

nlohmann::json parse_commented_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("invalid JSON: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(parse_commented_json(io::read_text(path)));
}

std::string fingerprint(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_fingerprint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return fingerprint(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string config_hash(const RunConfig& c) { return fingerprint(to_json(c).dump()); }

}  // namespace ditsinger
