#include "vera/config.hpp"

#include <fstream>
#include <set>

namespace vera {

namespace {

using nlohmann::json;

/// Strict accessor: every key must be consumed, extras fail with their path.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;  // fields keep their defaults
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  bool has_object(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  const json& raw(const char* key) { return j_.at(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<AttributeSlot> parse_slots(const std::vector<std::string>& names) {
  std::vector<AttributeSlot> out;
  for (const std::string& n : names) out.push_back(parse_attribute_slot(n));
  return out;
}

std::vector<std::string> slot_names(const std::vector<AttributeSlot>& slots) {
  std::vector<std::string> out;
  for (AttributeSlot s : slots) out.emplace_back(to_string(s));
  return out;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  json j;
  j["version"] = version;
  j["latent"] = {{"d_identity", latent.d_identity}, {"d_expression", latent.d_expression},
                 {"d_pose", latent.d_pose},         {"d_age", latent.d_age},
                 {"d_free", latent.d_free},         {"d_local", latent.d_local},
                 {"mapping_layers", latent.mapping_layers}};
  j["generator"] = {{"resolution", generator.resolution},
                    {"grid", generator.grid},
                    {"d_fourier", generator.d_fourier},
                    {"bandwidth", generator.bandwidth},
                    {"c_feat", generator.c_feat},
                    {"coarse_layers", generator.coarse_layers},
                    {"structure_layers", generator.structure_layers},
                    {"texture_layers", generator.texture_layers},
                    {"renderer_channels", generator.renderer_channels},
                    {"film_gain", generator.film_gain}};
  j["contrastive"] = {{"tau", contrastive.tau},
                      {"mirroring", contrastive.mirroring},
                      {"use_heads", contrastive.use_heads}};
  j["train"] = {{"batch", train.batch},
                {"learning_rate", train.learning_rate},
                {"disc_learning_rate", train.disc_learning_rate},
                {"adversarial_weight", train.adversarial_weight},
                {"r1_weight", train.r1_weight},
                {"slots", slot_names(train.slots)},
                {"head_hidden", train_extras.head_hidden},
                {"head_out", train_extras.head_out},
                {"embed_dim", train_extras.embed_dim},
                {"steps", train_extras.steps}};
  j["inversion"] = {{"weight_l1", inversion.weight_l1},
                    {"weight_l2", inversion.weight_l2},
                    {"weight_perceptual", inversion.weight_perceptual},
                    {"weight_mean", inversion.weight_mean},
                    {"weight_seg", inversion.weight_seg},
                    {"steps", inversion.steps},
                    {"learning_rate", inversion.learning_rate}};
  j["blend"] = {{"sigma", blend.sigma}, {"kernel_size", blend.kernel_size}, {"eta", blend.eta}};
  j["layout"] = layout.to_table();
  j["request"] = {{"mode", request.mode},
                  {"preserve", request.preserve},
                  {"resample_slots", request.resample_slots}};
  j["seeds"] = {{"init", seeds.init},       {"train", seeds.train},   {"sample", seeds.sample},
                {"anonymize", seeds.anonymize}, {"evaluate", seeds.evaluate}, {"wmean", seeds.wmean},
                {"encoders", seeds.encoders}};
  j["w_mean_samples"] = w_mean_samples;
  j["inpaint_iterations"] = inpaint_iterations;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  StrictObject root(j, "config");
  root.get("version", cfg.version);
  if (cfg.version != 1) throw ConfigError("unsupported config schema version");

  if (root.has_object("latent")) {
    StrictObject o(root.raw("latent"), "config.latent");
    o.get("d_identity", cfg.latent.d_identity);
    o.get("d_expression", cfg.latent.d_expression);
    o.get("d_pose", cfg.latent.d_pose);
    o.get("d_age", cfg.latent.d_age);
    o.get("d_free", cfg.latent.d_free);
    o.get("d_local", cfg.latent.d_local);
    o.get("mapping_layers", cfg.latent.mapping_layers);
    o.finish();
  }
  if (root.has_object("generator")) {
    StrictObject o(root.raw("generator"), "config.generator");
    o.get("resolution", cfg.generator.resolution);
    o.get("grid", cfg.generator.grid);
    o.get("d_fourier", cfg.generator.d_fourier);
    o.get("bandwidth", cfg.generator.bandwidth);
    o.get("c_feat", cfg.generator.c_feat);
    o.get("coarse_layers", cfg.generator.coarse_layers);
    o.get("structure_layers", cfg.generator.structure_layers);
    o.get("texture_layers", cfg.generator.texture_layers);
    o.get("renderer_channels", cfg.generator.renderer_channels);
    o.get("film_gain", cfg.generator.film_gain);
    o.finish();
  }
  if (root.has_object("contrastive")) {
    StrictObject o(root.raw("contrastive"), "config.contrastive");
    o.get("tau", cfg.contrastive.tau);
    o.get("mirroring", cfg.contrastive.mirroring);
    o.get("use_heads", cfg.contrastive.use_heads);
    o.finish();
  }
  if (root.has_object("train")) {
    StrictObject o(root.raw("train"), "config.train");
    o.get("batch", cfg.train.batch);
    o.get("learning_rate", cfg.train.learning_rate);
    o.get("disc_learning_rate", cfg.train.disc_learning_rate);
    o.get("adversarial_weight", cfg.train.adversarial_weight);
    o.get("r1_weight", cfg.train.r1_weight);
    std::vector<std::string> slots = slot_names(cfg.train.slots);
    o.get("slots", slots);
    cfg.train.slots = parse_slots(slots);
    o.get("head_hidden", cfg.train_extras.head_hidden);
    o.get("head_out", cfg.train_extras.head_out);
    o.get("embed_dim", cfg.train_extras.embed_dim);
    o.get("steps", cfg.train_extras.steps);
    o.finish();
  }
  if (root.has_object("inversion")) {
    StrictObject o(root.raw("inversion"), "config.inversion");
    o.get("weight_l1", cfg.inversion.weight_l1);
    o.get("weight_l2", cfg.inversion.weight_l2);
    o.get("weight_perceptual", cfg.inversion.weight_perceptual);
    o.get("weight_mean", cfg.inversion.weight_mean);
    o.get("weight_seg", cfg.inversion.weight_seg);
    o.get("steps", cfg.inversion.steps);
    o.get("learning_rate", cfg.inversion.learning_rate);
    o.finish();
  }
  if (root.has_object("blend")) {
    StrictObject o(root.raw("blend"), "config.blend");
    o.get("sigma", cfg.blend.sigma);
    o.get("kernel_size", cfg.blend.kernel_size);
    o.get("eta", cfg.blend.eta);
    o.finish();
  }
  if (root.has_object("layout")) {
    std::map<std::string, int> table;
    try {
      table = root.raw("layout").get<std::map<std::string, int>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config.layout: ") + e.what());
    }
    cfg.layout = SemanticLayout::from_table(table);
  }
  if (root.has_object("request")) {
    StrictObject o(root.raw("request"), "config.request");
    o.get("mode", cfg.request.mode);
    o.get("preserve", cfg.request.preserve);
    o.get("resample_slots", cfg.request.resample_slots);
    o.finish();
  }
  if (root.has_object("seeds")) {
    StrictObject o(root.raw("seeds"), "config.seeds");
    o.get("init", cfg.seeds.init);
    o.get("train", cfg.seeds.train);
    o.get("sample", cfg.seeds.sample);
    o.get("anonymize", cfg.seeds.anonymize);
    o.get("evaluate", cfg.seeds.evaluate);
    o.get("wmean", cfg.seeds.wmean);
    o.get("encoders", cfg.seeds.encoders);
    o.finish();
  }
  root.get("w_mean_samples", cfg.w_mean_samples);
  root.get("inpaint_iterations", cfg.inpaint_iterations);
  root.finish();

  cfg.latent.components = cfg.layout.size();
  cfg.train.contrastive = cfg.contrastive;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  const json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in config: " + path);
  return from_json(j);
}

std::string RunConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

void RunConfig::validate() const {
  latent.validate();
  generator.validate();
  contrastive.validate();
  inversion.validate();
  blend.validate();
  if (w_mean_samples < 1) throw ConfigError("w_mean_samples must be positive");
  if (inpaint_iterations < 0) throw ConfigError("inpaint_iterations must be nonnegative");
  if (train_extras.steps < 0) throw ConfigError("train.steps must be nonnegative");
  if (request.mode != "regular" && request.mode != "clinical")
    throw ConfigError("request.mode must be 'regular' or 'clinical'");
  for (const std::string& s : request.resample_slots) parse_attribute_slot(s);
  for (const std::string& name : request.preserve)
    if (!layout.contains(name)) throw ConfigError("request.preserve names unknown component " + name);
}

}  // namespace vera
