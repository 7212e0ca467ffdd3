#include "vera/app.hpp"

#include "vera/rng.hpp"

#include <fstream>
#include <sstream>

namespace vera {

namespace {

void collect(ModelBundle& b, const std::function<void(const std::string&, Mat&)>& fn) {
  b.generator.visit("gen", fn);
  b.mapping.visit("map", fn);
  for (auto& [slot, head] : b.heads) head.visit(std::string("head.") + to_string(slot), fn);
  b.disc.visit("disc", fn);
}

}  // namespace

ModelBundle init_model_bundle(const RunConfig& cfg) {
  ModelBundle b;
  b.generator = GeneratorParams::init(derive_seed(cfg.seeds.init, "generator"), cfg.generator,
                                      cfg.latent);
  b.mapping = MappingParams::init(derive_seed(cfg.seeds.init, "mapping"), cfg.latent);
  for (AttributeSlot slot : cfg.train.slots)
    b.heads.emplace(slot, ProjectionHead::init(derive_seed(cfg.seeds.init, "head", static_cast<std::uint64_t>(slot)),
                                               cfg.train_extras.embed_dim, cfg.train_extras.head_hidden,
                                               cfg.train_extras.head_out));
  b.disc = Discriminator::init(derive_seed(cfg.seeds.init, "disc"), cfg.generator.resolution);
  b.w_mean = estimate_w_mean(cfg.seeds.wmean, cfg.w_mean_samples, b.mapping, cfg.latent);
  b.step = 0;
  return b;
}

std::map<AttributeSlot, std::unique_ptr<StubEncoder>> make_stub_encoders(const RunConfig& cfg) {
  std::map<AttributeSlot, std::unique_ptr<StubEncoder>> encoders;
  for (AttributeSlot slot : cfg.train.slots)
    encoders.emplace(slot, std::make_unique<StubEncoder>(
                               derive_seed(cfg.seeds.encoders, to_string(slot)),
                               cfg.generator.resolution, cfg.train_extras.embed_dim));
  return encoders;
}

Checkpoint make_checkpoint(const ModelBundle& models, const RunConfig& cfg) {
  Checkpoint ckpt;
  ckpt.step = models.step;
  ckpt.meta["kind"] = "model";
  ckpt.meta["config"] = cfg.to_json();
  ckpt.meta["layout"] = cfg.layout.to_table();
  ckpt.meta["fourier_seed"] = hex64(models.generator.fourier_seed);
  ModelBundle& mutable_models = const_cast<ModelBundle&>(models);
  collect(mutable_models,
          [&ckpt](const std::string& name, Mat& m) { ckpt.tensors[name] = m; });
  ckpt.tensors["wmean"] = flatten(models.w_mean).transpose();
  return ckpt;
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg) {
  if (!ckpt.meta.contains("kind") || ckpt.meta.at("kind") != "model")
    throw DataError("checkpoint does not hold a model");
  ModelBundle b;
  b.generator = GeneratorParams::init(0, cfg.generator, cfg.latent);
  b.generator.fourier_seed =
      std::stoull(ckpt.meta.at("fourier_seed").get<std::string>(), nullptr, 16);
  b.generator.grid = make_fourier_grid(b.generator.fourier_seed, cfg.generator.grid,
                                       cfg.generator.grid, cfg.generator.d_fourier,
                                       cfg.generator.bandwidth);
  b.mapping = MappingParams::init(0, cfg.latent);
  for (AttributeSlot slot : cfg.train.slots)
    b.heads.emplace(slot, ProjectionHead::init(0, cfg.train_extras.embed_dim,
                                               cfg.train_extras.head_hidden, cfg.train_extras.head_out));
  b.disc = Discriminator::init(0, cfg.generator.resolution);
  b.step = ckpt.step;

  collect(b, [&ckpt](const std::string& name, Mat& m) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw DataError("checkpoint missing tensor " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw DataError("checkpoint tensor shape mismatch for " + name);
    m = it->second;
  });
  const auto wm = ckpt.tensors.find("wmean");
  if (wm == ckpt.tensors.end()) throw DataError("checkpoint missing tensor wmean");
  if (wm->second.size() != cfg.latent.extended_dim())
    throw DataError("checkpoint wmean size mismatch");
  b.w_mean = unflatten(wm->second.row(0).transpose(), cfg.latent);
  return b;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw DataError("checkpoint has no config snapshot");
  return RunConfig::from_json(ckpt.meta.at("config"));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["verb"] = verb;
  j["argv"] = argv;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["checkpoint_hash"] = checkpoint_hash;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.verb = j.at("verb").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  return m;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest: " + path);
  os << to_json().dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest: " + path);
  const nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw DataError("invalid manifest JSON: " + path);
  return from_json(j);
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return hex64(h);
}

}  // namespace vera
