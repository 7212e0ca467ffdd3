#pragma once

#include "vera/checkpoint.hpp"
#include "vera/config.hpp"
#include "vera/contrastive.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace vera {

/// Everything a run needs in memory: trainable state plus the frozen-encoder
/// stand-ins derived deterministically from the config.
struct ModelBundle {
  GeneratorParams generator;
  MappingParams mapping;
  std::map<AttributeSlot, ProjectionHead> heads;
  Discriminator disc;
  ExtendedLatent w_mean;
  std::uint64_t step = 0;
};

/// Fresh deterministic initialization from the config's init seed, including
/// the latent-mean estimate used by inversion.
ModelBundle init_model_bundle(const RunConfig& cfg);

Checkpoint make_checkpoint(const ModelBundle& models, const RunConfig& cfg);
ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg);
/// Restores the config snapshot embedded in a checkpoint.
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

/// Frozen per-slot encoders (identity/expression/pose/age stand-ins).
std::map<AttributeSlot, std::unique_ptr<StubEncoder>> make_stub_encoders(const RunConfig& cfg);

// ---- run manifests ----

/// Written next to every run's outputs: the exact inputs (by content hash)
/// and the produced outputs (by content hash), so a rerun can be verified
/// byte for byte.
struct RunManifest {
  std::string verb;
  std::vector<std::string> argv;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

std::string file_hash(const std::string& path);

}  // namespace vera
