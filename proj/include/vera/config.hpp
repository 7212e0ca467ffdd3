#pragma once

#include "vera/blending.hpp"
#include "vera/common.hpp"
#include "vera/contrastive.hpp"
#include "vera/generator.hpp"
#include "vera/inversion.hpp"
#include "vera/latent.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace vera {

/// One JSON document drives a whole run. The schema is strict: unknown keys
/// are rejected with their path so typos cannot silently change a run.
struct RunConfig {
  int version = 1;
  LatentConfig latent;
  GeneratorConfig generator;
  ContrastiveConfig contrastive;
  TrainConfig train;
  InversionConfig inversion;
  BlendConfig blend;
  SemanticLayout layout = SemanticLayout::celebamask13();

  struct RequestDefaults {
    std::string mode = "regular";
    std::vector<std::string> preserve;
    std::vector<std::string> resample_slots = {"identity"};
  } request;

  struct Seeds {
    std::uint64_t init = 7;
    std::uint64_t train = 1;
    std::uint64_t sample = 2;
    std::uint64_t anonymize = 3;
    std::uint64_t evaluate = 4;
    std::uint64_t wmean = 5;
    std::uint64_t encoders = 11;
  } seeds;

  struct TrainExtras {
    int head_hidden = 128;
    int head_out = 128;
    int embed_dim = 32;
    int steps = 200;
  } train_extras;

  int w_mean_samples = 10000;
  int inpaint_iterations = 200;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  std::string hash() const;

  void validate() const;
};

}  // namespace vera
