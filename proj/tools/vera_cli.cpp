// Command-line front end: train | invert | anonymize | evaluate | sample |
// pca-sweep | rerun. Every verb writes a manifest (content hashes of inputs
// and outputs) so runs can be reproduced and verified byte for byte.

#include "vera/anonymize.hpp"
#include "vera/app.hpp"
#include "vera/dataset.hpp"
#include "vera/image.hpp"
#include "vera/metrics.hpp"
#include "vera/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vera;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

struct RunContext {
  GlobalOptions opts;
  RunConfig cfg;
  ModelBundle models;
  std::string checkpoint_hash;  // empty when freshly initialized
  RunManifest manifest;

  std::uint64_t verb_seed(std::uint64_t config_default) const {
    return opts.seed_set ? opts.seed : config_default;
  }
};

RunContext make_context(const GlobalOptions& opts, const std::string& verb,
                        const std::vector<std::string>& argv) {
  RunContext ctx;
  ctx.opts = opts;
  if (!opts.config_path.empty()) {
    ctx.cfg = RunConfig::load(opts.config_path);
    ctx.manifest.inputs[opts.config_path] = file_hash(opts.config_path);
  }
  if (!opts.checkpoint_path.empty()) {
    const Checkpoint ckpt = Checkpoint::load(opts.checkpoint_path);
    if (opts.config_path.empty()) ctx.cfg = config_from_checkpoint(ckpt);
    ctx.models = bundle_from_checkpoint(ckpt, ctx.cfg);
    ctx.checkpoint_hash = file_hash(opts.checkpoint_path);
    ctx.manifest.inputs[opts.checkpoint_path] = ctx.checkpoint_hash;
  } else {
    ctx.models = init_model_bundle(ctx.cfg);
  }
  ctx.manifest.verb = verb;
  ctx.manifest.argv = argv;
  ctx.manifest.config_hash = ctx.cfg.hash();
  ctx.manifest.checkpoint_hash = ctx.checkpoint_hash;
  if (ctx.opts.out_dir.empty()) ctx.opts.out_dir = "out_" + verb;
  fs::create_directories(ctx.opts.out_dir);
  return ctx;
}

std::string out_path(const RunContext& ctx, const std::string& name) {
  return (fs::path(ctx.opts.out_dir) / name).string();
}

void record_output(RunContext& ctx, const std::string& path) {
  ctx.manifest.outputs[path] = file_hash(path);
}

void finish(RunContext& ctx) {
  const std::string path = out_path(ctx, "manifest.json");
  ctx.manifest.save(path);
  std::cout << "wrote " << path << "\n";
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int count = std::min(workers, n);
  for (int t = 0; t < count; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

AnonymizerModels make_anonymizer(const RunContext& ctx, const PerceptualMetric& perceptual,
                                 const InpaintingPrior& inpainting,
                                 const RestorationPrior& restoration) {
  AnonymizerModels m;
  m.generator = &ctx.models.generator;
  m.mapping = &ctx.models.mapping;
  m.latent = ctx.cfg.latent;
  m.layout = ctx.cfg.layout;
  m.w_mean = ctx.models.w_mean;
  m.inversion = ctx.cfg.inversion;
  m.blend = ctx.cfg.blend;
  m.perceptual = &perceptual;
  m.inpainting = &inpainting;
  m.restoration = &restoration;
  return m;
}

AnonymizationRequest make_request(const RunContext& ctx, const std::string& mode,
                                  const std::vector<std::string>& preserve,
                                  const std::vector<std::string>& resample, bool paired,
                                  std::uint64_t seed) {
  AnonymizationRequest req;
  req.mode = parse_anon_mode(mode.empty() ? ctx.cfg.request.mode : mode);
  req.arity = paired ? AnonArity::Paired : AnonArity::Single;
  const auto& names = preserve.empty() && req.mode == AnonMode::Clinical
                          ? ctx.cfg.request.preserve
                          : preserve;
  req.preserve = {names.begin(), names.end()};
  req.resample_slots.clear();
  const auto& slots = resample.empty() ? ctx.cfg.request.resample_slots : resample;
  for (const std::string& s : slots) req.resample_slots.insert(parse_attribute_slot(s));
  req.rng_seed = seed;
  return req;
}

LabelMapResult load_labels_arg(RunContext& ctx, const std::string& path,
                               const std::string& collapse_path) {
  ctx.manifest.inputs[path] = file_hash(path);
  if (collapse_path.empty()) return load_label_map(path, ctx.cfg.layout);
  ctx.manifest.inputs[collapse_path] = file_hash(collapse_path);
  const LabelCollapseTable table = load_collapse_table(collapse_path);
  return load_label_map(path, ctx.cfg.layout, &table);
}

void write_trace(RunContext& ctx, const std::string& name, const InversionTrace& trace) {
  const std::string path = out_path(ctx, name);
  std::ofstream os(path, std::ios::trunc);
  json header = {{"type", "header"},
                 {"optimizer", "adam"},
                 {"steps", trace.config.steps},
                 {"learning_rate", trace.config.learning_rate},
                 {"weights",
                  {{"l1", trace.config.weight_l1},
                   {"l2", trace.config.weight_l2},
                   {"perceptual", trace.config.weight_perceptual},
                   {"mean", trace.config.weight_mean},
                   {"seg", trace.config.weight_seg}}},
                 {"diverged", trace.diverged}};
  os << header.dump() << "\n";
  for (const InversionStep& s : trace.steps) {
    json line = {{"step", s.step},         {"l1", s.terms.l1},
                 {"l2", s.terms.l2},       {"perceptual", s.terms.perceptual},
                 {"mean", s.terms.mean_reg}, {"seg", s.terms.seg},
                 {"total", s.terms.total}, {"best", s.best_so_far}};
    os << line.dump() << "\n";
  }
  record_output(ctx, path);
}

json report_to_json(const ProvenanceReport& r) {
  return json{{"mode", r.mode},
              {"arity", r.arity},
              {"rng_seed", r.rng_seed},
              {"preserved_components", r.preserved_components},
              {"randomized_components", r.randomized_components},
              {"resampled_slots", r.resampled_slots},
              {"warnings", r.warnings},
              {"inversion_diverged", r.inversion_diverged}};
}

Checkpoint latents_checkpoint(const std::vector<ExtendedLatent>& latents,
                              const std::vector<std::string>& images, bool paired) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "latents";
  ckpt.meta["images"] = images;
  ckpt.meta["paired"] = paired;
  for (std::size_t i = 0; i < latents.size(); ++i)
    ckpt.tensors[std::to_string(i) + ".w"] = flatten(latents[i]).transpose();
  return ckpt;
}

std::vector<ExtendedLatent> latents_from_checkpoint(const Checkpoint& ckpt,
                                                    const LatentConfig& cfg) {
  if (!ckpt.meta.contains("kind") || ckpt.meta.at("kind") != "latents")
    throw DataError("file does not hold inversion latents");
  std::vector<ExtendedLatent> out;
  for (std::size_t i = 0;; ++i) {
    const auto it = ckpt.tensors.find(std::to_string(i) + ".w");
    if (it == ckpt.tensors.end()) break;
    out.push_back(unflatten(it->second.row(0).transpose(), cfg));
  }
  if (out.empty()) throw DataError("latents container is empty");
  return out;
}

// ---- verbs ----

int run_sample(RunContext& ctx, int count) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.sample);
  ctx.manifest.seed = seed;
  for (int i = 0; i < count; ++i) {
    const LatentSample z =
        sample_latent(derive_seed(seed, "sample", static_cast<std::uint64_t>(i)), ctx.cfg.latent);
    const GeneratedOutput out = generate(map_to_w(z, ctx.models.mapping, ctx.cfg.latent),
                                         ctx.models.generator);
    const std::string img_path = out_path(ctx, "sample_" + std::to_string(i) + ".png");
    write_png_rgb(img_path, image_from_generated(out));
    record_output(ctx, img_path);
    const TargetLabels labels = argmax_labels(out);
    const std::string lab_path = out_path(ctx, "sample_" + std::to_string(i) + "_labels.png");
    write_png_labels(lab_path, labels.labels, labels.height, labels.width, ctx.cfg.layout.size());
    record_output(ctx, lab_path);
  }
  finish(ctx);
  return 0;
}

int run_train(RunContext& ctx, int steps, const std::string& dataset_path) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.train);
  ctx.manifest.seed = seed;
  if (steps <= 0) steps = ctx.cfg.train_extras.steps;

  std::vector<Mat> reals;
  if (!dataset_path.empty()) {
    ctx.manifest.inputs[dataset_path] = file_hash(dataset_path);
    const DatasetIndex idx = DatasetIndex::load(dataset_path);
    const fs::path base = fs::path(dataset_path).parent_path();
    for (const auto& e : idx.entries) {
      const std::string img_path = (base / e.image).string();
      const Image img = read_png_rgb(img_path);
      if (img.height != ctx.cfg.generator.resolution || img.width != ctx.cfg.generator.resolution)
        throw DataError("training image resolution mismatch: " + img_path);
      reals.push_back(img.data);
      ctx.manifest.inputs[img_path] = file_hash(img_path);
    }
  } else {
    // Stand-in real set: a frozen teacher generator with its own seed.
    const GeneratorParams teacher = GeneratorParams::init(derive_seed(seed, "teacher"),
                                                          ctx.cfg.generator, ctx.cfg.latent);
    for (int i = 0; i < 16; ++i) {
      const LatentSample z =
          sample_latent(derive_seed(seed, "teacher.z", static_cast<std::uint64_t>(i)), ctx.cfg.latent);
      reals.push_back(generate(map_to_w(z, ctx.models.mapping, ctx.cfg.latent), teacher).image);
    }
  }

  auto encoders = make_stub_encoders(ctx.cfg);
  std::map<AttributeSlot, const AttributeEncoder*> encoder_ptrs;
  for (const auto& [slot, enc] : encoders) encoder_ptrs[slot] = enc.get();

  Trainer trainer(ctx.models.generator, ctx.models.mapping, ctx.models.heads, encoder_ptrs,
                  ctx.models.disc, ctx.cfg.latent, ctx.cfg.train);

  const std::string loss_path = out_path(ctx, "losses.jsonl");
  std::ofstream losses(loss_path, std::ios::trunc);
  for (int s = 0; s < steps; ++s) {
    const StepReport rep =
        trainer.step(derive_seed(seed, "step", static_cast<std::uint64_t>(ctx.models.step)), reals);
    json line = {{"step", ctx.models.step},
                 {"total", rep.total},
                 {"adversarial", rep.adversarial},
                 {"discriminator", rep.discriminator},
                 {"r1", rep.r1_penalty},
                 {"per_anchor", rep.per_anchor_contrastive},
                 {"applied", rep.applied}};
    for (const auto& [name, value] : rep.attribute_losses) line["attr"][name] = value;
    losses << line.dump() << "\n";
    if (!rep.applied) {
      std::cerr << "non-finite loss at step " << ctx.models.step << ", update skipped\n";
    }
    ++ctx.models.step;
  }
  losses.close();
  record_output(ctx, loss_path);

  const std::string ckpt_path = out_path(ctx, "checkpoint.vera");
  make_checkpoint(ctx.models, ctx.cfg).save(ckpt_path);
  record_output(ctx, ckpt_path);
  finish(ctx);
  return 0;
}

int run_invert(RunContext& ctx, const std::string& image_path, const std::string& labels_path,
               const std::string& image_b_path, const std::string& labels_b_path,
               const std::string& collapse_path) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.anonymize);
  ctx.manifest.seed = seed;
  const PyramidPerceptual perceptual;

  ctx.manifest.inputs[image_path] = file_hash(image_path);
  const Image image = read_png_rgb(image_path);
  const LabelMapResult labels = load_labels_arg(ctx, labels_path, collapse_path);
  for (const std::string& w : labels.warnings) std::cerr << "warning: " << w << "\n";

  std::vector<ExtendedLatent> latents;
  std::vector<std::string> images = {image_path};
  const bool paired = !image_b_path.empty();
  if (paired) {
    ctx.manifest.inputs[image_b_path] = file_hash(image_b_path);
    const Image image_b = read_png_rgb(image_b_path);
    const LabelMapResult labels_b = load_labels_arg(ctx, labels_b_path, collapse_path);
    const PairedInversionResult res =
        invert_paired(image, labels.labels, image_b, labels_b.labels, ctx.models.generator,
                      ctx.cfg.latent, ctx.models.w_mean, perceptual, ctx.cfg.inversion, seed);
    if (res.diverged) std::cerr << "warning: paired inversion diverged; best iterate kept\n";
    latents = {res.first, res.second};
    images.push_back(image_b_path);
    write_trace(ctx, "trace_0.jsonl", res.trace_first);
    write_trace(ctx, "trace_1.jsonl", res.trace_second);
  } else {
    const InversionResult res = invert_single(image, labels.labels, ctx.models.generator,
                                              ctx.cfg.latent, ctx.models.w_mean, perceptual,
                                              ctx.cfg.inversion, seed);
    if (res.diverged) std::cerr << "warning: inversion diverged; best iterate kept\n";
    latents = {res.latent};
    write_trace(ctx, "trace_0.jsonl", res.trace);
  }

  for (std::size_t i = 0; i < latents.size(); ++i) {
    const GeneratedOutput recon = generate(latents[i], ctx.models.generator);
    const std::string path = out_path(ctx, "recon_" + std::to_string(i) + ".png");
    write_png_rgb(path, image_from_generated(recon));
    record_output(ctx, path);
  }
  const std::string lat_path = out_path(ctx, "latents.vera");
  latents_checkpoint(latents, images, paired).save(lat_path);
  record_output(ctx, lat_path);
  finish(ctx);
  return 0;
}

int run_anonymize(RunContext& ctx, const std::string& mode,
                  const std::vector<std::string>& preserve,
                  const std::vector<std::string>& resample, const std::string& image_path,
                  const std::string& labels_path, const std::vector<std::string>& pair,
                  const std::string& labels_b_path, const std::string& from_latents,
                  const std::string& collapse_path) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.anonymize);
  ctx.manifest.seed = seed;
  const PyramidPerceptual perceptual;
  const DiffusionInpainter inpainting(ctx.cfg.inpaint_iterations);
  const IdentityRestoration restoration;
  const AnonymizerModels models = make_anonymizer(ctx, perceptual, inpainting, restoration);

  const bool paired = !pair.empty();
  if (paired && pair.size() != 2) throw ArgumentError("--pair expects exactly two images");
  if (paired == !image_path.empty())
    throw ArgumentError("provide exactly one of --image or --pair");

  std::vector<ExtendedLatent> stored;
  if (!from_latents.empty()) {
    ctx.manifest.inputs[from_latents] = file_hash(from_latents);
    stored = latents_from_checkpoint(Checkpoint::load(from_latents), ctx.cfg.latent);
  }

  AnonymizationResult result;
  if (paired) {
    ctx.manifest.inputs[pair[0]] = file_hash(pair[0]);
    ctx.manifest.inputs[pair[1]] = file_hash(pair[1]);
    const Image a = read_png_rgb(pair[0]);
    const Image b = read_png_rgb(pair[1]);
    const LabelMapResult la = load_labels_arg(ctx, labels_path, collapse_path);
    const LabelMapResult lb = load_labels_arg(ctx, labels_b_path, collapse_path);
    const AnonymizationRequest req = make_request(ctx, mode, preserve, resample, true, seed);
    if (!stored.empty() && stored.size() != 2)
      throw DataError("--from-latents for a pair needs two stored latents");
    result = anonymize_paired(a, la.labels, b, lb.labels, req, models,
                              stored.empty() ? nullptr : &stored[0],
                              stored.empty() ? nullptr : &stored[1]);
  } else {
    ctx.manifest.inputs[image_path] = file_hash(image_path);
    const Image a = read_png_rgb(image_path);
    const LabelMapResult la = load_labels_arg(ctx, labels_path, collapse_path);
    const AnonymizationRequest req = make_request(ctx, mode, preserve, resample, false, seed);
    if (!stored.empty() && stored.size() != 1)
      throw DataError("--from-latents for a single image needs one stored latent");
    result = anonymize_single(a, la.labels, req, models, stored.empty() ? nullptr : &stored[0]);
  }

  for (std::size_t i = 0; i < result.outputs.size(); ++i) {
    const std::string img = out_path(ctx, "anonymized_" + std::to_string(i) + ".png");
    write_png_rgb(img, result.outputs[i]);
    record_output(ctx, img);
    const std::string real = out_path(ctx, "mask_real_" + std::to_string(i) + ".png");
    write_png_mask(real, result.mask_real[i]);
    record_output(ctx, real);
    const std::string syn = out_path(ctx, "mask_syn_" + std::to_string(i) + ".png");
    write_png_mask(syn, result.mask_syn[i]);
    record_output(ctx, syn);
    const std::string inp = out_path(ctx, "mask_inp_" + std::to_string(i) + ".png");
    write_png_mask(inp, result.mask_inp[i]);
    record_output(ctx, inp);
  }
  const std::string report_path = out_path(ctx, "report.json");
  {
    std::ofstream os(report_path, std::ios::trunc);
    os << report_to_json(result.report).dump(2) << "\n";
  }
  record_output(ctx, report_path);
  for (const std::string& w : result.report.warnings) std::cerr << "warning: " << w << "\n";
  finish(ctx);
  return 0;
}

int run_evaluate(RunContext& ctx, const std::string& dataset_path,
                 const std::string& collapse_path, const std::string& mode,
                 const std::vector<std::string>& preserve) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.evaluate);
  ctx.manifest.seed = seed;
  ctx.manifest.inputs[dataset_path] = file_hash(dataset_path);
  const DatasetIndex idx = DatasetIndex::load(dataset_path);
  const fs::path base = fs::path(dataset_path).parent_path();

  const PyramidPerceptual perceptual;
  const DiffusionInpainter inpainting(ctx.cfg.inpaint_iterations);
  const IdentityRestoration restoration;
  const AnonymizerModels models = make_anonymizer(ctx, perceptual, inpainting, restoration);
  const StubFaceEmbedder embedder(derive_seed(ctx.cfg.seeds.encoders, "face"),
                                  ctx.cfg.generator.resolution, ctx.cfg.train_extras.embed_dim);
  const StubLandmarkDetector landmarks;

  const int n = static_cast<int>(idx.entries.size());
  std::vector<Image> inputs(static_cast<std::size_t>(n));
  std::vector<TargetLabels> labels(static_cast<std::size_t>(n));
  std::vector<Image> outputs(static_cast<std::size_t>(n));

  std::unique_ptr<LabelCollapseTable> table;
  if (!collapse_path.empty()) {
    ctx.manifest.inputs[collapse_path] = file_hash(collapse_path);
    table = std::make_unique<LabelCollapseTable>(load_collapse_table(collapse_path));
  }
  for (int i = 0; i < n; ++i) {
    const std::string img_path = (base / idx.entries[static_cast<std::size_t>(i)].image).string();
    const std::string lab_path = (base / idx.entries[static_cast<std::size_t>(i)].labels).string();
    ctx.manifest.inputs[img_path] = file_hash(img_path);
    ctx.manifest.inputs[lab_path] = file_hash(lab_path);
    inputs[static_cast<std::size_t>(i)] = read_png_rgb(img_path);
    labels[static_cast<std::size_t>(i)] = load_label_map(lab_path, ctx.cfg.layout, table.get()).labels;
  }

  // Per-image single anonymization, parallel across the worker pool with
  // per-image derived seeds, aggregated in index order.
  parallel_for(n, ctx.opts.workers, [&](int i) {
    const AnonymizationRequest req =
        make_request(ctx, mode, preserve, {}, false,
                     derive_seed(seed, idx.entries[static_cast<std::size_t>(i)].image));
    const AnonymizationResult res = anonymize_single(inputs[static_cast<std::size_t>(i)],
                                                     labels[static_cast<std::size_t>(i)], req, models);
    outputs[static_cast<std::size_t>(i)] = res.outputs[0];
  });

  json metrics;
  std::vector<std::pair<Image, Image>> deid_pairs;
  for (int i = 0; i < n; ++i)
    deid_pairs.emplace_back(inputs[static_cast<std::size_t>(i)], outputs[static_cast<std::size_t>(i)]);
  metrics["deid_rate"] = deid_rate(deid_pairs, embedder);

  // Region metrics per preserved component (the clinical table's analogue).
  const AnonymizationRequest probe = make_request(ctx, mode, preserve, {}, false, seed);
  json preservation = json::object();
  for (const std::string& comp : probe.preserve_names(ctx.cfg.layout)) {
    double l1 = 0, psnr = 0, iou = 0, lmk = 0;
    int counted = 0;
    for (int i = 0; i < n; ++i) {
      const MaskImage mask = component_mask(labels[static_cast<std::size_t>(i)],
                                            {ctx.cfg.layout.index_of(comp)});
      if ((mask != 0).count() == 0) continue;
      l1 += region_l1(inputs[static_cast<std::size_t>(i)], outputs[static_cast<std::size_t>(i)], mask);
      psnr += region_psnr(inputs[static_cast<std::size_t>(i)], outputs[static_cast<std::size_t>(i)], mask);
      iou += mask_iou(mask, mask);
      lmk += mean_landmark_offset(landmarks.detect(inputs[static_cast<std::size_t>(i)]),
                                  landmarks.detect(outputs[static_cast<std::size_t>(i)]));
      ++counted;
    }
    if (counted > 0)
      preservation[comp] = {{"l1", l1 / counted},
                            {"psnr", psnr / counted},
                            {"iou", iou / counted},
                            {"landmark_offset", lmk / counted},
                            {"images", counted}};
  }
  metrics["preservation"] = preservation;

  // Paired consistency: paired pipeline against independent singles.
  const auto pair_map = idx.pairs();
  if (!pair_map.empty()) {
    std::vector<std::pair<int, int>> pair_idx;
    for (const auto& [pid, members] : pair_map) pair_idx.push_back(members);
    std::vector<std::pair<Image, Image>> anon_pairs(pair_idx.size()), input_pairs(pair_idx.size()),
        single_pairs(pair_idx.size());
    parallel_for(static_cast<int>(pair_idx.size()), ctx.opts.workers, [&](int p) {
      const auto [ia, ib] = pair_idx[static_cast<std::size_t>(p)];
      const AnonymizationRequest req =
          make_request(ctx, mode, preserve, {}, true,
                       derive_seed(seed, "pair", static_cast<std::uint64_t>(p)));
      const AnonymizationResult res =
          anonymize_paired(inputs[static_cast<std::size_t>(ia)], labels[static_cast<std::size_t>(ia)],
                           inputs[static_cast<std::size_t>(ib)], labels[static_cast<std::size_t>(ib)],
                           req, models);
      anon_pairs[static_cast<std::size_t>(p)] = {res.outputs[0], res.outputs[1]};
      input_pairs[static_cast<std::size_t>(p)] = {inputs[static_cast<std::size_t>(ia)],
                                                  inputs[static_cast<std::size_t>(ib)]};
      single_pairs[static_cast<std::size_t>(p)] = {outputs[static_cast<std::size_t>(ia)],
                                                   outputs[static_cast<std::size_t>(ib)]};
    });
    const PairConsistency paired_pc = pair_consistency(anon_pairs, input_pairs, embedder);
    const PairConsistency single_pc = pair_consistency(single_pairs, input_pairs, embedder);
    metrics["pairs"] = {{"paired",
                         {{"reid_rate", paired_pc.reid_rate},
                          {"distance_delta", paired_pc.mean_distance_delta}}},
                        {"single",
                         {{"reid_rate", single_pc.reid_rate},
                          {"distance_delta", single_pc.mean_distance_delta}}},
                        {"count", pair_idx.size()}};
  }

  // Distribution distance between input and output embedding clouds.
  if (n >= 2) {
    std::vector<Vec> in_feats, out_feats;
    for (int i = 0; i < n; ++i) {
      in_feats.push_back(embedder.embed(inputs[static_cast<std::size_t>(i)]));
      out_feats.push_back(embedder.embed(outputs[static_cast<std::size_t>(i)]));
    }
    metrics["frechet"] = frechet_distance(gaussian_summary(in_feats), gaussian_summary(out_feats));
  }

  const std::string metrics_path = out_path(ctx, "metrics.json");
  {
    std::ofstream os(metrics_path, std::ios::trunc);
    os << metrics.dump(2) << "\n";
  }
  record_output(ctx, metrics_path);

  // CSV mirror of the preservation table.
  const std::string csv_path = out_path(ctx, "preservation.csv");
  {
    std::ofstream os(csv_path, std::ios::trunc);
    os << "component,l1,psnr,iou,landmark_offset,images\n";
    for (const auto& [comp, row] : preservation.items())
      os << comp << "," << row["l1"] << "," << row["psnr"] << "," << row["iou"] << ","
         << row["landmark_offset"] << "," << row["images"] << "\n";
  }
  record_output(ctx, csv_path);
  finish(ctx);
  return 0;
}

int run_pca_sweep(RunContext& ctx, const std::string& slot_name, int samples, int dirs,
                  int sweep_steps, double scale) {
  const std::uint64_t seed = ctx.verb_seed(ctx.cfg.seeds.sample);
  ctx.manifest.seed = seed;
  const AttributeSlot slot = parse_attribute_slot(slot_name);

  std::vector<GlobalLatent> cloud;
  for (int i = 0; i < samples; ++i)
    cloud.push_back(
        sample_latent(derive_seed(seed, "pca", static_cast<std::uint64_t>(i)), ctx.cfg.latent).global);
  const PcaDirections pca = slot_pca_directions(cloud, slot, dirs);
  if (pca.degenerate) std::cerr << "warning: PCA returned fewer directions than requested\n";

  json dir_json = json::array();
  for (const Vec& d : pca.directions) dir_json.push_back(std::vector<double>(d.data(), d.data() + d.size()));
  const std::string dir_path = out_path(ctx, "directions.json");
  {
    std::ofstream os(dir_path, std::ios::trunc);
    os << json{{"slot", slot_name}, {"samples", samples}, {"directions", dir_json}}.dump(2) << "\n";
  }
  record_output(ctx, dir_path);

  const LatentSample base = sample_latent(derive_seed(seed, "base"), ctx.cfg.latent);
  for (std::size_t d = 0; d < pca.directions.size(); ++d) {
    for (int s = 0; s < sweep_steps; ++s) {
      const double t = sweep_steps > 1 ? -scale + 2.0 * scale * s / (sweep_steps - 1) : 0.0;
      LatentSample z = base;
      z.global.slot(slot) += t * pca.directions[d];
      const GeneratedOutput out =
          generate(map_to_w(z, ctx.models.mapping, ctx.cfg.latent), ctx.models.generator);
      const std::string path =
          out_path(ctx, "sweep_d" + std::to_string(d) + "_s" + std::to_string(s) + ".png");
      write_png_rgb(path, image_from_generated(out));
      record_output(ctx, path);
    }
  }
  finish(ctx);
  return 0;
}

int dispatch(const std::vector<std::string>& args);

int run_rerun(const std::string& manifest_path) {
  const RunManifest m = RunManifest::load(manifest_path);
  std::cout << "re-running verb '" << m.verb << "'\n";
  return dispatch(m.argv);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Compositional face anonymization toolkit"};
  app.require_subcommand(1);

  GlobalOptions opts;
  app.add_option("--config", opts.config_path, "Run configuration JSON")->envname("VERA_CONFIG");
  app.add_option("--checkpoint", opts.checkpoint_path, "Model checkpoint")->envname("VERA_CHECKPOINT");
  app.add_option("--out-dir", opts.out_dir, "Output directory")->envname("VERA_OUT_DIR");
  auto* seed_opt = app.add_option("--seed", opts.seed, "Run seed")->envname("VERA_SEED");
  app.add_option("--workers", opts.workers, "Worker pool size")->envname("VERA_WORKERS");

  auto* sample = app.add_subcommand("sample", "Generate images from random latents");
  int sample_count = 4;
  sample->add_option("--count", sample_count, "Number of samples");

  auto* train = app.add_subcommand("train", "Run contrastive+adversarial training steps");
  int train_steps = 0;
  std::string train_dataset;
  train->add_option("--steps", train_steps, "Training steps (default from config)");
  train->add_option("--dataset", train_dataset, "Dataset index of real images");

  auto* invert = app.add_subcommand("invert", "Project images into W+");
  std::string inv_image, inv_labels, inv_image_b, inv_labels_b, inv_collapse;
  invert->add_option("--image", inv_image, "Input image")->required();
  invert->add_option("--labels", inv_labels, "Input label map")->required();
  invert->add_option("--image-b", inv_image_b, "Second image (paired inversion)");
  invert->add_option("--labels-b", inv_labels_b, "Second label map");
  invert->add_option("--collapse", inv_collapse, "Label collapse table JSON");

  auto* anon = app.add_subcommand("anonymize", "Anonymize an image or a pair");
  std::string anon_mode, anon_image, anon_labels, anon_labels_b, anon_latents, anon_collapse;
  std::vector<std::string> anon_preserve, anon_resample, anon_pair;
  anon->add_option("--mode", anon_mode, "regular or clinical");
  anon->add_option("--preserve", anon_preserve, "Components to preserve (clinical)")->delimiter(',');
  anon->add_option("--resample", anon_resample, "Global slots to resample")->delimiter(',');
  anon->add_option("--image", anon_image, "Input image");
  anon->add_option("--pair", anon_pair, "Two input images")->expected(2);
  anon->add_option("--labels", anon_labels, "Label map for the (first) image")->required();
  anon->add_option("--labels-b", anon_labels_b, "Label map for the second image");
  anon->add_option("--from-latents", anon_latents, "Reuse stored inversion latents");
  anon->add_option("--collapse", anon_collapse, "Label collapse table JSON");

  auto* eval = app.add_subcommand("evaluate", "Anonymize a dataset and report metrics");
  std::string eval_dataset, eval_collapse, eval_mode;
  std::vector<std::string> eval_preserve;
  eval->add_option("--dataset", eval_dataset, "Dataset index JSON")->required();
  eval->add_option("--collapse", eval_collapse, "Label collapse table JSON");
  eval->add_option("--mode", eval_mode, "regular or clinical");
  eval->add_option("--preserve", eval_preserve, "Components to preserve (clinical)")->delimiter(',');

  auto* pca = app.add_subcommand("pca-sweep", "Sweep along PCA directions of a global slot");
  std::string pca_slot = "pose";
  int pca_samples = 256, pca_dirs = 2, pca_steps = 7;
  double pca_scale = 3.0;
  pca->add_option("--slot", pca_slot, "Attribute slot");
  pca->add_option("--samples", pca_samples, "Latent samples for the PCA");
  pca->add_option("--dirs", pca_dirs, "Number of directions");
  pca->add_option("--sweep-steps", pca_steps, "Images per direction");
  pca->add_option("--scale", pca_scale, "Sweep range in multiples of the direction");

  auto* rerun = app.add_subcommand("rerun", "Re-execute a run from its manifest");
  std::string rerun_manifest;
  rerun->add_option("--manifest", rerun_manifest, "manifest.json of a previous run")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());  // CLI11 vector convention
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // CLI11 prints diagnostics; nonzero on error
  }
  opts.seed_set = seed_opt->count() > 0 || std::getenv("VERA_SEED") != nullptr;

  if (rerun->parsed()) return run_rerun(rerun_manifest);

  const std::string verb = app.get_subcommands().front()->get_name();
  RunContext ctx = make_context(opts, verb, args);

  if (sample->parsed()) return run_sample(ctx, sample_count);
  if (train->parsed()) return run_train(ctx, train_steps, train_dataset);
  if (invert->parsed())
    return run_invert(ctx, inv_image, inv_labels, inv_image_b, inv_labels_b, inv_collapse);
  if (anon->parsed())
    return run_anonymize(ctx, anon_mode, anon_preserve, anon_resample, anon_image, anon_labels,
                         anon_pair, anon_labels_b, anon_latents, anon_collapse);
  if (eval->parsed()) return run_evaluate(ctx, eval_dataset, eval_collapse, eval_mode, eval_preserve);
  if (pca->parsed()) return run_pca_sweep(ctx, pca_slot, pca_samples, pca_dirs, pca_steps, pca_scale);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    return dispatch(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
