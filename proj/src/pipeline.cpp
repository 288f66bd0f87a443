#include "careseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "careseg/optim.hpp"

namespace fs = std::filesystem;

namespace careseg {

// ---- configuration -----------------------------------------------------------

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  // stock spatial ranges are denominated in voxels of the 128 grid; scale to 32
  c.augment.translation_voxels = 5.0;
  c.augment.elastic_voxels = 4.0;
  return c;
}

PipelineConfig PipelineConfig::paper() {
  PipelineConfig c;
  c.grid.dims = {128, 128, 128};
  c.grid.spacing = {1.0f, 1.0f, 1.0f};
  c.net.levels = 5;
  c.net.base_filters = 64;
  c.train.iterations = 200000;
  c.train.ensemble_size = 10;
  c.augment.translation_voxels = 20.0;
  c.augment.elastic_voxels = 15.0;
  return c;
}

namespace {

using nlohmann::json;

json augment_to_json(const AugmentRanges& a) {
  return json{{"translation_voxels", a.translation_voxels},
              {"rotation_radians", a.rotation_radians},
              {"iso_scale", {a.iso_scale_lo, a.iso_scale_hi}},
              {"aniso_scale", {a.aniso_scale_lo, a.aniso_scale_hi}},
              {"elastic_voxels", a.elastic_voxels},
              {"intensity_shift", a.intensity_shift},
              {"intensity_scale", {a.intensity_scale_lo, a.intensity_scale_hi}},
              {"label_shift", a.label_shift},
              {"label_scale", {a.label_scale_lo, a.label_scale_hi}}};
}

void augment_from_json(const json& j, AugmentRanges& a) {
  a.translation_voxels = j.value("translation_voxels", a.translation_voxels);
  a.rotation_radians = j.value("rotation_radians", a.rotation_radians);
  if (j.contains("iso_scale")) {
    a.iso_scale_lo = j["iso_scale"][0];
    a.iso_scale_hi = j["iso_scale"][1];
  }
  if (j.contains("aniso_scale")) {
    a.aniso_scale_lo = j["aniso_scale"][0];
    a.aniso_scale_hi = j["aniso_scale"][1];
  }
  a.elastic_voxels = j.value("elastic_voxels", a.elastic_voxels);
  a.intensity_shift = j.value("intensity_shift", a.intensity_shift);
  if (j.contains("intensity_scale")) {
    a.intensity_scale_lo = j["intensity_scale"][0];
    a.intensity_scale_hi = j["intensity_scale"][1];
  }
  a.label_shift = j.value("label_shift", a.label_shift);
  if (j.contains("label_scale")) {
    a.label_scale_lo = j["label_scale"][0];
    a.label_scale_hi = j["label_scale"][1];
  }
}

}  // namespace

std::string PipelineConfig::to_json() const {
  json j;
  j["grid"] = {{"dims", {grid.dims.nx, grid.dims.ny, grid.dims.nz}},
               {"spacing", {grid.spacing.sx, grid.spacing.sy, grid.spacing.sz}}};
  j["net"] = {{"levels", net.levels},
              {"base_filters", net.base_filters},
              {"dropout_rate", net.dropout_rate},
              {"relu_slope", net.relu_slope}};
  j["train"] = {{"iterations", train.iterations},
                {"lr", train.lr},
                {"ema_decay", train.ema_decay},
                {"seed", train.seed},
                {"lambdas", {train.lambda1, train.lambda2, train.lambda3}},
                {"dice_eps", train.dice_eps},
                {"weighting", train.weighting == DiceWeighting::Paper ? "paper" : "inverse-square"},
                {"ensemble_size", train.ensemble_size},
                {"checkpoint_every", train.checkpoint_every},
                {"log_every", train.log_every},
                {"pair_sampling", train.pair_sampling}};
  j["augment"] = augment_to_json(augment);
  j["postprocess"] = {{"component_3d", postprocess.component_3d},
                      {"component_2d", postprocess.component_2d},
                      {"topmost_slice", postprocess.topmost_slice},
                      {"outlier_regions", postprocess.outlier_regions},
                      {"base_at", postprocess.base_at == BaseAt::ZMax ? "zmax" : "zmin"},
                      {"outlier_min_ml", postprocess.outlier_min_ml},
                      {"outlier_sigma_mm", postprocess.outlier_sigma_mm}};
  j["average_logits"] = average_logits;
  j["paths"] = {{"corpus_dir", corpus_dir},
                {"checkpoint_dir", checkpoint_dir},
                {"report_dir", report_dir}};
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  PipelineConfig c = j.value("preset", std::string("desk")) == "paper" ? paper() : desk();
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (g.contains("dims"))
      c.grid.dims = {g["dims"][0].get<int64_t>(), g["dims"][1].get<int64_t>(),
                     g["dims"][2].get<int64_t>()};
    if (g.contains("spacing"))
      c.grid.spacing = {g["spacing"][0].get<float>(), g["spacing"][1].get<float>(),
                        g["spacing"][2].get<float>()};
  }
  if (j.contains("net")) {
    const auto& nj = j["net"];
    c.net.levels = nj.value("levels", c.net.levels);
    c.net.base_filters = nj.value("base_filters", c.net.base_filters);
    c.net.dropout_rate = nj.value("dropout_rate", c.net.dropout_rate);
    c.net.relu_slope = nj.value("relu_slope", c.net.relu_slope);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.iterations = t.value("iterations", c.train.iterations);
    c.train.lr = t.value("lr", c.train.lr);
    c.train.ema_decay = t.value("ema_decay", c.train.ema_decay);
    c.train.seed = t.value("seed", c.train.seed);
    if (t.contains("lambdas")) {
      c.train.lambda1 = t["lambdas"][0];
      c.train.lambda2 = t["lambdas"][1];
      c.train.lambda3 = t["lambdas"][2];
    }
    c.train.dice_eps = t.value("dice_eps", c.train.dice_eps);
    c.train.weighting = t.value("weighting", std::string("paper")) == "inverse-square"
                            ? DiceWeighting::InverseSquare
                            : DiceWeighting::Paper;
    c.train.ensemble_size = t.value("ensemble_size", c.train.ensemble_size);
    c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
    c.train.log_every = t.value("log_every", c.train.log_every);
    c.train.pair_sampling = t.value("pair_sampling", c.train.pair_sampling);
  }
  if (j.contains("augment")) augment_from_json(j["augment"], c.augment);
  if (j.contains("postprocess")) {
    const auto& p = j["postprocess"];
    c.postprocess.component_3d = p.value("component_3d", c.postprocess.component_3d);
    c.postprocess.component_2d = p.value("component_2d", c.postprocess.component_2d);
    c.postprocess.topmost_slice = p.value("topmost_slice", c.postprocess.topmost_slice);
    c.postprocess.outlier_regions = p.value("outlier_regions", c.postprocess.outlier_regions);
    c.postprocess.base_at =
        p.value("base_at", std::string("zmax")) == "zmin" ? BaseAt::ZMin : BaseAt::ZMax;
    c.postprocess.outlier_min_ml = p.value("outlier_min_ml", c.postprocess.outlier_min_ml);
    c.postprocess.outlier_sigma_mm = p.value("outlier_sigma_mm", c.postprocess.outlier_sigma_mm);
  }
  c.average_logits = j.value("average_logits", c.average_logits);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    c.corpus_dir = p.value("corpus_dir", c.corpus_dir);
    c.checkpoint_dir = p.value("checkpoint_dir", c.checkpoint_dir);
    c.report_dir = p.value("report_dir", c.report_dir);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void PipelineConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot write config " + path);
  out << to_json();
}

// ---- corpus --------------------------------------------------------------------

void generate_corpus(const PipelineConfig& cfg, int64_t count, uint64_t seed,
                     const std::string& dir) {
  fs::create_directories(dir);
  Rng rng(mix_seed(seed, 0xC0));
  for (int64_t i = 0; i < count; ++i) {
    const Subgroup sg = i % 3 == 0 ? Subgroup::D8 : (i % 3 == 1 ? Subgroup::M1 : Subgroup::M12);
    // roughly two thirds of the acute cases carry a no-reflow core
    const bool with_mvo = sg == Subgroup::D8 && rng.uniform() < 0.66;
    const PhantomSpec spec =
        sample_phantom_spec(rng, cfg.grid.dims, cfg.grid.spacing, sg, with_mvo);
    auto [img, labels, subgroup] = generate_phantom(spec);

    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03d", int(i));
    const std::string id(buf);
    const SidecarMeta meta{id, to_string(subgroup)};
    const std::string img_path = dir + "/" + id + ".img.mvol";
    const std::string gt_path = dir + "/" + id + ".gt.mvol";
    write_mvol(img, img_path);
    write_sidecar(meta, img_path);
    write_mvol(labels, gt_path);
    write_sidecar(meta, gt_path);
  }
}

Corpus Corpus::load(const std::string& dir) {
  Corpus corpus;
  std::vector<std::string> img_files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 9 && name.substr(name.size() - 9) == ".img.mvol")
      img_files.push_back(e.path().string());
  }
  std::sort(img_files.begin(), img_files.end());
  for (const auto& img_path : img_files) {
    CorpusCase c;
    const auto meta = read_sidecar(img_path);
    if (!meta) throw MissingCase("missing sidecar for " + img_path);
    c.case_id = meta->case_id;
    c.subgroup = subgroup_from_string(meta->subgroup);
    c.image = normalize_percentile(read_scalar_mvol(img_path));
    const std::string gt_path = img_path.substr(0, img_path.size() - 9) + ".gt.mvol";
    c.labels = read_label_mvol(gt_path);
    if (!(c.labels.dims == c.image.dims))
      throw GeometryMismatch(c.case_id + ": image and ground truth geometry differ");
    c.has_mvo = contains_mvo(c.labels);
    corpus.cases.push_back(std::move(c));
  }
  return corpus;
}

std::vector<size_t> Corpus::mvo_pool() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < cases.size(); ++i)
    if (cases[i].has_mvo) out.push_back(i);
  return out;
}

std::vector<size_t> Corpus::non_mvo_pool() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < cases.size(); ++i)
    if (!cases[i].has_mvo) out.push_back(i);
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_case_ids(const Corpus& corpus) {
  std::vector<std::string> ids;
  for (const auto& c : corpus.cases) ids.push_back(c.case_id);
  std::sort(ids.begin(), ids.end());
  std::vector<std::string> train_ids, val_ids;
  for (size_t i = 0; i < ids.size(); ++i)
    (i % 3 == 2 ? val_ids : train_ids).push_back(ids[i]);
  return {train_ids, val_ids};
}

std::pair<size_t, size_t> sample_training_pair(const Corpus& corpus,
                                               const std::vector<size_t>& train_indices, Rng& rng) {
  std::vector<size_t> with, without;
  for (size_t i : train_indices)
    (corpus.cases[i].has_mvo ? with : without).push_back(i);
  if (with.empty()) throw EmptyPool("training pool has no MVO cases");
  if (without.empty()) throw EmptyPool("training pool has no MVO-free cases");
  const size_t a = with[rng.uniform_index(with.size())];
  const size_t b = without[rng.uniform_index(without.size())];
  return {a, b};
}

// ---- tensor bridges ---------------------------------------------------------------

namespace {

Tensor5<float> image_tensor(const ScalarVolume& v) {
  Tensor5<float> t(1, 1, v.dims.nx, v.dims.ny, v.dims.nz);
  std::copy(v.data.begin(), v.data.end(), t.data.begin());
  return t;
}

Tensor5<float> onehot_tensor(const LabelVolume& v, int64_t channels) {
  Tensor5<float> t(1, channels, v.dims.nx, v.dims.ny, v.dims.nz);
  const int64_t n = v.dims.count();
  for (int64_t i = 0; i < n; ++i) t.data[size_t(v.data[size_t(i)] * n + i)] = 1.0f;
  return t;
}

ProbVolume probs_from_tensor(const Tensor5<float>& t, Spacing spacing) {
  ProbVolume p = make_probs({t.dx, t.dy, t.dz}, spacing, t.c, ProbVolume::Kind::Probs);
  std::copy(t.data.begin(), t.data.end(), p.data.begin());
  return p;
}

}  // namespace

// ---- training -----------------------------------------------------------------------

namespace {

struct SampleLoss {
  double total = 0.0;
  std::array<double, 3> per_stage{0, 0, 0};
};

// forward + loss + backward for one augmented sample; accumulates gradients
// scaled by `grad_scale` into `batch_grads`
SampleLoss train_sample(const CascadeModel<float>& model, const PipelineConfig& cfg,
                        const ScalarVolume& img, const LabelVolume& lab, bool has_mvo, Rng& rng,
                        CascadeGrads<float>& batch_grads, float grad_scale) {
  const Tensor5<float> x = image_tensor(img);
  CascadeTape<float> tape;
  const CascadeLogits<float> logits = cascade_forward(model, x, true, rng, &tape, has_mvo);

  const double lambdas[3] = {cfg.train.lambda1, cfg.train.lambda2, cfg.train.lambda3};
  SampleLoss out;
  Tensor5<float> g[3];
  const int stages = has_mvo ? 3 : 2;
  for (int s = 0; s < stages; ++s) {
    const Tensor5<float>& p = s == 0 ? logits.p1 : (s == 1 ? logits.p2 : logits.p3);
    const int64_t K = channels_for_stage(uint8_t(s + 1));
    const Tensor5<float> y = onehot_tensor(collapse_to_stage(lab, uint8_t(s + 1)), K);
    const Tensor5<float> q = softmax_channels_forward(p);
    Tensor5<float> grad_yhat(1, K, q.dx, q.dy, q.dz);
    out.per_stage[size_t(s)] =
        generalized_dice_core<float>(y.data.data(), q.data.data(), K, q.spatial(),
                                     cfg.train.dice_eps, cfg.train.weighting, grad_yhat.data.data());
    out.total += lambdas[s] * out.per_stage[size_t(s)];
    const float lf = float(lambdas[s]);
    for (auto& v : grad_yhat.data) v *= lf;
    g[s] = softmax_channels_backward(q, grad_yhat);
  }

  CascadeGrads<float> sample_grads = zero_grads(model);
  cascade_backward(model, tape, g[0], g[1], has_mvo ? g[2] : Tensor5<float>{}, sample_grads);
  add_scaled(batch_grads, sample_grads, grad_scale);
  return out;
}

}  // namespace

TrainResult train_member(const PipelineConfig& cfg, const Corpus& corpus,
                         const std::vector<size_t>& train_indices, uint64_t member_seed,
                         const std::string& checkpoint_path) {
  Rng rng_init(mix_seed(member_seed, 1));
  Rng rng_train(mix_seed(member_seed, 2));

  CascadeModel<float> model = build_cascade<float>(cfg.net, rng_init);
  CascadeOptimizer<float> opt(
      model, AdamConfig{cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.ema_decay});

  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t it = 0; it < cfg.train.iterations; ++it) {
    std::vector<size_t> samples;
    if (cfg.train.pair_sampling) {
      const auto [a, b] = sample_training_pair(corpus, train_indices, rng_train);
      samples = {a, b};
    } else {
      samples = {train_indices[rng_train.uniform_index(train_indices.size())]};
    }

    CascadeGrads<float> batch_grads = zero_grads(model);
    const float scale = 1.0f / float(samples.size());
    double batch_loss = 0.0;
    std::array<double, 3> stage_loss{0, 0, 0};
    for (size_t idx : samples) {
      const CorpusCase& c = corpus.cases[idx];
      const AugmentParams params = sample_params(rng_train, 5, cfg.augment);
      auto [img, lab] = apply_spatial(c.image, c.labels, params, cfg.grid.dims, cfg.grid.spacing);
      img = apply_intensity(img, lab, params);
      const SampleLoss sl =
          train_sample(model, cfg, img, lab, c.has_mvo, rng_train, batch_grads, scale);
      batch_loss += sl.total * double(scale);
      for (int s = 0; s < 3; ++s) stage_loss[size_t(s)] += sl.per_stage[size_t(s)] * double(scale);
    }
    opt.step(model, batch_grads);

    if (it == 0) res.initial_loss = batch_loss;
    res.final_loss = batch_loss;
    if (cfg.train.log_every > 0 && (it % cfg.train.log_every == 0 || it + 1 == cfg.train.iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("iter %6lld  loss %.4f  (stages %.4f %.4f %.4f)  %.1fs\n",
                  (long long)it, batch_loss, stage_loss[0], stage_loss[1], stage_loss[2], secs);
      std::fflush(stdout);
    }
    if (cfg.train.checkpoint_every > 0 && (it + 1) % cfg.train.checkpoint_every == 0 &&
        it + 1 < cfg.train.iterations) {
      save_checkpoint(model, opt.ema(),
                      checkpoint_path + ".iter" + std::to_string(it + 1));
    }
  }

  save_checkpoint(model, opt.ema(), checkpoint_path);
  res.checkpoint_paths.push_back(checkpoint_path);
  return res;
}

TrainResult train(const PipelineConfig& cfg) {
  const Corpus corpus = Corpus::load(cfg.corpus_dir);
  const auto [train_ids, val_ids] = split_case_ids(corpus);

  std::vector<size_t> train_idx;
  for (size_t i = 0; i < corpus.cases.size(); ++i)
    if (std::find(train_ids.begin(), train_ids.end(), corpus.cases[i].case_id) != train_ids.end())
      train_idx.push_back(i);

  if (cfg.train.pair_sampling) {
    // fail fast: the pair sampler needs both pools non-empty
    bool any_mvo = false, any_plain = false;
    for (size_t i : train_idx) (corpus.cases[i].has_mvo ? any_mvo : any_plain) = true;
    if (!any_mvo) throw EmptyPool("training split contains no MVO cases");
    if (!any_plain) throw EmptyPool("training split contains no MVO-free cases");
  }

  fs::create_directories(cfg.checkpoint_dir);
  {
    nlohmann::json j;
    j["train"] = train_ids;
    j["val"] = val_ids;
    std::ofstream out(cfg.checkpoint_dir + "/split.json", std::ios::trunc);
    out << j.dump(2) << "\n";
  }

  TrainResult combined;
  for (int m = 0; m < cfg.train.ensemble_size; ++m) {
    std::printf("== training ensemble member %d/%d ==\n", m + 1, cfg.train.ensemble_size);
    std::fflush(stdout);
    const std::string path = cfg.checkpoint_dir + "/model_" + std::to_string(m) + ".ckpt";
    const TrainResult r =
        train_member(cfg, corpus, train_idx, mix_seed(cfg.train.seed, uint64_t(m)), path);
    combined.checkpoint_paths.push_back(path);
    if (m == 0) {
      combined.initial_loss = r.initial_loss;
      combined.final_loss = r.final_loss;
    }
  }
  return combined;
}

// ---- inference ------------------------------------------------------------------------

EnsemblePrediction ensemble_predict(const std::vector<Checkpoint>& models, const ScalarVolume& raw,
                                    Subgroup sg, const PipelineConfig& cfg, bool postprocess) {
  if (models.empty()) throw ArchitectureMismatch("ensemble_predict: no models");
  for (const auto& m : models)
    if (!(m.config == models[0].config))
      throw ArchitectureMismatch("ensemble_predict: checkpoints disagree on architecture");

  const ScalarVolume img = preprocess_eval(raw, cfg.grid.dims, cfg.grid.spacing);
  const Tensor5<float> x = image_tensor(img);
  const int64_t K = sg == Subgroup::D8 ? 5 : 4;
  const int64_t n = cfg.grid.dims.count();

  EnsemblePrediction out;
  std::vector<double> acc(size_t(K * n), 0.0);
  Rng rng(0);  // dropout disabled at inference; never consumed

  for (const auto& ck : models) {
    const CascadeLogits<float> logits = cascade_forward(ck.ema, x, false, rng);
    const Tensor5<float>& routed_logits = sg == Subgroup::D8 ? logits.p3 : logits.p2;
    const Tensor5<float> routed =
        cfg.average_logits ? routed_logits : softmax_channels_forward(routed_logits);
    for (int64_t i = 0; i < K * n; ++i) acc[size_t(i)] += double(routed.data[size_t(i)]);

    // per-member hard volumes feed the ensemble CRPS
    const Tensor5<float> member_q =
        cfg.average_logits ? softmax_channels_forward(routed_logits) : routed;
    const LabelVolume member_labels = argmax_labels(probs_from_tensor(member_q, cfg.grid.spacing));
    for (int lbl = 1; lbl <= 4; ++lbl)
      out.member_ml[size_t(lbl - 1)].push_back(
          volume_ml(mask_of(member_labels, uint8_t(lbl)), cfg.grid.spacing));
  }

  Tensor5<float> mean(1, K, cfg.grid.dims.nx, cfg.grid.dims.ny, cfg.grid.dims.nz);
  const double inv = 1.0 / double(models.size());
  for (int64_t i = 0; i < K * n; ++i) mean.data[size_t(i)] = float(acc[size_t(i)] * inv);
  const Tensor5<float> mean_q = cfg.average_logits ? softmax_channels_forward(mean) : mean;

  out.mean_probs = probs_from_tensor(mean_q, cfg.grid.spacing);
  out.labels = argmax_labels(out.mean_probs);
  // the f-MIT channel of stage 2 shares the MIT code, so routed hard labels
  // are valid stage-3 codes with an empty MVO mask for M1/M12
  out.labels.schema = 3;
  if (postprocess) out.labels = postprocess_pipeline(out.labels, cfg.postprocess);
  return out;
}

// ---- evaluation ----------------------------------------------------------------------

const std::vector<std::string>& eval_label_names() {
  static const std::vector<std::string> names = {"LV", "MYO", "MIT", "MVO"};
  return names;
}

namespace {

CaseMetrics case_metrics(const std::string& case_id, const LabelVolume& pred,
                         const LabelVolume& gt,
                         const std::array<std::vector<double>, 4>* member_ml) {
  if (!(pred.dims == gt.dims) || !(pred.spacing == gt.spacing))
    throw GeometryMismatch(case_id + ": prediction and ground truth geometry differ");
  CaseMetrics cm;
  cm.case_id = case_id;
  for (int lbl = 1; lbl <= 4; ++lbl) {
    LabelCaseMetrics m;
    const auto pm = mask_of(pred, uint8_t(lbl));
    const auto gm = mask_of(gt, uint8_t(lbl));
    m.dsc = dice_percent(pm, gm, gt.dims);
    if (const auto sd = surface_distances(pm, gm, gt.dims, gt.spacing)) {
      m.hd = sd->hd;
      m.assd = sd->assd;
    }
    m.pred_ml = volume_ml(pm, pred.spacing);
    m.gt_ml = volume_ml(gm, gt.spacing);
    if (member_ml) m.member_ml = (*member_ml)[size_t(lbl - 1)];
    cm.per_label.push_back(std::move(m));
  }
  return cm;
}

std::array<std::vector<double>, 4> read_member_ml(const std::string& pred_path) {
  std::array<std::vector<double>, 4> out;
  std::ifstream in(sidecar_path(pred_path));
  if (!in) return out;
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("member_ml")) return out;
  for (size_t li = 0; li < eval_label_names().size(); ++li) {
    const auto& name = eval_label_names()[li];
    if (j["member_ml"].contains(name))
      for (const auto& v : j["member_ml"][name]) out[li].push_back(v.get<double>());
  }
  return out;
}

EvaluateResult evaluate_impl(const std::string& pred_dir, const std::string& gt_dir,
                             const std::vector<std::string>& case_ids, bool apply_pp,
                             const PostprocessOptions& pp) {
  std::vector<std::string> ids = case_ids;
  if (ids.empty()) {
    for (const auto& e : fs::directory_iterator(gt_dir)) {
      const std::string name = e.path().filename().string();
      if (name.size() > 8 && name.substr(name.size() - 8) == ".gt.mvol")
        ids.push_back(name.substr(0, name.size() - 8));
    }
    std::sort(ids.begin(), ids.end());
  }
  if (ids.empty()) throw MissingCase("no ground truth cases in " + gt_dir);

  EvaluateResult res;
  for (const auto& id : ids) {
    const std::string gt_path = gt_dir + "/" + id + ".gt.mvol";
    const std::string pred_path = pred_dir + "/" + id + ".pred.mvol";
    if (!fs::exists(gt_path)) throw MissingCase("missing ground truth for " + id);
    if (!fs::exists(pred_path)) throw MissingCase("missing prediction for " + id);
    const LabelVolume gt = read_label_mvol(gt_path);
    LabelVolume pred = read_label_mvol(pred_path);
    if (apply_pp) pred = postprocess_pipeline(pred, pp);
    const auto members = read_member_ml(pred_path);
    res.cases.push_back(case_metrics(id, pred, gt, &members));
  }
  res.report = build_report(res.cases, eval_label_names());
  return res;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path);
  out << text;
}

std::string fmt_diff(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%+.6f", v);
  return buf;
}

nlohmann::json diff_row(const LabelReport& post, const LabelReport& pre) {
  nlohmann::json j;
  j["label"] = post.label;
  const auto d = [](const std::optional<double>& a, const std::optional<double>& b) {
    return a && b ? nlohmann::json(fmt_diff(*a - *b)) : nlohmann::json(nullptr);
  };
  j["dsc_mean"] = d(post.dsc.mean, pre.dsc.mean);
  j["dsc_std"] = d(post.dsc.std, pre.dsc.std);
  j["hd_mean"] = d(post.hd.mean, pre.hd.mean);
  j["hd_std"] = d(post.hd.std, pre.hd.std);
  j["assd_mean"] = d(post.assd.mean, pre.assd.mean);
  j["assd_std"] = d(post.assd.std, pre.assd.std);
  j["cc"] = d(post.cc, pre.cc);
  j["mae"] = d(post.mae, pre.mae);
  j["loa"] = d(post.loa, pre.loa);
  j["crps"] = d(post.crps, pre.crps);
  return j;
}

}  // namespace

EvaluateResult evaluate(const std::string& pred_dir, const std::string& gt_dir,
                        const std::vector<std::string>& case_ids) {
  return evaluate_impl(pred_dir, gt_dir, case_ids, false, {});
}

void write_evaluation(const EvaluateResult& res, const std::string& report_dir) {
  fs::create_directories(report_dir);
  write_text(report_dir + "/report.json", report_to_json(res.report));
  write_text(report_dir + "/cases.csv", cases_to_csv(res.cases, eval_label_names()));
}

void write_ablation(const std::string& pred_dir, const std::string& gt_dir,
                    const PipelineConfig& cfg, const std::string& report_dir) {
  const EvaluateResult pre = evaluate_impl(pred_dir, gt_dir, {}, false, {});
  const EvaluateResult post = evaluate_impl(pred_dir, gt_dir, {}, true, cfg.postprocess);

  fs::create_directories(report_dir);
  write_text(report_dir + "/report_pre.json", report_to_json(pre.report));
  write_text(report_dir + "/report_post.json", report_to_json(post.report));
  write_text(report_dir + "/cases_pre.csv", cases_to_csv(pre.cases, eval_label_names()));
  write_text(report_dir + "/cases_post.csv", cases_to_csv(post.cases, eval_label_names()));

  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (size_t i = 0; i < post.report.per_label.size(); ++i)
    j["rows"].push_back(diff_row(post.report.per_label[i], pre.report.per_label[i]));
  j["mean_over_labels"] = diff_row(post.report.mean_over_labels, pre.report.mean_over_labels);
  write_text(report_dir + "/ablation_diff.json", j.dump(2) + "\n");
}

}  // namespace careseg
