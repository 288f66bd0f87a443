#pragma once

#include <array>
#include <string>
#include <vector>

#include "careseg/augment.hpp"
#include "careseg/hierarchy.hpp"
#include "careseg/loss.hpp"
#include "careseg/metrics.hpp"
#include "careseg/net.hpp"
#include "careseg/phantom.hpp"
#include "careseg/postprocess.hpp"
#include "careseg/volume.hpp"

namespace careseg {

// ---- configuration ---------------------------------------------------------

struct GridConfig {
  Dims dims{32, 32, 32};
  Spacing spacing{1.0f, 1.0f, 1.0f};
};

struct TrainSettings {
  int64_t iterations = 2000;
  double lr = 0.001;
  double ema_decay = 0.999;
  uint64_t seed = 1;
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
  double dice_eps = 1e-7;
  DiceWeighting weighting = DiceWeighting::Paper;
  int ensemble_size = 3;
  int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  int64_t log_every = 100;
  // The training objective pairs one MVO case with one non-MVO case per
  // iteration. Disabling pair sampling draws single uniform samples instead
  // (used for single-case overfitting runs).
  bool pair_sampling = true;
};

struct PipelineConfig {
  GridConfig grid;
  CascadeConfig net;
  TrainSettings train;
  AugmentRanges augment;
  PostprocessOptions postprocess;
  bool average_logits = false;  // ensemble averages probabilities by default
  std::string corpus_dir = "corpus";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";

  // Desk preset: runs end to end on a laptop CPU. Voxel-denominated
  // augmentation ranges scale with the grid (the stock ranges assume the
  // full-scale 128-voxel grid).
  static PipelineConfig desk();
  // Full-scale preset: 128^3 grid, 5 levels, 64 filters, 200k iterations,
  // ensemble of 10.
  static PipelineConfig paper();

  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// ---- corpus ------------------------------------------------------------------

struct CorpusCase {
  std::string case_id;
  Subgroup subgroup = Subgroup::M1;
  ScalarVolume image;      // normalized, native grid
  LabelVolume labels;      // native grid, stage-3 schema
  bool has_mvo = false;
};

struct Corpus {
  std::vector<CorpusCase> cases;

  static Corpus load(const std::string& dir);
  std::vector<size_t> mvo_pool() const;
  std::vector<size_t> non_mvo_pool() const;
};

// writes `count` phantom cases (image + ground truth + sidecars) into dir
void generate_corpus(const PipelineConfig& cfg, int64_t count, uint64_t seed,
                     const std::string& dir);

// deterministic 2:1 split by sorted case id (every third case held out)
std::pair<std::vector<std::string>, std::vector<std::string>> split_case_ids(const Corpus& corpus);

// uniform draw of one case from each pool
std::pair<size_t, size_t> sample_training_pair(const Corpus& corpus,
                                               const std::vector<size_t>& train_indices, Rng& rng);

// ---- training ------------------------------------------------------------------

struct TrainResult {
  std::vector<std::string> checkpoint_paths;
  double initial_loss = 0.0;  // mean batch loss of the first iteration
  double final_loss = 0.0;    // mean batch loss of the last iteration
};

// trains the full ensemble on the 2:1 train split of the corpus and writes
// model_<i>.ckpt plus split.json into the checkpoint directory
TrainResult train(const PipelineConfig& cfg);

// single member on explicit case indices (exposed for tests and tools)
TrainResult train_member(const PipelineConfig& cfg, const Corpus& corpus,
                         const std::vector<size_t>& train_indices, uint64_t member_seed,
                         const std::string& checkpoint_path);

// ---- inference --------------------------------------------------------------------

struct EnsemblePrediction {
  LabelVolume labels;              // stage-3 codes, model grid
  ProbVolume mean_probs;           // routed, averaged probabilities
  std::array<std::vector<double>, 4> member_ml;  // per label LV,MYO,MIT,MVO: one ml per member
};

// Runs every member (EMA weights, no dropout), routes stage 2/3 by subgroup,
// averages the routed probabilities, takes the argmax and optionally applies
// the post-processing pipeline.
EnsemblePrediction ensemble_predict(const std::vector<Checkpoint>& models, const ScalarVolume& raw,
                                    Subgroup sg, const PipelineConfig& cfg, bool postprocess);

// ---- evaluation ---------------------------------------------------------------------

struct EvaluateResult {
  CohortReport report;
  std::vector<CaseMetrics> cases;
};

// compares <id>.pred.mvol in pred_dir against <id>.gt.mvol in gt_dir over the
// four stage-3 foreground labels
EvaluateResult evaluate(const std::string& pred_dir, const std::string& gt_dir,
                        const std::vector<std::string>& case_ids = {});

// writes report.json + cases.csv; with ablate=true the predictions are
// additionally post-processed in-process and pre/post reports plus a
// difference row (post minus pre) are emitted
void write_evaluation(const EvaluateResult& res, const std::string& report_dir);
void write_ablation(const std::string& pred_dir, const std::string& gt_dir,
                    const PipelineConfig& cfg, const std::string& report_dir);

const std::vector<std::string>& eval_label_names();

}  // namespace careseg
