// careseg command line: phantom generation, ensemble training, prediction,
// post-processing, evaluation and slice overlays.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "careseg/overlay.hpp"
#include "careseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace careseg;

namespace {

PipelineConfig load_config(const std::string& path, const std::string& preset) {
  if (!path.empty()) return PipelineConfig::load(path);
  return preset == "paper" ? PipelineConfig::paper() : PipelineConfig::desk();
}

std::vector<Checkpoint> load_models(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".ckpt") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoFailure("no .ckpt files in " + dir);
  std::vector<Checkpoint> models;
  for (const auto& f : files) models.push_back(load_checkpoint(f));
  return models;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"careseg: cascaded cardiac LGE segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, preset = "desk";

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic phantom corpus");
  int64_t gen_count = 60;
  uint64_t gen_seed = 1;
  std::string gen_out = "corpus";
  gen->add_option("--count", gen_count, "number of cases");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--config", config_path, "pipeline config JSON");
  gen->add_option("--preset", preset, "desk|paper (when no config file)");

  // train
  auto* tr = app.add_subcommand("train", "train the cascade ensemble");
  std::string tr_out, tr_corpus;
  tr->add_option("--config", config_path, "pipeline config JSON");
  tr->add_option("--preset", preset, "desk|paper (when no config file)");
  tr->add_option("--out", tr_out, "checkpoint directory (overrides config)");
  tr->add_option("--corpus", tr_corpus, "corpus directory (overrides config)");

  // predict
  auto* pr = app.add_subcommand("predict", "ensemble prediction for one volume");
  std::string pr_models, pr_in, pr_out, pr_subgroup;
  bool pr_no_pp = false;
  pr->add_option("--models", pr_models, "checkpoint directory")->required();
  pr->add_option("--in", pr_in, "input image .mvol")->required();
  pr->add_option("--out", pr_out, "output label .mvol")->required();
  pr->add_option("--subgroup", pr_subgroup, "D8|M1|M12 (default: from sidecar)");
  pr->add_flag("--no-postprocess", pr_no_pp, "skip the post-processing pipeline");
  pr->add_option("--config", config_path, "pipeline config JSON");
  pr->add_option("--preset", preset, "desk|paper (when no config file)");

  // postprocess
  auto* pp = app.add_subcommand("postprocess", "apply anatomical post-processing to labels");
  std::string pp_in, pp_out, pp_base = "zmax";
  bool pp_skip_outliers = false, pp_skip_3d = false, pp_skip_2d = false, pp_skip_top = false;
  pp->add_option("--in", pp_in, "input label .mvol")->required();
  pp->add_option("--out", pp_out, "output label .mvol")->required();
  pp->add_flag("--skip-3d", pp_skip_3d, "skip 3D disconnected component removal");
  pp->add_flag("--skip-2d", pp_skip_2d, "skip per-slice 2D component removal");
  pp->add_flag("--skip-topslice", pp_skip_top, "skip top-most slice removal");
  pp->add_flag("--skip-outliers", pp_skip_outliers, "skip outlier region replacement");
  pp->add_option("--base-at", pp_base, "zmax|zmin: which z end is the base");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "per-case metrics and cohort report");
  std::string ev_pred, ev_gt, ev_report;
  bool ev_ablate = false;
  ev->add_option("--pred", ev_pred, "prediction directory")->required();
  ev->add_option("--gt", ev_gt, "ground truth directory")->required();
  ev->add_option("--report", ev_report, "report output directory")->required();
  ev->add_flag("--ablate-postproc", ev_ablate,
               "evaluate raw predictions before and after post-processing");
  ev->add_option("--config", config_path, "pipeline config JSON");
  ev->add_option("--preset", preset, "desk|paper (when no config file)");

  // overlay
  auto* ov = app.add_subcommand("overlay", "export per-slice PNGs with label colors");
  std::string ov_img, ov_labels, ov_out;
  ov->add_option("--image", ov_img, "image .mvol")->required();
  ov->add_option("--labels", ov_labels, "label .mvol")->required();
  ov->add_option("--out", ov_out, "output directory")->required();

  // init-config
  auto* ic = app.add_subcommand("init-config", "write a full config file");
  std::string ic_out = "careseg.json";
  ic->add_option("--out", ic_out, "config path");
  ic->add_option("--preset", preset, "desk|paper");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const PipelineConfig cfg = load_config(config_path, preset);
      generate_corpus(cfg, gen_count, gen_seed, gen_out);
      std::printf("wrote %lld cases to %s\n", (long long)gen_count, gen_out.c_str());
    } else if (tr->parsed()) {
      PipelineConfig cfg = load_config(config_path, preset);
      if (!tr_out.empty()) cfg.checkpoint_dir = tr_out;
      if (!tr_corpus.empty()) cfg.corpus_dir = tr_corpus;
      const TrainResult r = train(cfg);
      std::printf("trained %zu members; first-member loss %.4f -> %.4f\n",
                  r.checkpoint_paths.size(), r.initial_loss, r.final_loss);
    } else if (pr->parsed()) {
      const PipelineConfig cfg = load_config(config_path, preset);
      const std::vector<Checkpoint> models = load_models(pr_models);
      const ScalarVolume raw = read_scalar_mvol(pr_in);
      const auto meta = read_sidecar(pr_in);
      std::string sg_str = pr_subgroup;
      if (sg_str.empty()) {
        if (!meta) throw MissingCase("no --subgroup given and no sidecar next to " + pr_in);
        sg_str = meta->subgroup;
      }
      const Subgroup sg = subgroup_from_string(sg_str);
      const EnsemblePrediction pred = ensemble_predict(models, raw, sg, cfg, !pr_no_pp);

      // back to the native grid so predictions align with the ground truth
      const LabelVolume native = resample_nearest(pred.labels, raw.dims, raw.spacing);
      write_mvol(native, pr_out);
      {
        nlohmann::json j;
        j["case_id"] = meta ? meta->case_id : fs::path(pr_in).stem().string();
        j["subgroup"] = sg_str;
        nlohmann::json ml;
        const auto& names = eval_label_names();
        for (size_t li = 0; li < names.size(); ++li) ml[names[li]] = pred.member_ml[li];
        j["member_ml"] = ml;
        std::ofstream out(sidecar_path(pr_out), std::ios::trunc);
        out << j.dump(2) << "\n";
      }
      std::printf("wrote %s\n", pr_out.c_str());
    } else if (pp->parsed()) {
      PostprocessOptions opt;
      opt.component_3d = !pp_skip_3d;
      opt.component_2d = !pp_skip_2d;
      opt.topmost_slice = !pp_skip_top;
      opt.outlier_regions = !pp_skip_outliers;
      opt.base_at = pp_base == "zmin" ? BaseAt::ZMin : BaseAt::ZMax;
      LabelVolume v = read_label_mvol(pp_in);
      v = postprocess_pipeline(v, opt);
      write_mvol(v, pp_out);
      std::printf("wrote %s\n", pp_out.c_str());
    } else if (ev->parsed()) {
      const PipelineConfig cfg = load_config(config_path, preset);
      if (ev_ablate) {
        write_ablation(ev_pred, ev_gt, cfg, ev_report);
      } else {
        write_evaluation(evaluate(ev_pred, ev_gt), ev_report);
      }
      std::printf("wrote reports to %s\n", ev_report.c_str());
    } else if (ov->parsed()) {
      const ScalarVolume img = read_scalar_mvol(ov_img);
      const LabelVolume labels = read_label_mvol(ov_labels);
      write_overlay_slices(img, labels, ov_out);
      std::printf("wrote %lld slices to %s\n", (long long)img.dims.nz, ov_out.c_str());
    } else if (ic->parsed()) {
      const PipelineConfig cfg = preset == "paper" ? PipelineConfig::paper() : PipelineConfig::desk();
      cfg.save(ic_out);
      std::printf("wrote %s\n", ic_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
