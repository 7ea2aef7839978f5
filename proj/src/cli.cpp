#include "lfss/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "lfss/config.hpp"
#include "lfss/evaluation.hpp"
#include "lfss/gradcheck.hpp"
#include "lfss/hash.hpp"
#include "lfss/protocol.hpp"
#include "lfss/rng.hpp"
#include "lfss/synth.hpp"

namespace lfss::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_seed) {
  cmd->add_option("--config", args.config_path, "toolkit config file")->required();
  cmd->add_option("--out-dir", args.out_dir, "directory for outputs and the run manifest");
  if (with_seed) cmd->add_option("--seed", args.seed, "override the subcommand's seed");
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed to write: " + path.string());
}

std::string format_scalar(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json file_fingerprint(const std::string& role, const fs::path& path) {
  json j;
  j["role"] = role;
  j["path"] = path.string();
  j["fnv64"] = hex64(fnv1a64_file(path));
  j["bytes"] = fs::file_size(path);
  return j;
}

json dataset_fingerprints(const std::string& role, const Dataset& ds) {
  json arr = json::array();
  for (const Frame& f : ds.frames) {
    arr.push_back(file_fingerprint(role + "/scan", f.scan));
    arr.push_back(file_fingerprint(role + "/labels", f.labels));
  }
  return arr;
}

/// The manifest is written before the operation runs; runs are
/// reconstructible from it (resolved config, seeds, input fingerprints).
void write_manifest(const fs::path& out_dir, const std::string& subcommand, const CommonArgs& args,
                    const ToolConfig& config, json inputs, json outputs, json extra = json::object()) {
  json m;
  m["tool"] = "lfss";
  m["subcommand"] = subcommand;
  m["config_file"] = args.config_path;
  m["config"] = config_to_json(config);
  if (args.seed.has_value()) m["seed_override"] = *args.seed;
  m["inputs"] = std::move(inputs);
  m["outputs"] = std::move(outputs);
  if (!extra.empty()) m["extra"] = extra;
  write_text_file(out_dir / "manifest.json", m.dump(2) + "\n");
}

std::string loss_trace_csv(const std::vector<Scalar>& trace) {
  std::string csv = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) {
    csv += std::to_string(e) + "," + format_scalar(trace[e]) + "\n";
  }
  return csv;
}

int synth_gen_cmd(const CommonArgs& args) {
  ToolConfig config = load_config(args.config_path);
  if (!config.has_synth) throw std::runtime_error("synth-gen: config has no [synth] section");
  if (args.seed.has_value()) {
    config.synth.seed_base_train = mix_seed(*args.seed, 1);
    config.synth.seed_shot_pool = mix_seed(*args.seed, 2);
    config.synth.seed_eval = mix_seed(*args.seed, 3);
  }
  fs::create_directories(args.out_dir);
  write_manifest(args.out_dir, "synth-gen", args, config,
                 json::array({file_fingerprint("config", args.config_path)}),
                 json::array({"base_train/", "shot_pool/", "eval/"}));
  write_corpus(args.out_dir, config.synth, config.taxonomy);
  std::cout << "wrote corpus splits base_train (" << config.synth.base_train_frames << "), shot_pool ("
            << config.synth.shot_pool_frames << "), eval (" << config.synth.eval_frames << ") under "
            << args.out_dir << "\n";
  return 0;
}

int train_base_cmd(const CommonArgs& args, const std::string& data_dir, std::optional<int> epochs) {
  ToolConfig config = load_config(args.config_path);
  if (args.seed.has_value()) config.train_base.seed = *args.seed;
  if (epochs.has_value()) config.train_base.epochs = *epochs;
  const Dataset dataset = Dataset::from_dir(data_dir, "train");
  fs::create_directories(args.out_dir);
  json inputs = dataset_fingerprints("train", dataset);
  inputs.push_back(file_fingerprint("config", args.config_path));
  write_manifest(args.out_dir, "train-base", args, config, std::move(inputs),
                 json::array({"base_model.json", "loss_trace.csv"}));

  const TrainResult result = train_base(dataset, config);
  save_checkpoint(fs::path(args.out_dir) / "base_model.json", result.params, config.taxonomy.fingerprint());
  write_text_file(fs::path(args.out_dir) / "loss_trace.csv", loss_trace_csv(result.epoch_loss));
  if (!result.epoch_loss.empty()) {
    std::cout << "base training: " << result.epoch_loss.size() << " epochs, first loss "
              << result.epoch_loss.front() << ", last loss " << result.epoch_loss.back() << "\n";
  }
  std::cout << "checkpoint written to " << (fs::path(args.out_dir) / "base_model.json").string() << "\n";
  return 0;
}

int sample_shots_cmd(const CommonArgs& args, const std::string& data_dir, std::optional<int> shots) {
  ToolConfig config = load_config(args.config_path);
  if (args.seed.has_value()) config.finetune.shot_seed = *args.seed;
  if (shots.has_value()) config.finetune.shots = *shots;
  const Dataset dataset = Dataset::from_dir(data_dir, "shot_pool");
  fs::create_directories(args.out_dir);
  json inputs = dataset_fingerprints("shot_pool", dataset);
  inputs.push_back(file_fingerprint("config", args.config_path));
  write_manifest(args.out_dir, "sample-shots", args, config, std::move(inputs),
                 json::array({"shots.json"}));

  const ShotSample sample =
      sample_shots(dataset, config.taxonomy, config.finetune.shots, config.finetune.shot_seed);
  write_text_file(fs::path(args.out_dir) / "shots.json", sample.to_json().dump(2) + "\n");
  for (const std::string& w : sample.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "sampled " << config.finetune.shots << " shot(s) per novel class into "
            << (fs::path(args.out_dir) / "shots.json").string() << "\n";
  return 0;
}

struct FinetuneOverrides {
  std::optional<int> epochs;
  std::optional<bool> unbiased_ce;
  std::optional<std::string> kd;
  std::optional<bool> lovasz;
  std::optional<std::string> freeze;
};

int finetune_cmd(const CommonArgs& args, const std::string& data_dir, const std::string& base_path,
                 const std::string& shots_path, const FinetuneOverrides& over) {
  ToolConfig config = load_config(args.config_path);
  if (args.seed.has_value()) config.finetune.seed = *args.seed;
  if (over.epochs.has_value()) config.finetune.epochs = *over.epochs;
  if (over.unbiased_ce.has_value()) {
    config.finetune.loss.ce = *over.unbiased_ce ? CeMode::kUnbiased : CeMode::kOriginal;
  }
  if (over.kd.has_value()) config.finetune.loss.kd = parse_kd_mode(*over.kd);
  if (over.lovasz.has_value()) config.finetune.loss.lovasz = *over.lovasz;
  if (over.freeze.has_value()) config.finetune.freeze = parse_freeze_mode(*over.freeze);

  const Dataset dataset = Dataset::from_dir(data_dir, "shot_pool");
  const ModelParams base = load_checkpoint(base_path, config.taxonomy.fingerprint());
  ShotSample shots;
  {
    std::ifstream in(shots_path);
    if (!in) throw std::runtime_error("cannot open shot sample: " + shots_path);
    json j;
    in >> j;
    shots = ShotSample::from_json(j);
  }

  fs::create_directories(args.out_dir);
  json inputs = dataset_fingerprints("shot_pool", dataset);
  inputs.push_back(file_fingerprint("config", args.config_path));
  inputs.push_back(file_fingerprint("base_checkpoint", base_path));
  inputs.push_back(file_fingerprint("shots", shots_path));
  write_manifest(args.out_dir, "finetune", args, config, std::move(inputs),
                 json::array({"finetuned_model.json", "loss_trace.csv"}));

  const TrainResult result = finetune(base, dataset, shots, config);
  save_checkpoint(fs::path(args.out_dir) / "finetuned_model.json", result.params,
                  config.taxonomy.fingerprint());
  write_text_file(fs::path(args.out_dir) / "loss_trace.csv", loss_trace_csv(result.epoch_loss));
  std::cout << "finetuned checkpoint written to "
            << (fs::path(args.out_dir) / "finetuned_model.json").string() << "\n";
  return 0;
}

int predict_cmd(const CommonArgs& args, const std::string& checkpoint_path, const std::string& scan_path) {
  const ToolConfig config = load_config(args.config_path);
  const ModelParams params = load_checkpoint(checkpoint_path, config.taxonomy.fingerprint());
  fs::create_directories(args.out_dir);
  const std::string out_name = fs::path(scan_path).stem().string() + ".label";
  write_manifest(args.out_dir, "predict", args, config,
                 json::array({file_fingerprint("config", args.config_path),
                              file_fingerprint("checkpoint", checkpoint_path),
                              file_fingerprint("scan", scan_path)}),
                 json::array({out_name}));

  const PointCloud cloud = read_scan(scan_path);
  const std::vector<ClassId> preds = predict(params, cloud, config.projection);
  std::vector<std::uint16_t> raw;
  raw.reserve(preds.size());
  for (ClassId id : preds) raw.push_back(config.taxonomy.raw_for_class(id));
  write_labels(fs::path(args.out_dir) / out_name, raw);
  std::cout << "wrote " << preds.size() << " point labels to "
            << (fs::path(args.out_dir) / out_name).string() << "\n";
  return 0;
}

std::vector<std::pair<fs::path, fs::path>> eval_pairs(const std::string& truth, const std::string& pred) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(truth) != fs::is_directory(pred)) {
    throw std::runtime_error("eval: --truth and --pred must both be files or both be directories");
  }
  if (!fs::is_directory(truth)) {
    pairs.emplace_back(truth, pred);
    return pairs;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(truth)) {
    if (entry.path().extension() == ".label") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("eval: no .label files under " + truth);
  for (const fs::path& t : files) {
    const fs::path p = fs::path(pred) / t.filename();
    if (!fs::exists(p)) throw std::runtime_error("eval: missing prediction file " + p.string());
    pairs.emplace_back(t, p);
  }
  return pairs;
}

int eval_cmd(const CommonArgs& args, const std::string& truth, const std::string& pred) {
  const ToolConfig config = load_config(args.config_path);
  const auto pairs = eval_pairs(truth, pred);
  fs::create_directories(args.out_dir);
  json inputs = json::array({file_fingerprint("config", args.config_path)});
  for (const auto& [t, p] : pairs) {
    inputs.push_back(file_fingerprint("truth", t));
    inputs.push_back(file_fingerprint("pred", p));
  }
  write_manifest(args.out_dir, "eval", args, config, std::move(inputs),
                 json::array({"report.json", "report.csv"}));

  ConfusionMatrix conf = ConfusionMatrix::zero(config.taxonomy.all_classes());
  for (const auto& [truth_path, pred_path] : pairs) {
    const auto bytes = fs::file_size(truth_path);
    if (bytes % 4 != 0) throw std::runtime_error("eval: label file size not divisible by 4: " + truth_path.string());
    const Index count = static_cast<Index>(bytes / 4);
    const auto truth_ids = config.taxonomy.classes_from_raw(read_labels(truth_path, count));
    const auto pred_ids = config.taxonomy.classes_from_raw(read_labels(pred_path, count));
    for (std::size_t i = 0; i < truth_ids.size(); ++i) {
      if (pred_ids[i] == kIgnore && truth_ids[i] != kIgnore) {
        throw std::runtime_error("eval: prediction maps to the ignore class at point " + std::to_string(i) +
                                 " of " + pred_path.string());
      }
    }
    conf.accumulate(pred_ids, truth_ids);
  }
  EvalReport report = make_report(conf, config.taxonomy, config.evaluation);
  report.manifest_reference = "manifest.json";
  write_text_file(fs::path(args.out_dir) / "report.json", report.to_json().dump(2) + "\n");
  write_text_file(fs::path(args.out_dir) / "report.csv", report.per_class_csv());
  std::cout << report.summary_table();
  return 0;
}

int project_cmd(const CommonArgs& args, const std::string& scan_path) {
  const ToolConfig config = load_config(args.config_path);
  fs::create_directories(args.out_dir);
  write_manifest(args.out_dir, "project", args, config,
                 json::array({file_fingerprint("config", args.config_path),
                              file_fingerprint("scan", scan_path)}),
                 json::array({"range_image.bin", "range_image.json"}));

  const PointCloud cloud = read_scan(scan_path);
  const RangeImage img = project(cloud, config.projection);

  // five float32 planes (x, y, z, intensity, range) then one uint8 validity
  // plane, each h*w row-major
  std::ofstream out(fs::path(args.out_dir) / "range_image.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write range_image.bin");
  for (const Matrix& ch : img.channels) {
    for (int v = 0; v < img.height(); ++v) {
      for (int u = 0; u < img.width(); ++u) {
        const float f = static_cast<float>(ch(v, u));
        out.write(reinterpret_cast<const char*>(&f), sizeof(float));
      }
    }
  }
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      const unsigned char b = img.valid(v, u) ? 1 : 0;
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  json meta;
  meta["width"] = img.width();
  meta["height"] = img.height();
  meta["channels"] = {"x", "y", "z", "intensity", "range"};
  meta["valid_count"] = img.valid_count;
  meta["points"] = cloud.size();
  write_text_file(fs::path(args.out_dir) / "range_image.json", meta.dump(2) + "\n");
  std::cout << "projected " << cloud.size() << " points; " << img.valid_count << " of "
            << img.width() * img.height() << " pixels valid\n";
  return 0;
}

int gradcheck_cmd(std::optional<std::uint64_t> seed, int instances, const std::string& config_path,
                  const std::string& out_dir) {
  const GradCheckReport report = run_gradient_checks(seed.value_or(7), instances);
  std::cout << report.summary();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json m;
    m["tool"] = "lfss";
    m["subcommand"] = "gradcheck";
    m["seed"] = seed.value_or(7);
    m["instances_per_case"] = instances;
    if (!config_path.empty()) {
      m["config_file"] = config_path;
      m["inputs"] = json::array({file_fingerprint("config", config_path)});
    }
    m["outputs"] = json::array({"gradcheck.txt"});
    write_text_file(fs::path(out_dir) / "manifest.json", m.dump(2) + "\n");
    write_text_file(fs::path(out_dir) / "gradcheck.txt", report.summary());
  }
  return report.passed() ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"background-aware generalized few-shot LiDAR range-image segmentation toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth-gen", "generate a synthetic labeled corpus");
  add_common(synth_cmd, synth_args, true);

  CommonArgs train_args;
  std::string train_data;
  std::optional<int> train_epochs;
  CLI::App* train_cmd = app.add_subcommand("train-base", "train the base model on a corpus split");
  add_common(train_cmd, train_args, true);
  train_cmd->add_option("--data", train_data, "split directory (scans/ + labels/)")->required();
  train_cmd->add_option("--epochs", train_epochs, "override [train_base] epochs");

  CommonArgs shots_args;
  std::string shots_data;
  std::optional<int> shots_n;
  CLI::App* shots_cmd = app.add_subcommand("sample-shots", "draw per-class shot frames from a split");
  add_common(shots_cmd, shots_args, true);
  shots_cmd->add_option("--data", shots_data, "split directory (scans/ + labels/)")->required();
  shots_cmd->add_option("--shots", shots_n, "override [finetune] shots");

  CommonArgs ft_args;
  std::string ft_data, ft_base, ft_shots;
  FinetuneOverrides ft_over;
  CLI::App* ft_cmd = app.add_subcommand("finetune", "fine-tune a base checkpoint on sampled shots");
  add_common(ft_cmd, ft_args, true);
  ft_cmd->add_option("--data", ft_data, "split directory the shots index into")->required();
  ft_cmd->add_option("--base", ft_base, "base-model checkpoint")->required();
  ft_cmd->add_option("--shots", ft_shots, "shots.json from sample-shots")->required();
  ft_cmd->add_option("--epochs", ft_over.epochs, "override [finetune] epochs");
  ft_cmd->add_flag("--unbiased-ce,!--no-unbiased-ce", ft_over.unbiased_ce,
                   "background-aware cross-entropy (off selects the original form)");
  ft_cmd->add_option("--kd", ft_over.kd, "distillation mode: off, original or unbiased");
  ft_cmd->add_flag("--lovasz,!--no-lovasz", ft_over.lovasz, "include the Lovasz-Softmax term");
  ft_cmd->add_option("--freeze", ft_over.freeze, "freeze mode: none, backbone or backbone+base_heads");

  CommonArgs predict_args;
  std::string predict_checkpoint, predict_scan;
  CLI::App* predict_cmd_app = app.add_subcommand("predict", "label one scan with a checkpoint");
  add_common(predict_cmd_app, predict_args, false);
  predict_cmd_app->add_option("--checkpoint", predict_checkpoint, "model checkpoint")->required();
  predict_cmd_app->add_option("--scan", predict_scan, "scan file (.bin)")->required();

  CommonArgs eval_args;
  std::string eval_truth, eval_pred;
  CLI::App* eval_cmd_app = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(eval_cmd_app, eval_args, false);
  eval_cmd_app->add_option("--truth", eval_truth, "truth label file or directory")->required();
  eval_cmd_app->add_option("--pred", eval_pred, "prediction label file or directory")->required();

  CommonArgs project_args;
  std::string project_scan;
  CLI::App* project_cmd_app = app.add_subcommand("project", "project one scan to a range image dump");
  add_common(project_cmd_app, project_args, false);
  project_cmd_app->add_option("--scan", project_scan, "scan file (.bin)")->required();

  std::optional<std::uint64_t> gc_seed;
  int gc_instances = 20;
  std::string gc_config, gc_out;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed, "suite seed");
  gc_cmd->add_option("--instances", gc_instances, "random instances per loss case");
  gc_cmd->add_option("--config", gc_config, "config file recorded in the manifest (the suite itself needs none)");
  gc_cmd->add_option("--out-dir", gc_out, "also write gradcheck.txt and a manifest here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth_cmd->parsed()) return synth_gen_cmd(synth_args);
    if (train_cmd->parsed()) return train_base_cmd(train_args, train_data, train_epochs);
    if (shots_cmd->parsed()) return sample_shots_cmd(shots_args, shots_data, shots_n);
    if (ft_cmd->parsed()) return finetune_cmd(ft_args, ft_data, ft_base, ft_shots, ft_over);
    if (predict_cmd_app->parsed()) return predict_cmd(predict_args, predict_checkpoint, predict_scan);
    if (eval_cmd_app->parsed()) return eval_cmd(eval_args, eval_truth, eval_pred);
    if (project_cmd_app->parsed()) return project_cmd(project_args, project_scan);
    if (gc_cmd->parsed()) return gradcheck_cmd(gc_seed, gc_instances, gc_config, gc_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("lfss");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lfss::cli
