// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lfss/cli.hpp"
#include "lfss/config.hpp"
#include "lfss/evaluation.hpp"
#include "lfss/gradcheck.hpp"
#include "lfss/losses.hpp"
#include "lfss/protocol.hpp"
#include "lfss/rng.hpp"
#include "lfss/synth.hpp"
#include "oracles.hpp"

using namespace lfss;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void report(int number, const std::string& what, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", number, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

void criterion_1_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const GradCheckReport rep = run_gradient_checks(/*seed=*/20240817, /*instances_per_case=*/20);
  const double elapsed = seconds_since(start);
  Scalar worst = 0;
  for (const auto& c : rep.cases) worst = std::max(worst, c.worst_error);
  std::ostringstream detail;
  detail << rep.cases.size() << " loss/model cases, worst rel. error " << worst << ", " << elapsed << " s";
  report(1, "analytic gradients match central finite differences", rep.passed() && elapsed < 60.0,
         detail.str());
}

void criterion_2_lovasz_oracle() {
  bool vertices_ok = true;
  Scalar worst = 0;
  long long checked = 0;
  for (int m = 1; m <= 8 && vertices_ok; ++m) {
    for (int fg_bits = 0; fg_bits < (1 << m); ++fg_bits) {
      for (int err_bits = 0; err_bits < (1 << m); ++err_bits) {
        Vector errors(m);
        Eigen::Array<bool, Eigen::Dynamic, 1> fg(m);
        std::vector<bool> fg_vec(static_cast<std::size_t>(m)), err_vec(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
          fg[i] = (fg_bits >> i) & 1;
          fg_vec[static_cast<std::size_t>(i)] = fg[i];
          err_vec[static_cast<std::size_t>(i)] = (err_bits >> i) & 1;
          errors[i] = err_vec[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        }
        const Scalar expected = oracles::jaccard_loss_at_vertex(fg_vec, err_vec);
        const Scalar got = lovasz_extension(errors, fg).value;
        worst = std::max(worst, std::abs(got - expected));
        ++checked;
        if (std::abs(got - expected) > 1e-9) vertices_ok = false;
      }
    }
  }

  bool convex_ok = true;
  Rng rng(555);
  for (int it = 0; it < 100; ++it) {
    const Index m = 2 + static_cast<Index>(rng.below(7));
    Eigen::Array<bool, Eigen::Dynamic, 1> fg(m);
    for (Index i = 0; i < m; ++i) fg[i] = rng.below(2) == 1;
    Vector a(m), b(m);
    for (Index i = 0; i < m; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    const Scalar fa = lovasz_extension(a, fg).value;
    const Scalar fb = lovasz_extension(b, fg).value;
    const Scalar fm = lovasz_extension((a + b) / 2, fg).value;
    if (fm > (fa + fb) / 2 + 1e-9) convex_ok = false;
  }

  std::ostringstream detail;
  detail << checked << " vertices (M <= 8), worst |diff| " << worst << "; 100 midpoint convexity checks";
  report(2, "Lovasz extension equals discrete Jaccard at vertices and is midpoint-convex",
         vertices_ok && convex_ok, detail.str());
}

void criterion_3_gibbs() {
  Rng rng(777);
  const std::vector<ClassId> student_order = {0, 1, 2, 3, 4};
  const std::vector<ClassId> teacher_order = {0, 1, 2};
  bool bound_ok = true;
  for (int it = 0; it < 1000; ++it) {
    const Index m = 1 + static_cast<Index>(rng.below(4));
    Matrix sl(m, 5), tl(m, 3);
    for (Index i = 0; i < m; ++i) {
      for (Index c = 0; c < 5; ++c) sl(i, c) = rng.uniform(-4, 4);
      for (Index c = 0; c < 3; ++c) tl(i, c) = rng.uniform(-4, 4);
    }
    const ProbMap s = softmax(LogitsMap{sl, student_order});
    const ProbMap t = softmax(LogitsMap{tl, teacher_order});
    Scalar entropy = 0;
    for (Index i = 0; i < m; ++i) {
      for (Index c = 0; c < 3; ++c) entropy -= t.values(i, c) * std::log(t.values(i, c));
    }
    entropy /= static_cast<Scalar>(m);
    if (kd_loss(s, t, 0, KdMode::kUnbiased).value < entropy - 1e-12) bound_ok = false;
  }

  // equality when the aggregated student row reproduces the teacher row
  bool equality_ok = true;
  for (int it = 0; it < 200; ++it) {
    Matrix tl(1, 3);
    for (Index c = 0; c < 3; ++c) tl(0, c) = rng.uniform(-2, 2);
    const ProbMap t = softmax(LogitsMap{tl, teacher_order});
    Matrix s(1, 5);
    const Scalar split = rng.uniform();
    s(0, 0) = 0.0;                          // student's own background column
    s(0, 1) = t.values(0, 1);               // base columns copied
    s(0, 2) = t.values(0, 2);
    s(0, 3) = split * t.values(0, 0);       // novel columns share the teacher's background mass
    s(0, 4) = (1 - split) * t.values(0, 0);
    const Scalar value = kd_loss(ProbMap{s, student_order}, t, 0, KdMode::kUnbiased).value;
    Scalar entropy = 0;
    for (Index c = 0; c < 3; ++c) entropy -= t.values(0, c) * std::log(t.values(0, c));
    if (std::abs(value - entropy) > 1e-9) equality_ok = false;
  }
  report(3, "distillation respects the Gibbs bound with equality at aggregation",
         bound_ok && equality_ok, "1000 bound instances, 200 equality instances");
}

void criterion_4_reductions() {
  Rng rng(888);
  const std::vector<ClassId> no_base_order = {0, 3, 4};
  ClassWeights w;
  for (ClassId id : {0, 1, 2, 3, 4}) w.weights[id] = rng.uniform(0.5, 2.0);

  Scalar worst_value = 0, worst_grad = 0;
  for (int it = 0; it < 200; ++it) {
    const Index m = 1 + static_cast<Index>(rng.below(8));
    Matrix sl(m, 3);
    for (Index i = 0; i < m; ++i) {
      for (Index c = 0; c < 3; ++c) sl(i, c) = rng.uniform(-3, 3);
    }
    const ProbMap s = softmax(LogitsMap{sl, no_base_order});
    const ProbMap base{Matrix::Ones(m, 1), {0}};  // C_b empty: only the background column
    std::vector<ClassId> labels;
    for (Index i = 0; i < m; ++i) labels.push_back(no_base_order[rng.below(3)]);
    const LossResult a = unbiased_ce(s, base, labels, w, 0, BackgroundTerm::kCurrentModel);
    const LossResult b = weighted_ce(s, labels, w);
    worst_value = std::max(worst_value, std::abs(a.value - b.value));
    worst_grad = std::max(worst_grad, (a.grad - b.grad).cwiseAbs().maxCoeff());
  }
  const bool reduction_ok = worst_value <= 1e-12 && worst_grad <= 1e-12;

  // paper variant: background rows carry exactly zero gradient
  bool frozen_ok = true;
  const std::vector<ClassId> student_order = {0, 1, 2, 3, 4};
  const std::vector<ClassId> teacher_order = {0, 1, 2};
  for (int it = 0; it < 200; ++it) {
    const Index m = 1 + static_cast<Index>(rng.below(8));
    Matrix sl(m, 5), tl(m, 3);
    for (Index i = 0; i < m; ++i) {
      for (Index c = 0; c < 5; ++c) sl(i, c) = rng.uniform(-3, 3);
      for (Index c = 0; c < 3; ++c) tl(i, c) = rng.uniform(-3, 3);
    }
    const ProbMap s = softmax(LogitsMap{sl, student_order});
    const ProbMap t = softmax(LogitsMap{tl, teacher_order});
    std::vector<ClassId> labels;
    const std::vector<ClassId> space = {0, 3, 4};
    for (Index i = 0; i < m; ++i) labels.push_back(space[rng.below(3)]);
    const LossResult r = unbiased_ce(s, t, labels, w, 0, BackgroundTerm::kFrozenBase);
    for (Index i = 0; i < m; ++i) {
      if (labels[static_cast<std::size_t>(i)] == 0 && r.grad.row(i).cwiseAbs().maxCoeff() != 0.0) {
        frozen_ok = false;
      }
    }
  }
  std::ostringstream detail;
  detail << "worst value diff " << worst_value << ", worst grad diff " << worst_grad;
  report(4, "unbiased CE reduces to weighted CE without base classes; frozen background has zero gradient",
         reduction_ok && frozen_ok, detail.str());
}

void criterion_5_projection() {
  ProjectionConfig cfg;
  cfg.width = 2048;
  cfg.height = 64;
  cfg.fov_up = 3 * ProjectionConfig::kDegree;
  cfg.fov_down = 25 * ProjectionConfig::kDegree;
  const PixelCoord a = project_point(10, 0, 0, cfg);
  const PixelCoord b = project_point(3, 4, 0, cfg);
  const bool hand_ok = a.u == 1024 && a.v == 6 && b.u == 721 && b.v == 6;

  ProjectionConfig small;
  small.width = 96;
  small.height = 12;
  small.fov_up = 8 * ProjectionConfig::kDegree;
  small.fov_down = 22 * ProjectionConfig::kDegree;
  Rng rng(999);
  bool invariants_ok = true;
  for (int it = 0; it < 1000 && invariants_ok; ++it) {
    const Index n = 1 + static_cast<Index>(rng.below(200));
    PointCloud cloud;
    cloud.points.resize(n, 4);
    for (Index i = 0; i < n; ++i) {
      const Scalar yaw = rng.uniform(-3.14, 3.14);
      const Scalar pitch = rng.uniform(-0.7, 0.3);
      const Scalar r = rng.uniform(0.3, 80.0);
      cloud.points(i, 0) = r * std::cos(pitch) * std::cos(yaw);
      cloud.points(i, 1) = r * std::cos(pitch) * std::sin(yaw);
      cloud.points(i, 2) = r * std::sin(pitch);
      cloud.points(i, 3) = rng.uniform(0.0, 1.0);
    }
    const RangeImage img = project(cloud, small);
    for (Index i = 0; i < n; ++i) {
      const PixelCoord px =
          project_point(cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2), small);
      if (px.u < 0 || px.u >= small.width || px.v < 0 || px.v >= small.height) invariants_ok = false;
      if (!img.valid(px.v, px.u)) invariants_ok = false;
      if (img.channels[4](px.v, px.u) > cloud.range(i) + 1e-12) invariants_ok = false;
    }
    for (int v = 0; v < small.height; ++v) {
      for (int u = 0; u < small.width; ++u) {
        if (img.valid(v, u) && img.point_index(v, u) < 0) invariants_ok = false;
      }
    }
  }
  report(5, "projection matches hand-derived pixels and the nearest-wins round trip",
         hand_ok && invariants_ok, "2 hand examples, 1000 random clouds");
}

void criterion_6_miou_oracle() {
  Rng rng(1111);
  const std::vector<ClassId> classes = {0, 1, 2, 3, 4};
  bool ok = true;
  for (int it = 0; it < 1000 && ok; ++it) {
    const Index n = 1 + static_cast<Index>(rng.below(64));
    std::vector<ClassId> preds, truths;
    for (Index i = 0; i < n; ++i) {
      preds.push_back(classes[rng.below(classes.size())]);
      truths.push_back(rng.below(8) == 0 ? kIgnore : classes[rng.below(classes.size())]);
    }
    ConfusionMatrix conf = ConfusionMatrix::zero(classes);
    conf.accumulate(preds, truths);
    for (ClassId cls : classes) {
      const auto direct = oracles::set_iou(preds, truths, cls);
      const auto via_conf = conf.iou(cls);
      if (direct.has_value() != via_conf.has_value()) ok = false;
      if (direct.has_value() && *direct != *via_conf) ok = false;
    }
  }
  report(6, "confusion-matrix IoU equals direct set-based IoU exactly", ok,
         "1000 random label vectors, <= 64 points, 5 classes");
}

struct RegimeOutcome {
  Scalar miou = 0;
  Scalar base_drop = 0;
};

void criterion_7_directional(const fs::path& corpus) {
  const auto start = std::chrono::steady_clock::now();
  ToolConfig cfg = load_config(fs::path(LFSS_SOURCE_DIR) / "configs" / "synth.cfg");

  const Dataset train_split = Dataset::from_dir(corpus / "base_train", "train");
  const Dataset pool_split = Dataset::from_dir(corpus / "shot_pool", "pool");
  const Dataset eval_split = Dataset::from_dir(corpus / "eval", "eval");

  std::vector<RegimeOutcome> full_runs, naive_runs;
  for (int seed = 0; seed < 5; ++seed) {
    cfg.train_base.seed = 101 + static_cast<std::uint64_t>(seed);
    cfg.finetune.seed = 202 + static_cast<std::uint64_t>(seed);
    cfg.finetune.shot_seed = 42 + static_cast<std::uint64_t>(seed);

    const TrainResult base = train_base(train_split, cfg);
    const EvalReport base_rep =
        make_report(evaluate(base.params, eval_split, cfg), cfg.taxonomy, cfg.evaluation);
    const ShotSample shots =
        sample_shots(pool_split, cfg.taxonomy, cfg.finetune.shots, cfg.finetune.shot_seed);

    auto run_regime = [&](CeMode ce, KdMode kd, bool lovasz) {
      cfg.finetune.loss.ce = ce;
      cfg.finetune.loss.kd = kd;
      cfg.finetune.loss.lovasz = lovasz;
      cfg.finetune.loss.background_term = BackgroundTerm::kFrozenBase;
      cfg.finetune.freeze = FreezeMode::kNone;
      const TrainResult ft = finetune(base.params, pool_split, shots, cfg);
      const EvalReport rep = make_report(evaluate(ft.params, eval_split, cfg), cfg.taxonomy, cfg.evaluation);
      RegimeOutcome out;
      out.miou = rep.miou.value_or(0);
      out.base_drop = base_rep.miou_base.value_or(0) - rep.miou_base.value_or(0);
      return out;
    };

    full_runs.push_back(run_regime(CeMode::kUnbiased, KdMode::kUnbiased, true));
    naive_runs.push_back(run_regime(CeMode::kOriginal, KdMode::kOff, false));
  }

  Scalar full_miou = 0, naive_miou = 0, full_drop = 0, naive_drop = 0;
  for (int i = 0; i < 5; ++i) {
    full_miou += full_runs[static_cast<std::size_t>(i)].miou / 5;
    naive_miou += naive_runs[static_cast<std::size_t>(i)].miou / 5;
    full_drop += full_runs[static_cast<std::size_t>(i)].base_drop / 5;
    naive_drop += naive_runs[static_cast<std::size_t>(i)].base_drop / 5;
  }
  const double elapsed = seconds_since(start);
  const bool pass = full_miou > naive_miou && full_drop < naive_drop && elapsed < 300.0;
  std::ostringstream detail;
  detail.precision(4);
  detail << "5-seed means: mIoU full " << full_miou << " vs naive " << naive_miou << "; base drop full "
         << full_drop << " vs naive " << naive_drop << "; " << elapsed << " s";
  report(7, "full method beats naive CE on mIoU and forgets less", pass, detail.str());
}

void criterion_8_reproducibility(const fs::path& corpus, const fs::path& work) {
  const std::string config = (fs::path(LFSS_SOURCE_DIR) / "configs" / "synth.cfg").string();
  const fs::path a = work / "repro_a";
  const fs::path b = work / "repro_b";
  bool ok = true;
  std::ostringstream sink;
  auto* saved = std::cout.rdbuf(sink.rdbuf());  // the subcommand chatter is not part of this report
  for (const fs::path& dir : {a, b}) {
    ok = ok && cli::run({"train-base", "--config", config, "--data", (corpus / "base_train").string(),
                         "--out-dir", dir.string(), "--epochs", "3"}) == 0;
    ok = ok && cli::run({"sample-shots", "--config", config, "--data", (corpus / "shot_pool").string(),
                         "--out-dir", dir.string()}) == 0;
    ok = ok && cli::run({"finetune", "--config", config, "--data", (corpus / "shot_pool").string(),
                         "--base", (dir / "base_model.json").string(), "--shots",
                         (dir / "shots.json").string(), "--out-dir", dir.string(), "--epochs", "3"}) == 0;
    ok = ok && cli::run({"eval", "--config", config, "--truth", (corpus / "eval" / "labels").string(),
                         "--pred", (corpus / "eval" / "labels").string(), "--out-dir", dir.string()}) == 0;
  }
  std::cout.rdbuf(saved);
  ok = ok && slurp(a / "base_model.json") == slurp(b / "base_model.json");
  ok = ok && slurp(a / "shots.json") == slurp(b / "shots.json");
  ok = ok && slurp(a / "finetuned_model.json") == slurp(b / "finetuned_model.json");
  ok = ok && slurp(a / "report.json") == slurp(b / "report.json");
  ok = ok && slurp(a / "report.csv") == slurp(b / "report.csv");
  ok = ok && slurp(a / "loss_trace.csv") == slurp(b / "loss_trace.csv");
  report(8, "identical config and seeds give byte-identical checkpoints and reports", ok,
         "train-base, sample-shots, finetune, eval run twice");
}

void criterion_9_shot_sampling(const fs::path& corpus) {
  ToolConfig cfg = load_config(fs::path(LFSS_SOURCE_DIR) / "configs" / "synth.cfg");
  const Dataset pool = Dataset::from_dir(corpus / "shot_pool", "pool");
  const ShotSample a = sample_shots(pool, cfg.taxonomy, 5, 42);
  const ShotSample b = sample_shots(pool, cfg.taxonomy, 5, 42);
  const bool deterministic = a.to_json() == b.to_json();

  const ShotSample oversized = sample_shots(pool, cfg.taxonomy, 100000, 42);
  bool shortfall_ok = !oversized.warnings.empty();
  for (const auto& [cls, frames] : oversized.frames_per_class) {
    std::size_t available = 0;
    for (const Frame& frame : pool.frames) {
      const LoadedFrame f = load_frame(frame, cfg.taxonomy);
      if (std::find(f.labels.begin(), f.labels.end(), cls) != f.labels.end()) ++available;
    }
    if (frames.size() != available) shortfall_ok = false;
  }
  report(9, "shot sampling is seed-deterministic and records shortfalls", deterministic && shortfall_ok,
         "fixed seed twice; oversized request returns all available frames");
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path work = fs::temp_directory_path() / "lfss_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // shared synthetic corpus at the shipped desk-scale settings
  const fs::path corpus = work / "corpus";
  {
    const ToolConfig cfg = load_config(fs::path(LFSS_SOURCE_DIR) / "configs" / "synth.cfg");
    write_corpus(corpus, cfg.synth, cfg.taxonomy);
  }

  criterion_1_gradients();
  criterion_2_lovasz_oracle();
  criterion_3_gibbs();
  criterion_4_reductions();
  criterion_5_projection();
  criterion_6_miou_oracle();
  criterion_7_directional(corpus);
  criterion_8_reproducibility(corpus, work);
  criterion_9_shot_sampling(corpus);

  std::printf("%d of 9 criteria passed in %.1f s\n", 9 - g_failures, seconds_since(start));
  return g_failures == 0 ? 0 : 1;
}
