// Command line front end: analyze attention dumps, select and match heads,
// rewrite attention toward keyframes, and drive the toy trainer.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gavd/distribution.hpp"
#include "gavd/dump.hpp"
#include "gavd/errors.hpp"
#include "gavd/grounding.hpp"
#include "gavd/io.hpp"
#include "gavd/matching.hpp"
#include "gavd/objectives.hpp"
#include "gavd/redistribution.hpp"
#include "gavd/sink.hpp"
#include "gavd/toy.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    gavd::atomic_write(out_path, text);
}

// Sink positions for one dump: explicit list if given, else detected from
// the dump's hidden states at `layer`; empty (with a warning) otherwise.
std::set<gavd::Index> resolve_sinks(const gavd::AttentionDump& dump, int layer,
                                    const std::vector<long long>& explicit_sinks,
                                    const std::vector<long long>& sink_dims,
                                    double threshold) {
  if (!explicit_sinks.empty()) {
    std::set<gavd::Index> sinks;
    for (long long s : explicit_sinks) {
      if (s < 0 || s >= dump.layout.seq_len)
        throw gavd::IndexError("--sinks: position " + std::to_string(s) +
                               " outside the sequence");
      sinks.insert(static_cast<gavd::Index>(s));
    }
    return sinks;
  }
  if (dump.hidden_states.has_value()) {
    gavd::SinkConfig cfg;
    for (long long d : sink_dims) cfg.sink_dims.push_back(static_cast<gavd::Index>(d));
    cfg.threshold = threshold;
    gavd::HiddenStates hidden{layer, dump.hidden_states->at(static_cast<size_t>(layer))};
    return gavd::detect_sink_tokens(hidden, dump.layout, cfg);
  }
  std::cerr << "warning: no hidden states in dump and no --sinks given; "
               "using an empty sink set\n";
  return {};
}

gavd::HeadSelection select_heads(const gavd::AttentionDump& dump, int layer,
                                 int k, const std::string& rank,
                                 const std::set<gavd::Index>& sinks) {
  if (layer < 0 || layer >= dump.layers)
    throw gavd::IndexError("--layer: " + std::to_string(layer) +
                           " outside [0, " + std::to_string(dump.layers) + ")");
  const auto& rows = dump.rows[static_cast<size_t>(layer)];
  if (rank == "attnsum")
    return gavd::select_top_k_by_attention_sum(rows, dump.layout, k);
  return gavd::select_top_k_heads(rows, dump.layout, sinks, k);
}

int run_analyze(const std::string& dump_path, const std::string& keyframes_path,
                const std::string& mode, bool csv, const std::string& out_path) {
  const gavd::AttentionDump dump = gavd::load_dump(dump_path);
  std::optional<gavd::KeyframeAnnotation> ann;
  if (!keyframes_path.empty()) ann = gavd::load_keyframes(keyframes_path);
  else if (dump.keyframes.has_value()) ann = dump.keyframes;
  const auto reports = gavd::rank_layers_heads(
      dump, ann.has_value() ? &*ann : nullptr,
      mode == "product" ? gavd::ScoreMode::product : gavd::ScoreMode::sum);
  emit(csv ? gavd::reports_to_csv(reports) : gavd::reports_to_json(reports),
       out_path);
  return kExitOk;
}

int run_heads(const std::string& dump_path, int layer, int k,
              const std::string& rank, const std::vector<long long>& sinks_opt,
              const std::vector<long long>& sink_dims, double threshold,
              const std::string& out_path) {
  const gavd::AttentionDump dump = gavd::load_dump(dump_path);
  const auto sinks =
      rank == "attnsum" ? std::set<gavd::Index>{}
                        : resolve_sinks(dump, layer, sinks_opt, sink_dims, threshold);
  const auto sel = select_heads(dump, layer, k, rank, sinks);
  emit(gavd::selection_to_json(sel), out_path);
  return kExitOk;
}

int run_match(const std::string& gen_path, const std::string& ver_path,
              int layer, int ver_layer, int k, const std::string& strategy,
              bool hungarian_only, std::uint64_t seed,
              const std::vector<long long>& sink_dims, double threshold,
              const std::string& out_path) {
  const gavd::AttentionDump gen = gavd::load_dump(gen_path);
  const gavd::AttentionDump ver = gavd::load_dump(ver_path);
  if (ver_layer < 0) ver_layer = layer;

  const auto gen_sinks = resolve_sinks(gen, layer, {}, sink_dims, threshold);
  const auto ver_sinks = resolve_sinks(ver, ver_layer, {}, sink_dims, threshold);
  const auto gen_sel = select_heads(gen, layer, k, "vnsr", gen_sinks);
  const auto ver_sel = select_heads(ver, ver_layer, k, "vnsr", ver_sinks);

  gavd::MatchResult match;
  if (strategy == "random") {
    match = gavd::match_heads_random(gen_sel, ver_sel, seed);
  } else if (strategy == "discard") {
    match = gavd::match_heads_discard(gen_sel, ver_sel);
  } else {
    gavd::MatchOptions opts;
    opts.hungarian_only = hungarian_only || layer != ver_layer;
    match = gavd::match_heads(gen_sel, ver_sel,
                              gen.rows[static_cast<size_t>(layer)],
                              ver.rows[static_cast<size_t>(ver_layer)],
                              gen.layout, ver.layout, opts);
  }
  if (match.pairs.empty())
    std::cerr << "warning: the selections share no heads; no pairs formed\n";
  emit(gavd::match_to_json(match), out_path);
  return kExitOk;
}

int run_redistribute(const std::string& dump_path,
                     const std::string& keyframes_path,
                     const std::string& strategy,
                     const std::vector<std::string>& target_specs,
                     const std::string& out_path) {
  const gavd::AttentionDump dump = gavd::load_dump(dump_path);
  std::optional<gavd::KeyframeAnnotation> ann;
  if (!keyframes_path.empty()) ann = gavd::load_keyframes(keyframes_path);

  gavd::RedistributionPlan plan;
  plan.strategy = strategy == "uniform"
                      ? gavd::RedistributionStrategy::uniform_all_frames
                      : gavd::RedistributionStrategy::proportional_keyframes;
  if (target_specs.empty()) {
    for (int l = 0; l < dump.layers; ++l)
      for (int h = 0; h < dump.heads; ++h) plan.targets.emplace_back(l, h);
  } else {
    for (const std::string& spec : target_specs) {
      int l = 0, h = 0;
      char extra = 0;
      if (std::sscanf(spec.c_str(), "%d,%d%c", &l, &h, &extra) != 2)
        throw gavd::ValidationError("--target: expected LAYER,HEAD, got \"" +
                                    spec + "\"");
      plan.targets.emplace_back(l, h);
    }
  }

  const gavd::AttentionDump result =
      gavd::apply_plan(dump, plan, ann.has_value() ? &*ann : nullptr);
  emit(gavd::dump_to_json(result), out_path);
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& out_path,
              std::optional<std::uint64_t> seed_flag) {
  gavd::TrainRunSpec spec;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw gavd::ValidationError("cannot open " + config_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    spec = gavd::parse_train_config(buf.str());
  }
  if (seed_flag.has_value()) spec.config.seed = *seed_flag;
  if (const char* env = std::getenv("GAVD_SEED")) {
    try {
      spec.config.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw gavd::ValidationError("GAVD_SEED: expected an integer, got \"" +
                                  std::string(env) + "\"");
    }
  }
  spec.config.validate();

  const auto dataset = gavd::generate_dataset(spec.config, spec.dataset_size);
  gavd::StepObserver observer;
  if (!spec.snapshot_path.empty() && spec.snapshot_every > 0) {
    std::filesystem::create_directories(spec.snapshot_path);
    const auto cfg = spec.config;
    const auto sample = dataset.front();
    const std::string dir = spec.snapshot_path;
    const int every = spec.snapshot_every;
    observer = [cfg, sample, dir, every](int step, const gavd::ToyModel& m) {
      if ((step + 1) % every != 0) return;
      const auto dump = gavd::make_dump(m, cfg, sample, gavd::Pathway::generation);
      gavd::save_dump(dump, dir + "/step_" + std::to_string(step + 1) + ".json");
    };
  }

  const gavd::TrainReport report =
      spec.related_task == gavd::RelatedTask::verification
          ? gavd::train(spec.config, dataset, observer)
          : gavd::run_related_task_ablation(spec.config, dataset,
                                            spec.related_task, observer);

  std::cerr << "trained " << report.steps.size() << " steps: accuracy "
            << report.initial_accuracy << " -> " << report.final_accuracy
            << ", keyframe auroc " << report.initial_auroc << " -> "
            << report.final_auroc << "\n";
  emit(gavd::train_report_to_json(report, spec.config), out_path);
  return kExitOk;
}

int run_gradcheck(std::uint64_t seed, double step, double tol) {
  const gavd::GradCheckReport report = gavd::gradient_check(seed, step);
  std::cout << "max relative error " << report.max_rel_error << " over "
            << report.params_checked << " parameters (analytic norm "
            << report.analytic_norm << ")\n";
  if (report.max_rel_error > tol) {
    std::cerr << "error: gradient mismatch above " << tol << "\n";
    return kExitError;
  }
  return kExitOk;
}

// Small built-in fixture suite with hand-computable expectations; exercises
// one frozen case per module so a fresh build can be smoke-tested without
// the test binary.
int run_selftest() {
  int passed = 0, failed = 0;
  const auto check = [&](const std::string& name, bool ok,
                         const std::string& detail = "") {
    if (ok) {
      ++passed;
      std::cout << "pass: " << name << "\n";
    } else {
      ++failed;
      std::cout << "FAIL: " << name << (detail.empty() ? "" : ": " + detail)
                << "\n";
    }
  };
  const auto near = [](double a, double b, double tol = 1e-12) {
    return std::abs(a - b) <= tol;
  };

  using namespace gavd;

  // Layout: four visual tokens in two frames, one trailing text query.
  TokenLayout layout;
  layout.seq_len = 5;
  layout.roles = {Role::visual, Role::visual, Role::visual, Role::visual,
                  Role::text};
  layout.frame_spans = {{0, 0, 2}, {1, 2, 4}};
  layout.last_prompt_index = 4;
  layout.validate();

  const auto row_of = [&](std::initializer_list<double> w) {
    AttentionRow row;
    row.weights = Vector(static_cast<Index>(w.size()));
    Index i = 0;
    for (double v : w) row.weights(i++) = v;
    return row;
  };

  {
    ProbVec u = ProbVec::uniform(4);
    check("uniform entropy", near(entropy(u), std::log(4.0)));
  }
  {
    ProbVec p{Vector(2)}, q{Vector(2)};
    p.values << 0.75, 0.25;
    q.values << 0.5, 0.5;
    check("kl frozen value",
          near(kl_divergence(p, q), 0.13081203594113694, 1e-12));
    check("kl self is zero", kl_divergence(p, p) == 0.0);
  }
  {
    ProbVec p{Vector(2)};
    p.values << 0.8, 0.2;
    const ProbVec s = sharpen(p, 0.5);
    check("sharpen frozen value",
          near(s.values(0), 16.0 / 17.0) && near(s.values(1), 1.0 / 17.0));
  }
  {
    const auto row = row_of({0.5, 0.5, 0.0, 0.0, 0.0});
    check("selectiveness frozen value",
          near(selectiveness(row, layout), 0.5));
    check("vision centricity", near(vision_centricity(row, layout), 1.0));
  }
  {
    TokenLayout per_frame = layout;
    per_frame.frame_spans = {{0, 0, 1}, {1, 1, 2}, {2, 2, 3}, {3, 3, 4}};
    per_frame.validate();
    KeyframeAnnotation ann;
    ann.frame_flags = {1, 0, 0, 1};
    const auto row = row_of({0.4, 0.1, 0.3, 0.2, 0.0});
    check("keyframe auroc frozen value",
          near(keyframe_auroc(row, per_frame, ann), 0.75));
  }
  {
    Vector x(4);
    x << 3.0, 0.0, 0.0, 0.0;
    SinkConfig cfg;
    cfg.sink_dims = {0};
    check("sink score frozen value", near(sink_dimension_value(x, cfg), 2.0));
  }
  {
    const auto row = row_of({0.4, 0.3, 0.2, 0.1, 0.0});
    check("vnsr frozen value", near(vnsr(row, layout, {0}), 0.6));
    check("vnsr empty sink set", near(vnsr(row, layout, {}), 1.0));
  }
  {
    CostMatrix cost;
    cost.entries = Matrix(3, 3);
    cost.entries << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    cost.row_heads = {0, 1, 2};
    cost.col_heads = {0, 1, 2};
    const auto [assign, total] = hungarian_solve(cost);
    check("assignment frozen value",
          total == 5.0 && assign == std::vector<int>({1, 0, 2}));
  }
  {
    HeadSelection a{0, {3, 7, 12}, {1.0, 0.9, 0.8}};
    HeadSelection b{0, {7, 9, 12}, {1.0, 0.9, 0.8}};
    const auto match = match_heads_discard(a, b);
    check("discard keeps shared heads",
          match.pairs.size() == 2 && match.pairs[0].gen == 7 &&
              match.pairs[1].gen == 12 && !match.complete);
  }
  {
    const auto ce = cross_entropy_loss(Matrix::Zero(1, 4), {2});
    check("uniform cross entropy", near(ce.value, std::log(4.0)));
  }
  {
    LossConfig cfg;
    cfg.tau_entropy = 1.0;
    const auto ent = entropy_loss({ProbVec::uniform(4)}, cfg);
    check("uniform entropy loss",
          near(ent.value, std::log(4.0)) &&
              near(ent.grads.at(0).cwiseAbs().maxCoeff(), 0.0));
  }
  {
    KeyframeAnnotation ann;
    ann.frame_flags = {0, 1};
    const auto row = row_of({0.1, 0.2, 0.3, 0.4, 0.0});
    const auto moved = redistribute_proportional(row, layout, ann);
    check("proportional redistribution frozen value",
          near(moved.weights(0), 0.0) && near(moved.weights(1), 0.0) &&
              near(moved.weights(2), 0.3 / 0.7) &&
              near(moved.weights(3), 0.4 / 0.7));
  }
  {
    const auto report = gradient_check(0);
    check("toy gradient agreement", report.max_rel_error < 1e-4,
          "max relative error " + std::to_string(report.max_rel_error));
  }

  std::cout << passed << "/" << (passed + failed) << " checks passed\n";
  return failed == 0 ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual attention grounding tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gavd 0.1.0");

  // analyze
  std::string an_dump, an_keyframes, an_mode = "sum", an_out;
  bool an_csv = false;
  auto* analyze = app.add_subcommand(
      "analyze", "Rank layers and heads of a dump by grounding quality");
  analyze->add_option("dump", an_dump, "attention dump file")->required();
  analyze->add_option("--keyframes", an_keyframes,
                      "keyframe annotation file (default: the dump's own)");
  analyze->add_option("--mode", an_mode, "score aggregation")
      ->check(CLI::IsMember({"sum", "product"}));
  analyze->add_flag("--csv", an_csv, "emit CSV instead of JSON");
  analyze->add_option("--out", an_out, "write here instead of stdout");

  // heads
  std::string hd_dump, hd_rank = "vnsr", hd_out;
  int hd_layer = 0, hd_k = 5;
  double hd_threshold = 20.0;
  std::vector<long long> hd_sinks, hd_sink_dims = {0};
  auto* heads = app.add_subcommand(
      "heads", "Select the top heads of a layer by visual non-sink ratio");
  heads->add_option("dump", hd_dump, "attention dump file")->required();
  heads->add_option("--layer", hd_layer, "layer to select from")->required();
  heads->add_option("--k", hd_k, "number of heads")->capture_default_str();
  heads->add_option("--rank", hd_rank, "ranking score")
      ->check(CLI::IsMember({"vnsr", "attnsum"}));
  heads->add_option("--sinks", hd_sinks,
                    "explicit sink token positions (skips detection)");
  heads->add_option("--sink-dims", hd_sink_dims,
                    "hidden dimensions probed by sink detection");
  heads->add_option("--sink-threshold", hd_threshold, "sink detection cutoff")
      ->capture_default_str();
  heads->add_option("--out", hd_out, "write here instead of stdout");

  // match
  std::string mt_gen, mt_ver, mt_strategy = "hungarian", mt_out;
  int mt_layer = 0, mt_ver_layer = -1, mt_k = 5;
  bool mt_hungarian_only = false;
  std::uint64_t mt_seed = 0;
  double mt_threshold = 20.0;
  std::vector<long long> mt_sink_dims = {0};
  auto* match = app.add_subcommand(
      "match", "Pair selected heads of two dumps by attention similarity");
  match->add_option("generation", mt_gen, "generation pathway dump")->required();
  match->add_option("verification", mt_ver, "verification pathway dump")
      ->required();
  match->add_option("--layer", mt_layer, "layer in the generation dump")
      ->required();
  match->add_option("--ver-layer", mt_ver_layer,
                    "layer in the verification dump (default: --layer)");
  match->add_option("--k", mt_k, "heads selected per dump")->capture_default_str();
  match->add_option("--strategy", mt_strategy, "pairing strategy")
      ->check(CLI::IsMember({"hungarian", "random", "discard"}));
  match->add_flag("--hungarian-only", mt_hungarian_only,
                  "skip the exact-index stage");
  match->add_option("--seed", mt_seed, "seed for --strategy random")->capture_default_str();
  match->add_option("--sink-dims", mt_sink_dims,
                    "hidden dimensions probed by sink detection");
  match->add_option("--sink-threshold", mt_threshold, "sink detection cutoff")
      ->capture_default_str();
  match->add_option("--out", mt_out, "write here instead of stdout");

  // redistribute
  std::string rd_dump, rd_keyframes, rd_strategy = "proportional", rd_out;
  std::vector<std::string> rd_targets;
  auto* redistribute = app.add_subcommand(
      "redistribute", "Rewrite attention rows toward keyframe tokens");
  redistribute->add_option("dump", rd_dump, "attention dump file")->required();
  redistribute->add_option("--keyframes", rd_keyframes,
                           "keyframe annotation file (default: the dump's own)");
  redistribute->add_option("--strategy", rd_strategy, "rewrite strategy")
      ->check(CLI::IsMember({"proportional", "uniform"}));
  redistribute->add_option("--target", rd_targets,
                           "LAYER,HEAD row to rewrite (repeatable; default all)");
  redistribute->add_option("--out", rd_out, "write here instead of stdout");

  // train
  std::string tr_config, tr_out;
  std::optional<std::uint64_t> tr_seed;
  auto* train = app.add_subcommand(
      "train", "Train the built-in toy model and report the trace");
  train->add_option("--config", tr_config, "key = value configuration file");
  train->add_option("--seed", tr_seed,
                    "override the config seed (GAVD_SEED overrides both)");
  train->add_option("--out", tr_out, "write the report here instead of stdout");

  // gradcheck
  std::uint64_t gc_seed = 0;
  double gc_step = 1e-5, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic toy gradients against finite differences");
  gradcheck->add_option("--seed", gc_seed, "instance seed")->capture_default_str();
  gradcheck->add_option("--step", gc_step, "finite difference step")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "max relative error accepted")->capture_default_str();

  // selftest
  app.add_subcommand("selftest", "Run the built-in fixture checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (analyze->parsed())
      return run_analyze(an_dump, an_keyframes, an_mode, an_csv, an_out);
    if (heads->parsed())
      return run_heads(hd_dump, hd_layer, hd_k, hd_rank, hd_sinks, hd_sink_dims,
                       hd_threshold, hd_out);
    if (match->parsed())
      return run_match(mt_gen, mt_ver, mt_layer, mt_ver_layer, mt_k,
                       mt_strategy, mt_hungarian_only, mt_seed, mt_sink_dims,
                       mt_threshold, mt_out);
    if (redistribute->parsed())
      return run_redistribute(rd_dump, rd_keyframes, rd_strategy, rd_targets,
                              rd_out);
    if (train->parsed()) return run_train(tr_config, tr_out, tr_seed);
    if (gradcheck->parsed()) return run_gradcheck(gc_seed, gc_step, gc_tol);
    return run_selftest();
  } catch (const gavd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
