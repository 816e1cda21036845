#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "gavd/grounding.hpp"
#include "gavd/io.hpp"
#include "gavd/toy.hpp"

using namespace gavd;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr merged
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + GAVD_CLI_PATH +
                          " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (size_t got = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, got);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path work_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "gavd_cli_work";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One recorded toy inference per pathway, written once and reused.
struct Fixture {
  ToyConfig cfg;
  std::filesystem::path gen_path, ver_path;

  Fixture() {
    const auto ds = generate_dataset(cfg, 1);
    const ToyModel m = ToyModel::init(cfg, 5);
    gen_path = work_dir() / "gen.json";
    ver_path = work_dir() / "ver.json";
    save_dump(make_dump(m, cfg, ds[0], Pathway::generation), gen_path);
    save_dump(make_dump(m, cfg, ds[0], Pathway::verification), ver_path);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("usage errors and version") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("--no-such-flag").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("heads dump.json").exit_code == 2);  // missing --layer

  const RunResult version = run_cli("--version");
  CHECK(version.exit_code == 0);
  CHECK(version.output.find("gavd") != std::string::npos);
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("selftest passes") {
  const RunResult r = run_cli("selftest");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("checks passed") != std::string::npos);
  CHECK(r.output.find("FAIL") == std::string::npos);
}

TEST_CASE("missing input files exit with a runtime error") {
  const RunResult r = run_cli("analyze /no/such/dump.json");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("error:") != std::string::npos);
  CHECK(r.output.find("cannot open") != std::string::npos);
}

TEST_CASE("analyze ranks layers and heads") {
  const Fixture& f = fixture();
  const RunResult r = run_cli("analyze " + f.gen_path.string());
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.output);
  REQUIRE(j.is_array());
  // One averaged entry per layer plus one per head.
  CHECK(j.size() == static_cast<size_t>(f.cfg.num_layers +
                                        f.cfg.num_layers *
                                            f.cfg.heads_per_layer));
  // Sorted by descending score.
  for (size_t i = 1; i < j.size(); ++i)
    CHECK(j[i - 1]["score"].get<double>() >= j[i]["score"].get<double>());

  SUBCASE("csv output") {
    const RunResult csv = run_cli("analyze --csv " + f.gen_path.string());
    REQUIRE(csv.exit_code == 0);
    CHECK(csv.output.rfind("layer,head,selectiveness,centricity,auroc,score",
                           0) == 0);
  }
  SUBCASE("external keyframes and product scoring") {
    const auto kf = work_dir() / "kf.json";
    KeyframeAnnotation ann;
    ann.frame_flags.assign(static_cast<size_t>(f.cfg.num_frames), 0);
    ann.frame_flags[3] = 1;
    save_keyframes(ann, kf);
    const RunResult alt = run_cli("analyze --keyframes " + kf.string() +
                                  " --mode product " + f.gen_path.string());
    REQUIRE(alt.exit_code == 0);
    CHECK(json::parse(alt.output).size() == j.size());
  }
  SUBCASE("--out writes the same content to a file") {
    const auto out = work_dir() / "reports.json";
    const RunResult to_file =
        run_cli("analyze --out " + out.string() + " " + f.gen_path.string());
    REQUIRE(to_file.exit_code == 0);
    CHECK(read_text(out) == r.output);
  }
}

TEST_CASE("heads selects by vnsr at a layer") {
  const Fixture& f = fixture();
  const RunResult r = run_cli("heads " + f.gen_path.string() +
                              " --layer 1 --k 3 --sink-threshold 3");
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.output);
  CHECK(j["layer"] == 1);
  REQUIRE(j["heads"].size() == 3);
  REQUIRE(j["vnsr"].size() == 3);
  // Scores are sorted descending and lie in [0, 1].
  for (size_t i = 0; i < 3; ++i) {
    CHECK(j["vnsr"][i].get<double>() >= 0.0);
    CHECK(j["vnsr"][i].get<double>() <= 1.0);
    if (i > 0)
      CHECK(j["vnsr"][i - 1].get<double>() >= j["vnsr"][i].get<double>());
  }

  const RunResult bad_layer =
      run_cli("heads " + f.gen_path.string() + " --layer 9 --k 2");
  CHECK(bad_layer.exit_code == 1);

  const RunResult by_mass = run_cli("heads " + f.gen_path.string() +
                                    " --layer 1 --k 3 --rank attnsum");
  REQUIRE(by_mass.exit_code == 0);
  CHECK(json::parse(by_mass.output)["heads"].size() == 3);
}

TEST_CASE("match pairs heads across pathways") {
  const Fixture& f = fixture();
  const RunResult r = run_cli("match " + f.gen_path.string() + " " +
                              f.ver_path.string() +
                              " --layer 1 --k 3 --sink-threshold 3");
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.output);
  REQUIRE(j["pairs"].size() == 3);
  for (const auto& p : j["pairs"]) {
    CHECK(p.contains("gen"));
    CHECK(p.contains("ver"));
    const std::string prov = p["provenance"].get<std::string>();
    CHECK((prov == "exact" || prov == "hungarian"));
  }
  CHECK(j["cost"].get<double>() >= 0.0);

  const RunResult random_pairing =
      run_cli("match " + f.gen_path.string() + " " + f.ver_path.string() +
              " --layer 1 --k 3 --strategy random --seed 9");
  REQUIRE(random_pairing.exit_code == 0);
  const RunResult again =
      run_cli("match " + f.gen_path.string() + " " + f.ver_path.string() +
              " --layer 1 --k 3 --strategy random --seed 9");
  CHECK(random_pairing.output == again.output);
}

TEST_CASE("redistribute rewrites rows onto keyframes") {
  const Fixture& f = fixture();
  const auto out = work_dir() / "redist.json";
  const RunResult r = run_cli("redistribute --out " + out.string() + " " +
                              f.gen_path.string());
  REQUIRE(r.exit_code == 0);

  const AttentionDump before = load_dump(f.gen_path);
  const AttentionDump after = load_dump(out);
  REQUIRE(after.keyframes.has_value());
  // Every row now carries visual mass only on keyframe tokens, which makes
  // the keyframe ranking perfect.
  CHECK(keyframe_auroc(after.row(0, 0), after.layout, *after.keyframes) ==
        1.0);
  // Visual mass is preserved.
  double mass_before = 0.0, mass_after = 0.0;
  for (Index i : before.layout.visual_positions()) {
    mass_before += before.row(0, 0).weights(i);
    mass_after += after.row(0, 0).weights(i);
  }
  CHECK(mass_after == doctest::Approx(mass_before).epsilon(1e-12));

  SUBCASE("targeted rewrite leaves other rows alone") {
    const RunResult one = run_cli("redistribute --target 1,2 --out " +
                                  out.string() + " " + f.gen_path.string());
    REQUIRE(one.exit_code == 0);
    const AttentionDump d = load_dump(out);
    CHECK(d.row(0, 0).weights == before.row(0, 0).weights);
    CHECK(d.row(1, 2).weights != before.row(1, 2).weights);
  }
  SUBCASE("uniform strategy") {
    const RunResult uni = run_cli("redistribute --strategy uniform --out " +
                                  out.string() + " " + f.gen_path.string());
    REQUIRE(uni.exit_code == 0);
    const AttentionDump d = load_dump(out);
    const auto vis = d.layout.visual_positions();
    CHECK(d.row(0, 1).weights(vis[0]) == d.row(0, 1).weights(vis[1]));
  }
}

TEST_CASE("train writes a deterministic report") {
  const auto dir = work_dir();
  const auto cfg_path = dir / "train.cfg";
  {
    std::ofstream out(cfg_path);
    out << "num_frames = 4\ntokens_per_frame = 2\nvocab_size = 16\n"
           "embed_dim = 8\nnum_layers = 2\nheads_per_layer = 2\n"
           "target_layer = 1\nk_heads = 2\nsteps = 4\ndataset_size = 6\n"
           "seed = 3\n";
  }
  const auto report_path = dir / "report.json";
  const std::string cmd = "train --config " + cfg_path.string() + " --out " +
                          report_path.string();

  const RunResult r = run_cli(cmd);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("trained 4 steps") != std::string::npos);

  const json report = json::parse(read_text(report_path));
  CHECK(report["seed"] == 3);
  REQUIRE(report["steps"].size() == 4);
  CHECK(report["config"]["num_frames"] == 4);
  for (const auto& step : report["steps"]) {
    CHECK(step.contains("l_ce"));
    CHECK(step.contains("l_entropy"));
    CHECK(step.contains("l_consistency"));
    CHECK(step.contains("l_total"));
  }

  const std::string first = read_text(report_path);
  REQUIRE(run_cli(cmd).exit_code == 0);
  CHECK(read_text(report_path) == first);

  SUBCASE("seed precedence: flag over config, environment over flag") {
    REQUIRE(run_cli(cmd + " --seed 17").exit_code == 0);
    CHECK(json::parse(read_text(report_path))["seed"] == 17);
    REQUIRE(run_cli(cmd + " --seed 17", "GAVD_SEED=23").exit_code == 0);
    CHECK(json::parse(read_text(report_path))["seed"] == 23);
    CHECK(run_cli(cmd, "GAVD_SEED=nonsense").exit_code == 1);
  }
  SUBCASE("snapshots are valid dumps") {
    const auto snap_dir = dir / "snaps";
    std::filesystem::create_directories(snap_dir);
    {
      std::ofstream out(cfg_path, std::ios::app);
      out << "snapshot_path = " << snap_dir.string() << "\n"
          << "snapshot_every = 2\n";
    }
    REQUIRE(run_cli(cmd).exit_code == 0);
    int found = 0;
    for (const auto& entry : std::filesystem::directory_iterator(snap_dir)) {
      CHECK_NOTHROW(load_dump(entry.path()));
      ++found;
    }
    CHECK(found == 2);
  }
}

TEST_CASE("gradcheck subcommand") {
  const RunResult r = run_cli("gradcheck --seed 1");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("max relative error") != std::string::npos);

  // An impossible tolerance flips the exit code.
  CHECK(run_cli("gradcheck --seed 1 --tol 1e-30").exit_code == 1);
}

TEST_CASE("analyze reports no auroc when keyframes are unknown") {
  const Fixture& f = fixture();
  AttentionDump dump = load_dump(f.gen_path);
  dump.keyframes.reset();
  const auto path = work_dir() / "no_keyframes.json";
  save_dump(dump, path);

  const RunResult r = run_cli("analyze " + path.string());
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.output);
  REQUIRE(!j.empty());
  for (const auto& entry : j) CHECK(entry["keyframe_auroc"].is_null());
}

TEST_CASE("discard pairing over disjoint selections yields no pairs") {
  // Two dumps over the same layout; one sink token at position 1. In the
  // first dump heads 0 and 1 avoid the sink entirely, in the second heads
  // 2 and 3 do, so the two k=2 selections share nothing.
  TokenLayout layout;
  layout.seq_len = 6;
  layout.roles = {Role::system, Role::visual, Role::visual, Role::visual,
                  Role::visual, Role::text};
  layout.frame_spans = {{0, 1, 5}};
  layout.last_prompt_index = 5;

  const auto build = [&](bool low_heads_clean) {
    AttentionDump d;
    d.layout = layout;
    d.layers = 1;
    d.heads = 4;
    d.rows.resize(1);
    for (int h = 0; h < 4; ++h) {
      AttentionRow r;
      r.layer = 0;
      r.head = h;
      r.weights = Vector::Zero(6);
      if ((h < 2) == low_heads_clean)
        r.weights(2) = r.weights(3) = r.weights(4) = 1.0 / 3;
      else
        r.weights(1) = 1.0;
      d.rows[0].push_back(std::move(r));
    }
    Matrix hidden = Matrix::Ones(6, 16);
    hidden.row(1).setZero();
    hidden(1, 0) = 5.0;  // dimension 0 spikes at four times the RMS
    d.hidden_states = std::vector<Matrix>{hidden};
    return d;
  };
  const auto a_path = work_dir() / "disjoint_a.json";
  const auto b_path = work_dir() / "disjoint_b.json";
  save_dump(build(true), a_path);
  save_dump(build(false), b_path);

  const auto out = work_dir() / "disjoint_pairs.json";
  const RunResult r =
      run_cli("match " + a_path.string() + " " + b_path.string() +
              " --layer 0 --k 2 --strategy discard --sink-threshold 3 --out " +
              out.string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("warning") != std::string::npos);
  const json j = json::parse(read_text(out));
  CHECK(j["pairs"].empty());
}
