#include "gavd/io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "gavd/errors.hpp"

namespace gavd {

using nlohmann::json;

namespace {

auto field(const json& obj, const std::string& name, const std::string& where)
    -> const json& {
  const auto it = obj.find(name);
  if (it == obj.end())
    throw ValidationError(where + name + ": missing field");
  return *it;
}

auto as_int(const json& v, const std::string& where) -> long long {
  if (!v.is_number_integer())
    throw ValidationError(where + ": expected an integer");
  return v.get<long long>();
}

auto as_double(const json& v, const std::string& where) -> double {
  if (!v.is_number())
    throw ValidationError(where + ": expected a number");
  return v.get<double>();
}

auto role_from_string(const std::string& s, const std::string& where) -> Role {
  if (s == "system") return Role::system;
  if (s == "text") return Role::text;
  if (s == "visual") return Role::visual;
  throw ValidationError(where + ": unknown role \"" + s + "\"");
}

auto role_to_string(Role r) -> const char* {
  switch (r) {
    case Role::system: return "system";
    case Role::text: return "text";
    case Role::visual: return "visual";
  }
  return "?";
}

auto layout_from_json(const json& j) -> TokenLayout {
  if (!j.is_object()) throw ValidationError("layout: expected an object");
  TokenLayout layout;
  layout.seq_len = as_int(field(j, "seq_len", "layout."), "layout.seq_len");
  const json& roles = field(j, "roles", "layout.");
  if (!roles.is_array()) throw ValidationError("layout.roles: expected an array");
  for (size_t i = 0; i < roles.size(); ++i) {
    const std::string where = "layout.roles[" + std::to_string(i) + "]";
    if (!roles[i].is_string()) throw ValidationError(where + ": expected a string");
    layout.roles.push_back(role_from_string(roles[i].get<std::string>(), where));
  }
  const json& spans = field(j, "frame_spans", "layout.");
  if (!spans.is_array())
    throw ValidationError("layout.frame_spans: expected an array");
  for (size_t i = 0; i < spans.size(); ++i) {
    const std::string where = "layout.frame_spans[" + std::to_string(i) + "]";
    if (!spans[i].is_object()) throw ValidationError(where + ": expected an object");
    FrameSpan span;
    span.frame = static_cast<int>(as_int(field(spans[i], "frame", where + "."), where + ".frame"));
    span.begin = as_int(field(spans[i], "begin", where + "."), where + ".begin");
    span.end = as_int(field(spans[i], "end", where + "."), where + ".end");
    layout.frame_spans.push_back(span);
  }
  layout.last_prompt_index = as_int(field(j, "last_prompt_index", "layout."),
                                    "layout.last_prompt_index");
  return layout;
}

auto layout_to_json(const TokenLayout& layout) -> json {
  json j;
  j["seq_len"] = layout.seq_len;
  json roles = json::array();
  for (Role r : layout.roles) roles.push_back(role_to_string(r));
  j["roles"] = std::move(roles);
  json spans = json::array();
  for (const FrameSpan& s : layout.frame_spans)
    spans.push_back({{"frame", s.frame}, {"begin", s.begin}, {"end", s.end}});
  j["frame_spans"] = std::move(spans);
  j["last_prompt_index"] = layout.last_prompt_index;
  return j;
}

auto keyframes_from_json(const json& j, const std::string& where)
    -> KeyframeAnnotation {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  const json& flags = field(j, "frame_flags", where + ".");
  if (!flags.is_array())
    throw ValidationError(where + ".frame_flags: expected an array");
  KeyframeAnnotation ann;
  for (size_t i = 0; i < flags.size(); ++i) {
    const std::string fw = where + ".frame_flags[" + std::to_string(i) + "]";
    const long long v = as_int(flags[i], fw);
    if (v != 0 && v != 1) throw ValidationError(fw + ": expected 0 or 1");
    ann.frame_flags.push_back(static_cast<std::uint8_t>(v));
  }
  return ann;
}

}  // namespace

auto load_dump(const std::filesystem::path& path) -> AttentionDump {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("dump: expected a JSON object");

  AttentionDump dump;
  const json& version = field(j, "version", "");
  if (!version.is_string()) throw ValidationError("version: expected a string");
  dump.version = version.get<std::string>();
  if (dump.version != kDumpFormatVersion)
    throw UnsupportedVersion("version: expected \"" +
                             std::string(kDumpFormatVersion) + "\", got \"" +
                             dump.version + "\"");

  dump.layout = layout_from_json(field(j, "layout", ""));
  dump.layers = static_cast<int>(as_int(field(j, "layers", ""), "layers"));
  dump.heads = static_cast<int>(as_int(field(j, "heads", ""), "heads"));

  const json& rows = field(j, "rows", "");
  if (!rows.is_array()) throw ValidationError("rows: expected an array");
  for (size_t l = 0; l < rows.size(); ++l) {
    const std::string lw = "rows[" + std::to_string(l) + "]";
    if (!rows[l].is_array()) throw ValidationError(lw + ": expected an array");
    std::vector<AttentionRow> layer_rows;
    for (size_t h = 0; h < rows[l].size(); ++h) {
      const std::string hw = lw + "[" + std::to_string(h) + "]";
      if (!rows[l][h].is_array()) throw ValidationError(hw + ": expected an array");
      AttentionRow row;
      row.layer = static_cast<int>(l);
      row.head = static_cast<int>(h);
      row.weights.resize(static_cast<Index>(rows[l][h].size()));
      for (size_t i = 0; i < rows[l][h].size(); ++i)
        row.weights(static_cast<Index>(i)) =
            as_double(rows[l][h][i], hw + "[" + std::to_string(i) + "]");
      layer_rows.push_back(std::move(row));
    }
    dump.rows.push_back(std::move(layer_rows));
  }

  if (j.contains("hidden_states") && !j["hidden_states"].is_null()) {
    const json& hs = j["hidden_states"];
    if (!hs.is_array()) throw ValidationError("hidden_states: expected an array");
    std::vector<Matrix> hidden;
    for (size_t l = 0; l < hs.size(); ++l) {
      const std::string lw = "hidden_states[" + std::to_string(l) + "]";
      if (!hs[l].is_array() || hs[l].empty())
        throw ValidationError(lw + ": expected a nonempty array");
      const size_t dim = hs[l][0].is_array() ? hs[l][0].size() : 0;
      if (dim == 0) throw ValidationError(lw + "[0]: expected a nonempty array");
      Matrix m(static_cast<Index>(hs[l].size()), static_cast<Index>(dim));
      for (size_t i = 0; i < hs[l].size(); ++i) {
        const std::string iw = lw + "[" + std::to_string(i) + "]";
        if (!hs[l][i].is_array() || hs[l][i].size() != dim)
          throw ValidationError(iw + ": inconsistent hidden size");
        for (size_t d = 0; d < dim; ++d)
          m(static_cast<Index>(i), static_cast<Index>(d)) =
              as_double(hs[l][i][d], iw + "[" + std::to_string(d) + "]");
      }
      hidden.push_back(std::move(m));
    }
    dump.hidden_states = std::move(hidden);
  }

  if (j.contains("keyframes") && !j["keyframes"].is_null())
    dump.keyframes = keyframes_from_json(j["keyframes"], "keyframes");

  if (j.contains("meta")) {
    const json& meta = j["meta"];
    if (!meta.is_object()) throw ValidationError("meta: expected an object");
    for (const auto& [key, value] : meta.items()) {
      if (!value.is_string())
        throw ValidationError("meta." + key + ": expected a string");
      dump.meta[key] = value.get<std::string>();
    }
  }

  dump.validate();
  return dump;
}

auto dump_to_json(const AttentionDump& dump) -> std::string {
  dump.validate();
  json j;
  j["version"] = dump.version;
  j["layout"] = layout_to_json(dump.layout);
  j["layers"] = dump.layers;
  j["heads"] = dump.heads;
  json rows = json::array();
  for (const auto& layer_rows : dump.rows) {
    json lr = json::array();
    for (const AttentionRow& r : layer_rows) {
      json weights = json::array();
      for (Index i = 0; i < r.weights.size(); ++i) weights.push_back(r.weights(i));
      lr.push_back(std::move(weights));
    }
    rows.push_back(std::move(lr));
  }
  j["rows"] = std::move(rows);
  if (dump.hidden_states.has_value()) {
    json hs = json::array();
    for (const Matrix& m : *dump.hidden_states) {
      json lm = json::array();
      for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index d = 0; d < m.cols(); ++d) row.push_back(m(i, d));
        lm.push_back(std::move(row));
      }
      hs.push_back(std::move(lm));
    }
    j["hidden_states"] = std::move(hs);
  }
  if (dump.keyframes.has_value()) {
    json flags = json::array();
    for (std::uint8_t f : dump.keyframes->frame_flags) flags.push_back(static_cast<int>(f));
    j["keyframes"] = {{"frame_flags", std::move(flags)}};
  }
  if (!dump.meta.empty()) j["meta"] = dump.meta;
  return j.dump(2) + "\n";
}

void save_dump(const AttentionDump& dump, const std::filesystem::path& path) {
  atomic_write(path, dump_to_json(dump));
}

auto load_keyframes(const std::filesystem::path& path) -> KeyframeAnnotation {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return keyframes_from_json(j, "keyframes");
}

void save_keyframes(const KeyframeAnnotation& ann,
                    const std::filesystem::path& path) {
  json flags = json::array();
  for (std::uint8_t f : ann.frame_flags) flags.push_back(static_cast<int>(f));
  atomic_write(path, json{{"frame_flags", std::move(flags)}}.dump(2) + "\n");
}

namespace {

auto report_to_json(const QualityReport& r) -> json {
  json j;
  j["layer"] = r.layer;
  j["head"] = r.head.has_value() ? json(*r.head) : json(nullptr);
  j["selectiveness"] = r.selectiveness;
  j["vision_centricity"] = r.vision_centricity;
  j["keyframe_auroc"] =
      r.keyframe_auroc.has_value() ? json(*r.keyframe_auroc) : json(nullptr);
  j["score"] = r.score;
  return j;
}

auto format_full(double v) -> std::string {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

auto reports_to_json(const std::vector<QualityReport>& reports) -> std::string {
  json arr = json::array();
  for (const QualityReport& r : reports) arr.push_back(report_to_json(r));
  return arr.dump(2) + "\n";
}

auto reports_to_csv(const std::vector<QualityReport>& reports) -> std::string {
  std::ostringstream out;
  out << "layer,head,selectiveness,centricity,auroc,score\n";
  for (const QualityReport& r : reports) {
    out << r.layer << ',';
    if (r.head.has_value()) out << *r.head;
    out << ',' << format_full(r.selectiveness) << ','
        << format_full(r.vision_centricity) << ',';
    if (r.keyframe_auroc.has_value()) out << format_full(*r.keyframe_auroc);
    out << ',' << format_full(r.score) << '\n';
  }
  return out.str();
}

auto selection_to_json(const HeadSelection& sel) -> std::string {
  json j;
  j["layer"] = sel.layer;
  j["heads"] = sel.heads;
  j["vnsr"] = sel.vnsr;
  return j.dump(2) + "\n";
}

auto match_to_json(const MatchResult& match) -> std::string {
  json pairs = json::array();
  for (const MatchResult::Pair& p : match.pairs) {
    const char* provenance = p.provenance == PairProvenance::exact ? "exact"
                             : p.provenance == PairProvenance::hungarian
                                 ? "hungarian"
                                 : "random";
    pairs.push_back({{"gen", p.gen}, {"ver", p.ver}, {"provenance", provenance}});
  }
  json j;
  j["pairs"] = std::move(pairs);
  j["cost"] = match.total_hungarian_cost;
  return j.dump(2) + "\n";
}

auto train_report_to_json(const TrainReport& report, const ToyConfig& cfg)
    -> std::string {
  json config;
  config["num_frames"] = cfg.num_frames;
  config["tokens_per_frame"] = cfg.tokens_per_frame;
  config["vocab_size"] = cfg.vocab_size;
  config["embed_dim"] = cfg.embed_dim;
  config["num_layers"] = cfg.num_layers;
  config["heads_per_layer"] = cfg.heads_per_layer;
  config["target_layer"] = cfg.target_layer;
  config["k_heads"] = cfg.k_heads;
  config["seed"] = cfg.seed;
  config["steps"] = cfg.steps;
  config["learning_rate"] = cfg.learning_rate;
  config["tau_entropy"] = cfg.loss.tau_entropy;
  config["w_ce"] = cfg.loss.weights.ce;
  config["w_ent"] = cfg.loss.weights.entropy;
  config["w_con"] = cfg.loss.weights.consistency;
  config["sg_direction"] =
      cfg.loss.sg_direction == SgDirection::verification_fixed
          ? "verification_fixed"
          : "generation_fixed";
  config["epsilon"] = cfg.loss.epsilon;
  config["ce_placement"] = cfg.ce_placement == CePlacement::generation_only
                               ? "generation_only"
                           : cfg.ce_placement == CePlacement::verification_only
                               ? "verification_only"
                               : "both";

  json steps = json::array();
  for (const StepTrace& t : report.steps)
    steps.push_back({{"l_ce", t.l_ce},
                     {"l_entropy", t.l_entropy},
                     {"l_consistency", t.l_consistency},
                     {"l_total", t.l_total}});

  json j;
  j["seed"] = report.seed;
  j["config"] = std::move(config);
  j["initial_accuracy"] = report.initial_accuracy;
  j["final_accuracy"] = report.final_accuracy;
  j["initial_auroc"] = report.initial_auroc;
  j["final_auroc"] = report.final_auroc;
  j["steps"] = std::move(steps);
  return j.dump(2) + "\n";
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

auto parse_train_config(const std::string& text) -> TrainRunSpec {
  TrainRunSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string where = "config." + key;

    const auto to_int = [&]() -> long long {
      try {
        size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ValidationError(where + ": expected an integer, got \"" + value + "\"");
      }
    };
    const auto to_real = [&]() -> double {
      try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ValidationError(where + ": expected a number, got \"" + value + "\"");
      }
    };

    ToyConfig& cfg = spec.config;
    if (key == "num_frames") cfg.num_frames = static_cast<int>(to_int());
    else if (key == "tokens_per_frame") cfg.tokens_per_frame = static_cast<int>(to_int());
    else if (key == "vocab_size") cfg.vocab_size = static_cast<int>(to_int());
    else if (key == "embed_dim") cfg.embed_dim = static_cast<int>(to_int());
    else if (key == "num_layers") cfg.num_layers = static_cast<int>(to_int());
    else if (key == "heads_per_layer") cfg.heads_per_layer = static_cast<int>(to_int());
    else if (key == "target_layer") cfg.target_layer = static_cast<int>(to_int());
    else if (key == "k_heads") cfg.k_heads = static_cast<int>(to_int());
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int());
    else if (key == "steps") cfg.steps = static_cast<int>(to_int());
    else if (key == "learning_rate") cfg.learning_rate = to_real();
    else if (key == "tau_entropy") cfg.loss.tau_entropy = to_real();
    else if (key == "w_ce") cfg.loss.weights.ce = to_real();
    else if (key == "w_ent") cfg.loss.weights.entropy = to_real();
    else if (key == "w_con") cfg.loss.weights.consistency = to_real();
    else if (key == "epsilon") cfg.loss.epsilon = to_real();
    else if (key == "sg_direction") {
      if (value == "verification_fixed")
        cfg.loss.sg_direction = SgDirection::verification_fixed;
      else if (value == "generation_fixed")
        cfg.loss.sg_direction = SgDirection::generation_fixed;
      else
        throw ValidationError(where + ": unknown value \"" + value + "\"");
    } else if (key == "ce_placement") {
      if (value == "generation_only") cfg.ce_placement = CePlacement::generation_only;
      else if (value == "verification_only") cfg.ce_placement = CePlacement::verification_only;
      else if (value == "both") cfg.ce_placement = CePlacement::both;
      else throw ValidationError(where + ": unknown value \"" + value + "\"");
    } else if (key == "dataset_size") spec.dataset_size = static_cast<int>(to_int());
    else if (key == "related_task") {
      if (value == "verification") spec.related_task = RelatedTask::verification;
      else if (value == "diffuse_summary") spec.related_task = RelatedTask::diffuse_summary;
      else throw ValidationError(where + ": unknown value \"" + value + "\"");
    } else if (key == "snapshot_path") spec.snapshot_path = value;
    else if (key == "snapshot_every") spec.snapshot_every = static_cast<int>(to_int());
    else throw ValidationError(where + ": unknown key");
  }
  if (spec.dataset_size < 1)
    throw ValidationError("config.dataset_size: must be at least 1");
  return spec;
}

}  // namespace gavd
