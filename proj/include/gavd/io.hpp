#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gavd/dump.hpp"
#include "gavd/grounding.hpp"
#include "gavd/matching.hpp"
#include "gavd/sink.hpp"
#include "gavd/toy.hpp"

namespace gavd {

// Attention dump file format, version "gavd-1". JSON with doubles written
// at round-trip precision; loads validate structure and report the
// offending field by name and index.
AttentionDump load_dump(const std::filesystem::path& path);
std::string dump_to_json(const AttentionDump& dump);
void save_dump(const AttentionDump& dump, const std::filesystem::path& path);

KeyframeAnnotation load_keyframes(const std::filesystem::path& path);
void save_keyframes(const KeyframeAnnotation& ann,
                    const std::filesystem::path& path);

std::string reports_to_json(const std::vector<QualityReport>& reports);
std::string reports_to_csv(const std::vector<QualityReport>& reports);
std::string selection_to_json(const HeadSelection& sel);
std::string match_to_json(const MatchResult& match);
std::string train_report_to_json(const TrainReport& report,
                                 const ToyConfig& cfg);

// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path,
                  const std::string& content);

// Trainer configuration: flat "key = value" lines, '#' comments. Unknown
// keys are rejected. Returns the config plus the surface-only settings.
struct TrainRunSpec {
  ToyConfig config;
  int dataset_size = 64;
  RelatedTask related_task = RelatedTask::verification;
  std::string snapshot_path;  // directory for attention dumps; empty = off
  int snapshot_every = 0;
};
TrainRunSpec parse_train_config(const std::string& text);

}  // namespace gavd
