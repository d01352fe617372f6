#pragma once

#include "ditsinger/diffusion.hpp"
#include "ditsinger/model.hpp"
#include "ditsinger/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ditsinger {

inline constexpr std::string_view kCodeVersion = "ditsinger 0.1.0";

/// Everything a run needs: model, optimization, guidance, sampler, corpus
/// location and output directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;  // sampler.w is the guidance scale
  std::string corpus;
  std::string out_dir;

  GuidanceConfig guidance() const { return {sampler.w, train.cond_dropout_p}; }
};

/// {"model": {...}, "train": {...}, "guidance": {"w", "cond_dropout_p"},
///  "sampler": {"kind", "steps", "seed"}, "corpus": "...", "out_dir": "..."}
nlohmann::json to_json(const RunConfig& c);

/// Applies `j` on top of `base`. A "model.preset" key replaces the model
/// section's starting point before its other keys are applied.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Parses JSON that may contain // and /* */ comments.
nlohmann::json parse_commented_json(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fingerprint(std::string_view bytes);
std::string file_fingerprint(const std::filesystem::path& path);
/// Fingerprint of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace ditsinger
