#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "astmask/checkpoint.hpp"
#include "astmask/metrics.hpp"
#include "astmask/tasks.hpp"
#include "astmask/training.hpp"
#include "json.hpp"

namespace astmask {

/// 16 hex digits (FNV-1a 64) over the canonical JSON of both configs.
std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train);

struct Predictions {
  std::vector<int> labels;         // qa, clone
  std::vector<std::string> fixes;  // refine, one rendered program per example
};

/// Greedy inference with the checkpoint in eval mode.
Predictions predict(const Checkpoint& ckpt, TaskKind task, std::span<const TaskExample> examples,
                    std::size_t max_len);

/// Accuracy for qa, accuracy and precision/recall/F1 for clone, exact match
/// for refine.
MetricsReport evaluate(const Checkpoint& ckpt, TaskKind task, std::span<const TaskExample> examples,
                       std::size_t max_len, const std::string& fingerprint,
                       const std::string& split = "heldout");

struct AblationRow {
  std::string name;  // "full", "no_ast_position", "no_ast_mask"
  ModelConfig config;
  TrainConfig train;
  MetricsReport report;
};

/// Fine-tunes `base` three times with identical seeds and budgets: as is,
/// without AST positions, and without the AST mask.
std::vector<AblationRow> ablation_run(const Checkpoint& base, const TrainConfig& config,
                                      std::span<const TaskExample> train,
                                      std::span<const TaskExample> heldout, std::size_t max_len);

/// Fixed-width text table, one row per variant.
std::string ablation_table(std::span<const AblationRow> rows);
nlohmann::ordered_json ablation_json(std::span<const AblationRow> rows);

}  // namespace astmask
