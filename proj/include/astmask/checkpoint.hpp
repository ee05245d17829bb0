#pragma once

#include <filesystem>
#include <iosfwd>

#include "astmask/model.hpp"
#include "astmask/vocab.hpp"
#include "json.hpp"

namespace astmask {

/// Parameters plus everything needed to use them again.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocabulary vocab;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

// Layout: one JSON header line (config, vocabulary, metadata), then one
// "tensor <name> <rows> <cols> <byte offset>" line per tensor, an "end" line,
// and the raw little-endian float32 payloads. Values are stored as float32,
// so save -> load -> save reproduces the file byte for byte.
void save_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to float32, matching what a save/load would do.
void round_to_float(ModelParams& params);

}  // namespace astmask
