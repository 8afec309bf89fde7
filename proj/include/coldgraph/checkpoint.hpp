#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coldgraph/enhancer.hpp"
#include "coldgraph/ground_truth.hpp"
#include "coldgraph/model.hpp"
#include "coldgraph/train.hpp"

namespace coldgraph {

// Binary container: magic line "coldgraph-ckpt v1", the config text, a notes
// string, named double tensors, and a trailing FNV-1a 64 checksum.
struct Checkpoint {
  std::string config;
  std::string notes;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
// ChecksumError on truncation or corruption, Error on a version mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Model tensors live under "model/", the enhancer under "enhancer/", the
// ground-truth table under "teacher/".
Checkpoint pack(const TrainConfig& cfg, const ModelParams& model, const EnhancerParams* enhancer = nullptr,
                const GroundTruthTable* gt = nullptr);
// Copies tensors into existing parameters; ShapeError on any mismatch.
void unpack_model(const Checkpoint& ck, ModelParams& into);
bool unpack_enhancer(const Checkpoint& ck, EnhancerParams& into);
std::optional<GroundTruthTable> unpack_ground_truth(const Checkpoint& ck);

struct LoadedCheckpoint {
  TrainConfig config;
  ModelParams model;
  std::optional<EnhancerParams> enhancer;
  std::optional<GroundTruthTable> ground_truth;
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const ModelParams& model,
                     const EnhancerParams* enhancer = nullptr, const GroundTruthTable* gt = nullptr);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coldgraph
