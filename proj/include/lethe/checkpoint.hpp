#pragma once

// On-disk artifacts. A checkpoint bundle holds only the adapter tensors, the
// vocabulary, and a manifest; the frozen backbone lives in its own artifact
// produced by base training and is referenced by path and digest. Tensor
// files are little-endian float32 with named row-major blocks, so identical
// parameters give identical bytes.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lethe/model.hpp"
#include "lethe/vocab.hpp"

namespace lethe {

void write_tensor_file(const std::string& path,
                       const std::vector<std::pair<std::string, Matf>>& tensors);
std::vector<std::pair<std::string, Matf>> read_tensor_file(const std::string& path);

// Digest over the flat float32 parameter bytes; proves the backbone stayed
// frozen and that repeated runs produce identical checkpoints.
std::string backbone_digest(const BackboneParams<float>& bb);
std::string adapters_digest(const AdapterSet<float>& a);

struct BackboneArtifact {
  BackboneParams<float> backbone;
  Vocabulary vocab;
  nlohmann::json manifest;
};

void save_backbone(const std::string& dir, const BackboneParams<float>& bb,
                   const Vocabulary& vocab, const nlohmann::json& manifest);
BackboneArtifact load_backbone(const std::string& dir);

struct CheckpointBundle {
  AdapterSet<float> adapters;
  Vocabulary vocab;
  nlohmann::json manifest;
};

void save_checkpoint(const std::string& dir, const AdapterSet<float>& adapters,
                     const Vocabulary& vocab, const nlohmann::json& manifest);
CheckpointBundle load_checkpoint(const std::string& dir,
                                 const TransformerConfig& cfg);

}  // namespace lethe
