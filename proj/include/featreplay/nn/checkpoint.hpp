#pragma once

#include "featreplay/nn/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace featreplay::nn {

using NamedTensors = std::vector<std::pair<std::string, Mat*>>;

/// Write `dir/manifest.json` plus one raw little-endian float64 blob per tensor.
/// `meta` is stored verbatim under the manifest's "meta" key.
void write_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& meta,
                      const NamedTensors& tensors);

/// Read a checkpoint written by write_checkpoint into pre-shaped tensors and
/// return its "meta" object. Shapes must match exactly.
nlohmann::json read_checkpoint(const std::filesystem::path& dir, const std::string& kind, const NamedTensors& tensors);

/// Manifest only, for callers that need the meta before building the model.
nlohmann::json read_manifest(const std::filesystem::path& dir);

struct AuditReport {
  bool clean = true;
  std::vector<std::string> findings;
  std::size_t checkpoints = 0;
  std::size_t blobs = 0;
};

/// Scan a run directory for persisted data that is not model state.
///
/// Checkpoint directories (those holding a manifest.json) may only contain the
/// blobs their manifest lists, with matching byte sizes. Elsewhere only
/// JSON/CSV/text reports and PGM renderings are accepted. Every blob is also
/// searched for the byte image of each `forbidden` vector (its first
/// min(8, size) entries).
AuditReport audit_artifacts(const std::filesystem::path& root, const std::vector<std::vector<double>>& forbidden = {});

}  // namespace featreplay::nn
