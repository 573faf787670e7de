#include "featreplay/nn/checkpoint.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

namespace featreplay::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "featreplay-checkpoint";

std::string blob_name(const std::string& tensor) {
  std::string out = tensor;
  std::replace_if(out.begin(), out.end(), [](char c) { return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'); }, '_');
  return out + ".bin";
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_checkpoint(const fs::path& dir, const std::string& kind, const nlohmann::json& meta, const NamedTensors& tensors) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = 1;
  manifest["kind"] = kind;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, value] : tensors) {
    const std::string file = blob_name(name);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(value->data()), static_cast<std::streamsize>(value->size() * sizeof(double)));
    if (!out) throw StateError("failed to write " + (dir / file).string());
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"rows", value->rows()}, {"cols", value->cols()}, {"dtype", "f64le"}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw StateError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != kFormat) throw StateError("not a checkpoint manifest: " + dir.string());
  return manifest;
}

nlohmann::json read_checkpoint(const fs::path& dir, const std::string& kind, const NamedTensors& tensors) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.value("kind", "") != kind) throw StateError("checkpoint kind mismatch in " + dir.string());
  for (const auto& [name, value] : tensors) {
    const auto it = std::find_if(manifest["tensors"].begin(), manifest["tensors"].end(),
                                 [&](const nlohmann::json& t) { return t.at("name") == name; });
    if (it == manifest["tensors"].end()) throw StateError("checkpoint lacks tensor " + name);
    if ((*it).at("rows").get<Eigen::Index>() != value->rows() || (*it).at("cols").get<Eigen::Index>() != value->cols()) {
      throw StateError("checkpoint shape mismatch for " + name);
    }
    const std::vector<char> bytes = read_bytes(dir / (*it).at("file").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(value->size()) * sizeof(double)) throw StateError("truncated blob for " + name);
    std::memcpy(value->data(), bytes.data(), bytes.size());
  }
  return manifest["meta"];
}

AuditReport audit_artifacts(const fs::path& root, const std::vector<std::vector<double>>& forbidden) {
  AuditReport report;
  auto flag = [&](std::string finding) {
    report.clean = false;
    report.findings.push_back(std::move(finding));
  };

  std::vector<std::string> needles;
  for (const auto& v : forbidden) {
    const std::size_t n = std::min<std::size_t>(8, v.size());
    if (n == 0) continue;
    needles.emplace_back(reinterpret_cast<const char*>(v.data()), n * sizeof(double));
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  for (const fs::path& file : files) {
    const fs::path dir = file.parent_path();
    const bool in_checkpoint = fs::exists(dir / "manifest.json");
    if (in_checkpoint) {
      if (file.filename() == "manifest.json") {
        ++report.checkpoints;
        continue;
      }
      nlohmann::json manifest;
      try {
        manifest = read_manifest(dir);
      } catch (const std::exception& e) {
        flag(file.string() + ": unreadable manifest (" + e.what() + ")");
        continue;
      }
      const auto it = std::find_if(manifest["tensors"].begin(), manifest["tensors"].end(), [&](const nlohmann::json& t) {
        return t.at("file").get<std::string>() == file.filename().string();
      });
      if (it == manifest["tensors"].end()) {
        flag(file.string() + ": file not listed in checkpoint manifest");
        continue;
      }
      const auto expected = (*it).at("rows").get<std::uintmax_t>() * (*it).at("cols").get<std::uintmax_t>() * sizeof(double);
      if (fs::file_size(file) != expected) flag(file.string() + ": blob size does not match its declared shape");
      ++report.blobs;
      if (!needles.empty()) {
        const std::vector<char> bytes = read_bytes(file);
        const std::string_view hay(bytes.data(), bytes.size());
        for (const auto& needle : needles) {
          if (hay.find(needle) != std::string_view::npos) {
            flag(file.string() + ": contains a forbidden feature vector");
            break;
          }
        }
      }
    } else {
      const std::string ext = file.extension().string();
      if (ext != ".json" && ext != ".csv" && ext != ".txt" && ext != ".pgm") {
        flag(file.string() + ": unexpected persisted file outside checkpoints");
      }
    }
  }
  return report;
}

}  // namespace featreplay::nn
