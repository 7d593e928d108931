#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

namespace rollout::sandbox {

enum class CacheMode { SCRATCH, VERSIONED, LOCK };

inline const char* cache_mode_name(CacheMode m) {
  switch (m) {
    case CacheMode::SCRATCH: return "scratch";
    case CacheMode::VERSIONED: return "versioned";
    case CacheMode::LOCK: return "lock";
  }
  return "?";
}

struct ImageKey {
  std::string base_image;
  std::string framework_version;
  std::string lockfile_digest;

  bool operator==(const ImageKey&) const = default;
};

enum class CacheOutcome { HIT, REBUILD };

// Pure reuse rule. SCRATCH always rebuilds; VERSIONED reuses when the base
// image and framework version both match the cached build; LOCK reuses
// whenever the dependency lockfile is identical.
CacheOutcome cache_decision(CacheMode mode,
                            const std::optional<ImageKey>& cached,
                            const ImageKey& next);

// The portion of the key that identifies a reusable image under `mode`
// (hex digest). VERSIONED ignores the lockfile; LOCK ignores everything
// but the lockfile.
std::string image_digest(CacheMode mode, const ImageKey& key);

struct BuildResult {
  CacheOutcome outcome = CacheOutcome::REBUILD;
  std::filesystem::path image;  // sentinel file on disk
};

// Simulated image builder: a "build" writes `<cache_root>/<digest>.img`,
// so reuse is observable on disk across builder instances.
class ImageBuilder {
 public:
  explicit ImageBuilder(std::filesystem::path cache_root);

  BuildResult build(CacheMode mode, const ImageKey& key);

  const std::filesystem::path& cache_root() const { return cache_root_; }

 private:
  std::filesystem::path cache_root_;
  std::mutex mu_;
};

}  // namespace rollout::sandbox
