#include "rollout/sandbox/build_cache.hpp"

#include <cstdio>
#include <fstream>

#include "rollout/errors.hpp"
#include "rollout/mock/policy.hpp"  // fnv1a64

namespace rollout::sandbox {

CacheOutcome cache_decision(CacheMode mode,
                            const std::optional<ImageKey>& cached,
                            const ImageKey& next) {
  if (mode == CacheMode::SCRATCH) return CacheOutcome::REBUILD;
  if (!cached) return CacheOutcome::REBUILD;
  switch (mode) {
    case CacheMode::VERSIONED:
      return (cached->base_image == next.base_image &&
              cached->framework_version == next.framework_version)
                 ? CacheOutcome::HIT
                 : CacheOutcome::REBUILD;
    case CacheMode::LOCK:
      return cached->lockfile_digest == next.lockfile_digest
                 ? CacheOutcome::HIT
                 : CacheOutcome::REBUILD;
    case CacheMode::SCRATCH:
      break;
  }
  return CacheOutcome::REBUILD;
}

std::string image_digest(CacheMode mode, const ImageKey& key) {
  // Only the fields that decide reuse go into the digest, so a LOCK-mode
  // sentinel is shared across base images with the same lockfile.
  std::string material{cache_mode_name(mode)};
  material.push_back('\0');
  switch (mode) {
    case CacheMode::SCRATCH:
      material += key.base_image + '\0' + key.framework_version + '\0' +
                  key.lockfile_digest;
      break;
    case CacheMode::VERSIONED:
      material += key.base_image + '\0' + key.framework_version;
      break;
    case CacheMode::LOCK:
      material += key.lockfile_digest;
      break;
  }
  std::uint64_t h = mock::fnv1a64(material.data(), material.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ImageBuilder::ImageBuilder(std::filesystem::path cache_root)
    : cache_root_(std::move(cache_root)) {
  std::filesystem::create_directories(cache_root_);
}

BuildResult ImageBuilder::build(CacheMode mode, const ImageKey& key) {
  std::lock_guard lk{mu_};
  auto sentinel = cache_root_ / (image_digest(mode, key) + ".img");
  if (mode != CacheMode::SCRATCH && std::filesystem::exists(sentinel))
    return {CacheOutcome::HIT, sentinel};

  std::ofstream out{sentinel, std::ios::trunc};
  if (!out) throw Error{"cache_io", "cannot write " + sentinel.string()};
  out << "{\"mode\":\"" << cache_mode_name(mode) << "\",\"base_image\":\""
      << key.base_image << "\",\"framework_version\":\"" << key.framework_version
      << "\",\"lockfile_digest\":\"" << key.lockfile_digest << "\"}\n";
  return {CacheOutcome::REBUILD, sentinel};
}

}  // namespace rollout::sandbox
