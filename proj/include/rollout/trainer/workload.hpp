#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace rollout::train {

// Scripted prompt: rollout i of this prompt runs for latency_ms[i] and comes
// back with rewards[i], so batch and async schedulers see identical work.
struct PromptSpec {
  std::string prompt_id;
  nlohmann::json payload;          // merged into the sleepy task payload
  std::vector<double> rewards;     // length n
  std::vector<double> latency_ms;  // length n
};

struct Workload {
  int rollouts_per_prompt = 8;
  std::vector<PromptSpec> prompts;
};

Workload load_workload(const std::string& path);
void save_workload(const Workload& w, const std::string& path);
nlohmann::json workload_to_json(const Workload& w);
Workload workload_from_json(const nlohmann::json& j);

struct WorkloadGenOptions {
  int num_prompts = 64;
  int rollouts_per_prompt = 8;
  std::uint64_t seed = 0;
  // Probability a prompt's reward vector is nonuniform (informative).
  double informative_probability = 0.5;
  // Latency model: uniform base range plus a heavy tail.
  double base_ms_min = 30;
  double base_ms_max = 150;
  double straggler_fraction = 0.10;
  double straggler_ms_min = 800;
  double straggler_ms_max = 1500;
};

Workload generate_workload(const WorkloadGenOptions& opts);

}  // namespace rollout::train
