#include "rollout/trainer/workload.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>

#include "rollout/errors.hpp"

namespace rollout::train {

nlohmann::json workload_to_json(const Workload& w) {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : w.prompts) {
    prompts.push_back({{"prompt_id", p.prompt_id},
                       {"payload", p.payload},
                       {"rewards", p.rewards},
                       {"latency_ms", p.latency_ms}});
  }
  return {{"rollouts_per_prompt", w.rollouts_per_prompt},
          {"prompts", std::move(prompts)}};
}

Workload workload_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw MalformedRequest{"workload must be an object"};
  Workload w;
  w.rollouts_per_prompt = j.value("rollouts_per_prompt", 8);
  if (w.rollouts_per_prompt < 1) {
    throw MalformedRequest{"rollouts_per_prompt must be >= 1"};
  }
  for (const auto& pj : j.value("prompts", nlohmann::json::array())) {
    PromptSpec p;
    p.prompt_id = pj.at("prompt_id").get<std::string>();
    p.payload = pj.value("payload", nlohmann::json::object());
    p.rewards = pj.at("rewards").get<std::vector<double>>();
    p.latency_ms = pj.at("latency_ms").get<std::vector<double>>();
    const auto n = static_cast<std::size_t>(w.rollouts_per_prompt);
    if (p.rewards.size() != n || p.latency_ms.size() != n) {
      throw MalformedRequest{"prompt " + p.prompt_id +
                             ": rewards/latency_ms must have length " +
                             std::to_string(n)};
    }
    w.prompts.push_back(std::move(p));
  }
  return w;
}

Workload load_workload(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error{"workload_io", "cannot open " + path};
  nlohmann::json j;
  in >> j;
  return workload_from_json(j);
}

void save_workload(const Workload& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error{"workload_io", "cannot open " + path + " for writing"};
  out << workload_to_json(w).dump(2) << '\n';
}

Workload generate_workload(const WorkloadGenOptions& opts) {
  if (opts.num_prompts < 1 || opts.rollouts_per_prompt < 1) {
    throw MalformedRequest{"workload dimensions must be >= 1"};
  }
  std::mt19937_64 rng(opts.seed);
  std::bernoulli_distribution informative(opts.informative_probability);
  std::bernoulli_distribution straggler(opts.straggler_fraction);
  std::uniform_real_distribution<double> base_ms(opts.base_ms_min,
                                                 opts.base_ms_max);
  std::uniform_real_distribution<double> tail_ms(opts.straggler_ms_min,
                                                 opts.straggler_ms_max);
  std::bernoulli_distribution coin(0.5);

  const int n = opts.rollouts_per_prompt;
  Workload w;
  w.rollouts_per_prompt = n;
  w.prompts.reserve(static_cast<std::size_t>(opts.num_prompts));

  for (int i = 0; i < opts.num_prompts; ++i) {
    PromptSpec p;
    p.prompt_id = "prompt-" + std::to_string(i);
    p.payload = nlohmann::json::object();

    p.rewards.assign(static_cast<std::size_t>(n), 0.0);
    if (n >= 2 && informative(rng)) {
      // Mixed outcomes: k successes with 1 <= k <= n-1 keeps the group
      // nonuniform no matter which subset completes last.
      std::uniform_int_distribution<int> k_dist(1, n - 1);
      int k = k_dist(rng);
      std::vector<std::size_t> idx(static_cast<std::size_t>(n));
      for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
      std::shuffle(idx.begin(), idx.end(), rng);
      for (int j = 0; j < k; ++j) p.rewards[idx[static_cast<std::size_t>(j)]] = 1.0;
    } else {
      double uniform_value = coin(rng) ? 1.0 : 0.0;
      p.rewards.assign(static_cast<std::size_t>(n), uniform_value);
    }

    p.latency_ms.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      p.latency_ms.push_back(straggler(rng) ? tail_ms(rng) : base_ms(rng));
    }
    w.prompts.push_back(std::move(p));
  }
  return w;
}

}  // namespace rollout::train
