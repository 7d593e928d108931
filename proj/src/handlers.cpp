#include "rollout/handler.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <thread>

#include "rollout/sandbox/action.hpp"
#include "rollout/text_codec.hpp"

namespace rollout {

// ------------------------------------------------------------- defaults

InitResult AgentHandler::init_exception(Job&, ServiceContext&,
                                        const std::string& message) noexcept {
  InitResult r;
  try {
    r.metadata = {{"error", message}};
  } catch (...) {
  }
  return r;
}

RunResult AgentHandler::run_exception(Job&, ServiceContext&,
                                      const std::string& message) noexcept {
  RunResult r;
  try {
    r.artifacts = {{"error", message}};
  } catch (...) {
  }
  return r;
}

EvalResult AgentHandler::eval_exception(Job&, ServiceContext&,
                                        const std::string& message) noexcept {
  EvalResult r;
  r.reward = 0.0;
  try {
    r.details = {{"error", message}};
  } catch (...) {
  }
  return r;
}

nlohmann::json AgentHandler::final_result(Job& job, ServiceContext&) noexcept {
  try {
    return build_process_response(job);
  } catch (...) {
    // Last-ditch well-formedness: never let response composition fail.
    return {{"job_id", job.id()}, {"status", status_name(job.status())},
            {"reward", 0.0}, {"trajectory", nlohmann::json::array()},
            {"timings", nlohmann::json::object()}};
  }
}

nlohmann::json build_process_response(Job& job) {
  auto traj = job.trajectory_snapshot();
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : traj.turns()) {
    turns.push_back({{"role", role_name(t.role)},
                     {"input_ids", t.input_ids},
                     {"output_ids", t.output_ids},
                     {"logprobs", t.logprobs},
                     {"text", t.text}});
  }

  auto& timer = job.timer();
  double init_s = to_seconds(timer.elapsed(Stage::INIT));
  double run_s = to_seconds(timer.elapsed(Stage::RUN));
  double eval_s = to_seconds(timer.elapsed(Stage::EVAL));
  double total_s = to_seconds(job.terminal_at() - job.submitted_at());
  double queue_s = std::max(0.0, total_s - (init_s + run_s + eval_s));

  nlohmann::json out = {
      {"job_id", job.id()},
      {"status", status_name(job.status())},
      {"reward", job.reward().value_or(0.0)},
      {"trajectory", std::move(turns)},
      {"timings",
       {{"init_seconds", init_s},
        {"run_seconds", run_s},
        {"eval_seconds", eval_s},
        {"queue_seconds", queue_s}}},
  };
  if (auto backend = job.backend()) out["backend"] = *backend;
  if (auto err = job.error()) {
    out["error"] = {{"stage", stage_name(err->stage)}, {"message", err->message}};
  }
  return out;
}

// ------------------------------------------------------------- registry

void HandlerRegistry::register_handler(const std::string& name,
                                       HandlerFactory factory) {
  if (name.empty()) throw MalformedRequest{"handler name must be nonempty"};
  if (!factory) throw MalformedRequest{"handler factory must be callable"};
  std::lock_guard lk{mu_};
  if (!factories_.emplace(name, std::move(factory)).second)
    throw DuplicateName{"handler already registered: " + name};
}

std::unique_ptr<AgentHandler> HandlerRegistry::dispatch(const std::string& name) const {
  HandlerFactory factory;
  {
    std::lock_guard lk{mu_};
    auto it = factories_.find(name);
    if (it == factories_.end()) throw UnknownTask{"no handler named: " + name};
    factory = it->second;
  }
  return factory();
}

bool HandlerRegistry::contains(const std::string& name) const {
  std::lock_guard lk{mu_};
  return factories_.count(name) > 0;
}

std::vector<std::string> HandlerRegistry::names() const {
  std::lock_guard lk{mu_};
  std::vector<std::string> out;
  out.reserve(factories_.size());
  for (const auto& [name, _] : factories_) out.push_back(name);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------- directive parsing

std::optional<Directive> parse_directive(const std::string& text) {
  auto start = text.find("@@");
  if (start == std::string::npos) return std::nullopt;
  auto end = text.find("@@", start + 2);
  if (end == std::string::npos) return std::nullopt;
  std::string inner = text.substr(start + 2, end - start - 2);

  auto skip_ws = [&](std::size_t p) {
    while (p < inner.size() && std::isspace(static_cast<unsigned char>(inner[p]))) ++p;
    return p;
  };
  std::size_t p = skip_ws(0);
  std::size_t word_end = p;
  while (word_end < inner.size() && !std::isspace(static_cast<unsigned char>(inner[word_end])))
    ++word_end;
  std::string verb = inner.substr(p, word_end - p);

  Directive d;
  if (verb == "finish") {
    d.kind = Directive::Kind::FINISH;
    std::size_t a = skip_ws(word_end);
    d.answer = inner.substr(a);
    while (!d.answer.empty() && std::isspace(static_cast<unsigned char>(d.answer.back())))
      d.answer.pop_back();
    return d;
  }
  if (verb == "tool") {
    std::size_t name_start = skip_ws(word_end);
    std::size_t name_end = name_start;
    while (name_end < inner.size() && !std::isspace(static_cast<unsigned char>(inner[name_end])))
      ++name_end;
    if (name_end == name_start) return std::nullopt;
    d.kind = Directive::Kind::TOOL;
    d.tool_name = inner.substr(name_start, name_end - name_start);
    std::string args = inner.substr(skip_ws(name_end));
    if (args.empty()) {
      d.args = nlohmann::json::object();
    } else {
      d.args = nlohmann::json::parse(args, nullptr, /*allow_exceptions=*/false);
      if (d.args.is_discarded()) return std::nullopt;
    }
    return d;
  }
  return std::nullopt;
}

// ------------------------------------------------------------- builtins

namespace {

// Interrupt probe handed to backend generate calls: raises the precise
// interruption type (cancel vs timeout) from inside the retry loop.
std::function<bool()> interrupt_probe(Job& job) {
  return [&job] {
    job.throw_if_interrupted();
    return false;
  };
}

// Slice sleeps so cancellation and budget expiry cut in promptly.
void cooperative_sleep(Job& job, double ms) {
  auto remaining = std::chrono::duration<double, std::milli>(ms);
  while (remaining.count() > 0) {
    job.throw_if_interrupted();
    auto slice = std::min(remaining, std::chrono::duration<double, std::milli>(10));
    std::this_thread::sleep_for(slice);
    remaining -= slice;
  }
  job.throw_if_interrupted();
}

std::string trim_trailing(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

// Sandbox capacity is a shared resource: when the address pool is exhausted,
// wait for a slot instead of failing the job. Cancel/timeout still cut in.
std::shared_ptr<sandbox::SandboxRuntime> acquire_runtime(Job& job,
                                                         ServiceContext& ctx) {
  while (true) {
    job.throw_if_interrupted();
    try {
      return ctx.sandbox->start();
    } catch (const PoolExhausted&) {
      std::this_thread::sleep_for(std::chrono::milliseconds{20});
    }
  }
}

// One backend call appended to the trajectory verbatim: output_ids and
// logprobs land untouched; text is a display-only rendering.
backend::GenerateResult generate_turn(Job& job, ServiceContext& ctx) {
  auto result = ctx.backends->generate(job.id(), job.flatten_prompt(),
                                       job.sampling(), interrupt_probe(job));
  job.record_backend(result.address);
  job.append_turn(make_assistant_turn(result.output_ids, result.logprobs,
                                      decode_text(result.output_ids)));
  return result;
}

class EchoHandler : public AgentHandler {
 public:
  InitResult init(Job& job, ServiceContext& ctx) override {
    const auto& p = job.instance();
    turns_ = std::max(1, p.value("turns", 1));
    std::string prompt_text = p.value("prompt_text", std::string{"hello"});
    InitResult r;
    if (p.value("attach_runtime", true)) r.runtime = acquire_runtime(job, ctx);
    job.append_turn(make_user_turn(encode_text(prompt_text), prompt_text));
    r.metadata = {{"task", "echo"}};
    r.config.max_turns = turns_;
    return r;
  }

  RunResult run(Job& job, ServiceContext& ctx) override {
    for (int t = 0; t < turns_; ++t) {
      job.throw_if_interrupted();
      generate_turn(job, ctx);
    }
    return RunResult{{{"turns", turns_}}, false};
  }

  EvalResult eval(Job& job, ServiceContext&) override {
    auto traj = job.trajectory_snapshot();
    bool any_output = false;
    for (const auto& t : traj.turns())
      if (t.role == Role::ASSISTANT && !t.output_ids.empty()) any_output = true;
    return EvalResult{any_output ? 1.0 : 0.0, {{"turns_seen", traj.size()}}};
  }

 private:
  int turns_ = 1;
};

class ArithHandler : public AgentHandler {
 public:
  InitResult init(Job& job, ServiceContext& ctx) override {
    const auto& p = job.instance();
    expression_ = p.value("expression", std::string{"1+1"});
    expected_ = p.contains("expected") ? canonical(p["expected"]) : std::string{};
    max_turns_ = std::max(1, p.value("max_turns", 4));

    InitResult r;
    r.runtime = acquire_runtime(job, ctx);
    job.append_turn(make_user_turn(encode_text(expression_), expression_));
    r.metadata = {{"task", "arith"}};
    r.config.max_turns = max_turns_;
    r.config.tool_set = {"compute"};
    return r;
  }

  RunResult run(Job& job, ServiceContext& ctx) override {
    for (int turn = 0; turn < max_turns_; ++turn) {
      auto result = generate_turn(job, ctx);
      auto directive = parse_directive(decode_text(result.output_ids));
      if (!directive || directive->kind == Directive::Kind::FINISH) {
        answer_ = directive ? directive->answer
                            : trim_trailing(decode_text(result.output_ids));
        return RunResult{{{"answer", answer_}, {"turns", turn + 1}}, false};
      }
      std::string observation = run_tool(job, *directive);
      job.append_turn(make_tool_turn(encode_text(observation), observation));
      job.throw_if_interrupted();
    }
    return RunResult{{{"turns", max_turns_}}, true};
  }

  EvalResult eval(Job& job, ServiceContext&) override {
    double reward = (!answer_.empty() && answer_ == expected_) ? 1.0 : 0.0;
    nlohmann::json details = {{"answer", answer_}, {"expected", expected_}};
    (void)job;
    return EvalResult{reward, details};
  }

 private:
  static std::string canonical(const nlohmann::json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }

  std::string run_tool(Job& job, const Directive& d) {
    if (d.tool_name != "compute") return "error: unknown tool " + d.tool_name;
    std::string expr = d.args.value("expr", std::string{});
    const std::string allowed = "0123456789+-*/%() ";
    if (expr.empty() || expr.find_first_not_of(allowed) != std::string::npos)
      return "error: bad expression";

    auto rt = job.runtime();
    if (!rt) return "error: no runtime attached";
    sandbox::ActionRequest req;
    req.action_id = job.id() + "-compute";
    req.kind = sandbox::ActionKind::BASH;
    req.payload = "echo $((" + expr + "))";
    req.timeout = std::chrono::seconds{10};
    auto res = rt->execute(req);
    if (res.exit_code != 0)
      return "error(exit " + std::to_string(res.exit_code) + "): " + trim_trailing(res.output);
    return trim_trailing(res.output);
  }

  std::string expression_, expected_, answer_;
  int max_turns_ = 4;
};

class SleepyHandler : public AgentHandler {
 public:
  InitResult init(Job& job, ServiceContext& ctx) override {
    const auto& p = job.instance();
    init_ms_ = p.value("init_ms", 0.0);
    run_ms_ = p.value("run_ms", 0.0);
    eval_ms_ = p.value("eval_ms", 0.0);
    reward_ = p.value("reward", 1.0);
    run_calls_ = p.value("run_calls", 0);
    fail_stage_ = p.value("fail_stage", std::string{});

    std::string prompt_text = p.value("prompt_text", std::string{"sleepy"});
    if (run_calls_ > 0 || p.value("seed_prompt", true))
      job.append_turn(make_user_turn(encode_text(prompt_text), prompt_text));
    cooperative_sleep(job, init_ms_);
    if (fail_stage_ == "init") throw Error{"injected_failure", "sleepy init failure"};

    InitResult r;
    if (p.value("attach_runtime", false)) r.runtime = acquire_runtime(job, ctx);
    r.metadata = {{"task", "sleepy"}};
    return r;
  }

  RunResult run(Job& job, ServiceContext& ctx) override {
    for (int i = 0; i < run_calls_; ++i) generate_turn(job, ctx);
    cooperative_sleep(job, run_ms_);
    if (fail_stage_ == "run") throw Error{"injected_failure", "sleepy run failure"};
    return RunResult{{{"slept_ms", run_ms_}, {"calls", run_calls_}}, false};
  }

  EvalResult eval(Job& job, ServiceContext&) override {
    cooperative_sleep(job, eval_ms_);
    if (fail_stage_ == "eval") throw Error{"injected_failure", "sleepy eval failure"};
    return EvalResult{reward_, {{"slept_ms", eval_ms_}}};
  }

 private:
  double init_ms_ = 0, run_ms_ = 0, eval_ms_ = 0, reward_ = 1.0;
  int run_calls_ = 0;
  std::string fail_stage_;
};

}  // namespace

void install_builtin_handlers(HandlerRegistry& registry) {
  registry.register_handler("echo", [] { return std::make_unique<EchoHandler>(); });
  registry.register_handler("arith", [] { return std::make_unique<ArithHandler>(); });
  registry.register_handler("sleepy", [] { return std::make_unique<SleepyHandler>(); });
}

}  // namespace rollout
