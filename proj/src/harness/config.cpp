#include "numblocks/harness/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::harness {

namespace {

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config: '{}' must be an object", path_));
  }

  const Json* find(std::string_view key) {
    seen_.emplace(key);
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  template <class Int>
  void integer(std::string_view key, Int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(fmt::format("config: '{}' must be an integer", where(key)));
      out = v->get<Int>();
    }
  }

  void real(std::string_view key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(fmt::format("config: '{}' must be a number", where(key)));
      out = v->get<double>();
    }
  }

  void optional_real(std::string_view key, std::optional<double>& out) {
    if (const Json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        double x = 0.0;
        real(key, x);
        out = x;
      }
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(fmt::format("config: '{}' must be true or false", where(key)));
      out = v->get<bool>();
    }
  }

  std::optional<std::string> string(std::string_view key) {
    const Json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ConfigError(fmt::format("config: '{}' must be a string", where(key)));
    return v->get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(fmt::format("config: unknown key '{}'", where(it.key())));
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

// Enum parsers throw DomainError; in a config file that is a ConfigError.
template <class F>
auto parse_name(std::string_view where, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw ConfigError(fmt::format("config: '{}': {}", where, e.what()));
  }
}

std::uint64_t random_seed_of(const curriculum::OrderingStrategy& s) {
  const auto* r = std::get_if<curriculum::Random>(&s);
  return r ? r->seed : 0;
}

void read_model(Section& s, TrainConfig& cfg) {
  if (auto kind = s.string("kind")) {
    cfg.model = parse_name(s.where("kind"), [&] { return models::model_kind_from_string(*kind); });
  }
  auto& m = cfg.model_config;
  s.integer("embed_dim", m.embed_dim);
  s.integer("attention_layers", m.attention_layers);
  s.integer("attention_heads", m.attention_heads);
  s.integer("ff_dim", m.ff_dim);
  if (const Json* h = s.find("hidden")) {
    if (!h->is_array()) throw ConfigError("config: 'model.hidden' must be a list of integers");
    m.hidden.clear();
    for (const auto& x : *h) {
      if (!x.is_number_integer()) throw ConfigError("config: 'model.hidden' must be a list of integers");
      m.hidden.push_back(x.get<int>());
    }
  }
  s.integer("visual_dim", m.visual_dim);
  s.integer("fusion_hidden", m.fusion_hidden);
  if (const Json* p = s.find("parity_target")) {
    if (p->is_null()) {
      m.parity_target.reset();
    } else if (p->is_string() && p->get<std::string>() == "auto") {
      m.parity_target = models::ModelConfig::kParityAuto;
    } else if (p->is_number_integer()) {
      m.parity_target = p->get<int>();
    } else {
      throw ConfigError("config: 'model.parity_target' must be an integer, \"auto\" or null");
    }
  }
}

void read_curriculum(Section& s, CurriculumConfig& c) {
  const auto name = s.string("ordering");
  std::uint64_t seed = random_seed_of(c.ordering);
  s.integer("random_seed", seed);
  const std::string ordering = name ? *name : curriculum::to_string(c.ordering);
  c.ordering = parse_name(s.where("ordering"), [&] { return curriculum::ordering_from_string(ordering, seed); });
  s.integer("block_size", c.block_size);
  s.integer("episodes_per_number", c.episodes_per_number);
  s.integer("max_actions", c.max_actions);
}

void read_ppo(Section& s, ppo::PpoConfig& p) {
  s.real("gamma", p.gamma);
  s.real("lam", p.lam);
  s.real("value_coef", p.value_coef);
  s.real("policy_coef", p.policy_coef);
  s.real("entropy_coef", p.entropy_coef);
  s.optional_real("clip_epsilon", p.clip_epsilon);
  s.integer("epochs", p.epochs);
  s.integer("minibatch_size", p.minibatch_size);
  s.integer("horizon", p.horizon);
  s.boolean("normalize_advantages", p.normalize_advantages);
  s.optional_real("max_grad_norm", p.max_grad_norm);
}

void read_adam(Section& s, nn::AdamConfig& a) {
  s.real("lr", a.lr);
  s.real("beta1", a.beta1);
  s.real("beta2", a.beta2);
  s.real("eps", a.eps);
}

template <class F>
void section(Section& parent, std::string_view key, F&& body) {
  if (const Json* j = parent.find(key)) {
    Section s(*j, parent.where(key));
    body(s);
    s.finish();
  }
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

bool CurriculumConfig::operator==(const CurriculumConfig& o) const {
  return curriculum::to_string(ordering) == curriculum::to_string(o.ordering) &&
         random_seed_of(ordering) == random_seed_of(o.ordering) && block_size == o.block_size &&
         episodes_per_number == o.episodes_per_number && max_actions == o.max_actions;
}

bool TrainConfig::operator==(const TrainConfig&) const = default;

void TrainConfig::validate() const {
  model_config.validate();
  ppo.validate();
  adam.validate();
  if (curriculum.block_size < 1) throw ConfigError("config: curriculum.block_size must be >= 1");
  if (curriculum.episodes_per_number < 1 || curriculum.episodes_per_number % curriculum.block_size != 0) {
    throw ConfigError(fmt::format("config: curriculum.episodes_per_number ({}) must be a positive multiple of "
                                  "block_size ({})",
                                  curriculum.episodes_per_number, curriculum.block_size));
  }
  if (curriculum::build_training_set(curriculum.max_actions).empty()) {
    throw ConfigError(fmt::format("config: curriculum.max_actions {} admits no numbers", curriculum.max_actions));
  }
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("config: seeds must be unique");
  }
  if (eval_interval_frames < ppo.horizon) {
    throw ConfigError(fmt::format("config: eval_interval_frames ({}) must be >= ppo.horizon ({})",
                                  eval_interval_frames, ppo.horizon));
  }
  if (max_frames && *max_frames < 1) throw ConfigError("config: max_frames must be >= 1");
  if (abort && abort->after_frames < 0) throw ConfigError("config: abort.after_frames must be >= 0");
  if (output_dir && output_dir->empty()) throw ConfigError("config: output_dir must not be empty");
}

TrainConfig config_from_json(const Json& j) {
  TrainConfig cfg;
  Section root(j, "");
  section(root, "model", [&](Section& s) { read_model(s, cfg); });
  section(root, "instructions", [&](Section& s) {
    if (auto mode = s.string("mode")) {
      cfg.instructions = parse_name(s.where("mode"), [&] { return instr::instruction_mode_from_string(*mode); });
    }
  });
  section(root, "env", [&](Section& s) {
    if (auto mode = s.string("reward_mode")) {
      cfg.reward_mode = parse_name(s.where("reward_mode"), [&] { return env::reward_mode_from_string(*mode); });
    }
  });
  section(root, "curriculum", [&](Section& s) { read_curriculum(s, cfg.curriculum); });
  section(root, "ppo", [&](Section& s) { read_ppo(s, cfg.ppo); });
  section(root, "adam", [&](Section& s) { read_adam(s, cfg.adam); });
  if (const Json* seeds = root.find("seeds")) {
    if (!seeds->is_array()) throw ConfigError("config: 'seeds' must be a list of non-negative integers");
    cfg.seeds.clear();
    for (const auto& x : *seeds) {
      if (!x.is_number_unsigned()) throw ConfigError("config: 'seeds' must be a list of non-negative integers");
      cfg.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  root.integer("eval_interval_frames", cfg.eval_interval_frames);
  if (const Json* mf = root.find("max_frames"); mf && !mf->is_null()) {
    std::int64_t v = 0;
    root.integer("max_frames", v);
    cfg.max_frames = v;
  }
  if (const Json* a = root.find("abort"); a && !a->is_null()) {
    AbortRule rule;
    Section s(*a, "abort");
    s.integer("after_frames", rule.after_frames);
    s.real("min_avg_reward", rule.min_avg_reward);
    s.finish();
    cfg.abort = rule;
  }
  if (const Json* o = root.find("output_dir"); o && !o->is_null()) cfg.output_dir = root.string("output_dir");
  root.finish();
  cfg.validate();
  return cfg;
}

Json config_to_json(const TrainConfig& cfg) {
  const auto& m = cfg.model_config;
  Json j;
  j["model"] = {{"kind", models::to_string(cfg.model)},
                {"embed_dim", m.embed_dim},
                {"attention_layers", m.attention_layers},
                {"attention_heads", m.attention_heads},
                {"ff_dim", m.ff_dim},
                {"hidden", m.hidden},
                {"visual_dim", m.visual_dim},
                {"fusion_hidden", m.fusion_hidden},
                {"parity_target", !m.parity_target                                   ? Json(nullptr)
                                  : *m.parity_target == models::ModelConfig::kParityAuto ? Json("auto")
                                                                                         : Json(*m.parity_target)}};
  j["instructions"] = {{"mode", instr::to_string(cfg.instructions)}};
  j["env"] = {{"reward_mode", env::to_string(cfg.reward_mode)}};
  j["curriculum"] = {{"ordering", curriculum::to_string(cfg.curriculum.ordering)},
                     {"random_seed", random_seed_of(cfg.curriculum.ordering)},
                     {"block_size", cfg.curriculum.block_size},
                     {"episodes_per_number", cfg.curriculum.episodes_per_number},
                     {"max_actions", cfg.curriculum.max_actions}};
  const auto& p = cfg.ppo;
  j["ppo"] = {{"gamma", p.gamma},
              {"lam", p.lam},
              {"value_coef", p.value_coef},
              {"policy_coef", p.policy_coef},
              {"entropy_coef", p.entropy_coef},
              {"clip_epsilon", optional_json(p.clip_epsilon)},
              {"epochs", p.epochs},
              {"minibatch_size", p.minibatch_size},
              {"horizon", p.horizon},
              {"normalize_advantages", p.normalize_advantages},
              {"max_grad_norm", optional_json(p.max_grad_norm)}};
  j["adam"] = {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}};
  j["seeds"] = cfg.seeds;
  j["eval_interval_frames"] = cfg.eval_interval_frames;
  j["max_frames"] = cfg.max_frames ? Json(*cfg.max_frames) : Json(nullptr);
  j["abort"] = cfg.abort ? Json{{"after_frames", cfg.abort->after_frames},
                                {"min_avg_reward", cfg.abort->min_avg_reward}}
                         : Json(nullptr);
  j["output_dir"] = cfg.output_dir ? Json(*cfg.output_dir) : Json(nullptr);
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config file '{}'", path.string()));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(fmt::format("config file '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

std::filesystem::path resolve_output_dir(const std::optional<std::string>& flag, const TrainConfig& cfg) {
  if (flag) return *flag;
  if (cfg.output_dir) return *cfg.output_dir;
  if (const char* env = std::getenv("NUMBLOCKS_OUT"); env && *env) return env;
  return "runs";
}

}  // namespace numblocks::harness
