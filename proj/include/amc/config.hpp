#pragma once

// Experiment configuration: JSON schema v1, validation with field paths.
//
// Attack hyperparameters come as two named fields per attack, "whitebox" and
// "blackbox". Missing keys take the defaults below; unknown keys are errors.

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amc/attacks.hpp"
#include "amc/blackbox.hpp"
#include "amc/data.hpp"
#include "amc/train.hpp"
#include "json.hpp"

namespace amc {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what) : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct AttackPair {
  AttackConfig whitebox;
  AttackConfig blackbox;
};

inline constexpr std::array<AttackId, 4> kAttackColumns = {AttackId::fgsm, AttackId::eap, AttackId::pgm, AttackId::vap};

/// Attack table: (white-box, black-box) per attack, MNIST column.
inline std::array<AttackPair, 4> default_attack_table() {
  return {{
      {FgsmConfig{0.1}, FgsmConfig{0.1}},
      {EapConfig{1e-2, 5, 8, 1e-3, 1e-1}, EapConfig{1e-2, 7, 15, 1e-3, 1e-1}},
      {PgmConfig{0.3, 15, {}}, PgmConfig{0.3, 20, {}}},
      {VapConfig{1.0, 6, 5.0}, VapConfig{1.0, 10, 8.0}},
  }};
}

struct SynthSection {
  std::size_t classes = 4;
  std::size_t side = 16;
  std::size_t train_size = 800;
  std::size_t test_size = 1000;
  std::size_t pool_size = 800;
  SynthOptions options;
};

struct IdxSection {
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t train_limit = 0;  // 0: all
  std::size_t test_limit = 0;
  std::size_t pool_size = 1000;  // carved from the training file, disjoint from target training data
};

struct DatasetConfig {
  std::string source = "synthetic";
  SynthSection synthetic;
  IdxSection idx;
  bool balance = true;
  std::size_t augment_shift = 0;
};

struct SuiteStages {
  bool whitebox = true;
  bool blackbox = true;
  bool blackbox_single_attack_rows = true;
  std::vector<InterfaceKind> interfaces = {InterfaceKind::label_only, InterfaceKind::noisy_label,
                                           InterfaceKind::prob_vector};
  bool squeeze = true;
  std::vector<AttackId> leave_one_out = {AttackId::fgsm};
  bool no_transfer = true;
  bool reversed_order = true;
};

inline const std::vector<std::string>& defense_modes() {
  static const std::vector<std::string> modes = {"none", "adversarial-train", "amc-target", "amc-proxy"};
  return modes;
}

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "amc-out";
  DatasetConfig dataset;
  SplitSpec split;
  std::string target_arch = "desk-target";
  std::string proxy_arch = "desk-proxy";
  TrainConfig training{10, 0.05, 32, 0};
  std::array<AttackPair, 4> attacks = default_attack_table();
  std::vector<AttackId> cascade_order = {AttackId::fgsm, AttackId::vap, AttackId::eap, AttackId::pgm};
  double current_fraction = 0.8;
  double alpha = 0.5;
  TrainConfig cascade_training{5, 0.05, 32, 0};
  std::string defense = "amc-target";
  AttackId adversarial_attack = AttackId::fgsm;
  InterfaceKind interface = InterfaceKind::label_only;
  double noise = 0.1;
  TrainConfig proxy_training{10, 0.05, 32, 0};
  int squeeze_bits = 4;
  SuiteStages suite;

  const AttackPair& attack(AttackId id) const { return attacks[static_cast<std::size_t>(id)]; }
  AttackPair& attack(AttackId id) { return attacks[static_cast<std::size_t>(id)]; }
};

/// Attack strengths retuned for the 4-class 16x16 synthetic set, where the
/// MNIST values above leave FGSM harmless and EAP always successful.
inline std::array<AttackPair, 4> desk_attack_table() {
  return {{
      {FgsmConfig{0.3}, FgsmConfig{0.3}},
      {EapConfig{1e-2, 3, 10, 1e-2, 1e-1}, EapConfig{1e-2, 4, 15, 1e-2, 1e-1}},
      {PgmConfig{0.3, 15, {}}, PgmConfig{0.3, 20, {}}},
      {VapConfig{1.0, 6, 2.0}, VapConfig{1.0, 10, 3.0}},
  }};
}

/// Same as configs/desk.json.
inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.output_dir = "runs/desk";
  c.attacks = desk_attack_table();
  return c;
}

// ---------------------------------------------------------------- reading

namespace detail {

/// Object reader that remembers consumed keys so leftovers can be reported.
class JsonObject {
 public:
  JsonObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const nlohmann::json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(field(key), "must be >= 0");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    }
    out = v.get<T>();
  }

  template <class Fn>
  void object(const std::string& key, Fn&& fn) {
    if (!has(key)) return;
    JsonObject sub(j_.at(key), field(key));
    fn(sub);
    sub.finish();
  }

  std::optional<std::vector<std::string>> strings(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(field(key), "unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class Fn>
auto with_field(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field, e.what());
  }
}

inline void read_train(JsonObject& o, TrainConfig& t) {
  o.get("epochs", t.epochs);
  o.get("learning_rate", t.learning_rate);
  o.get("batch_size", t.batch_size);
}

inline void read_attack(JsonObject& o, AttackConfig& a) {
  std::visit(
      [&o](auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FgsmConfig>) {
          o.get("eps", c.eps);
        } else if constexpr (std::is_same_v<T, PgmConfig>) {
          o.get("eps", c.eps);
          o.get("nb_iter", c.nb_iter);
          if (o.has("step_size")) {
            double s = 0.0;
            o.get("step_size", s);
            c.step_size = s;
          }
        } else if constexpr (std::is_same_v<T, EapConfig>) {
          o.get("beta", c.beta);
          o.get("binary_steps", c.binary_steps);
          o.get("max_iterations", c.max_iterations);
          o.get("initial_const", c.initial_const);
          o.get("learning_rate", c.learning_rate);
        } else {
          o.get("xi", c.xi);
          o.get("num_iters", c.num_iters);
          o.get("eps", c.eps);
        }
      },
      a.params);
}

inline std::vector<AttackId> attack_list(const std::vector<std::string>& names, const std::string& field) {
  std::vector<AttackId> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    const AttackId id = with_field(f, [&] { return attack_id_from_name(names[i]); });
    for (AttackId seen : out)
      if (seen == id) throw ConfigError(f, "attack '" + names[i] + "' listed twice");
    out.push_back(id);
  }
  return out;
}

}  // namespace detail

/// Checks every nested invariant. Errors carry the offending field path.
inline void validate(const ExperimentConfig& c) {
  using detail::with_field;
  const auto& d = c.dataset;
  if (d.source == "synthetic") {
    const auto& s = d.synthetic;
    if (s.classes < 2 || s.classes > 10) throw ConfigError("dataset.synthetic.classes", "must lie in [2,10]");
    if (s.side < 8) throw ConfigError("dataset.synthetic.side", "must be >= 8");
    if (s.train_size == 0) throw ConfigError("dataset.synthetic.train_size", "must be positive");
    if (s.pool_size == 0) throw ConfigError("dataset.synthetic.pool_size", "must be positive");
    if (s.options.noise < 0.0) throw ConfigError("dataset.synthetic.noise", "must be >= 0");
    if (!(s.options.min_intensity > 0.0 && s.options.min_intensity <= 1.0))
      throw ConfigError("dataset.synthetic.min_intensity", "must lie in (0,1]");
    with_field("dataset.synthetic.test_size", [&] { return split_sizes(s.test_size, c.split); });
  } else if (d.source == "idx") {
    const auto& x = d.idx;
    const std::pair<const char*, const std::string*> paths[] = {{"train_images", &x.train_images},
                                                                {"train_labels", &x.train_labels},
                                                                {"test_images", &x.test_images},
                                                                {"test_labels", &x.test_labels}};
    for (const auto& [key, p] : paths) {
      const std::string field = std::string("dataset.idx.") + key;
      if (p->empty()) throw ConfigError(field, "missing path");
      if (!std::filesystem::exists(*p)) throw ConfigError(field, "no such file '" + *p + "'");
    }
    if (x.pool_size == 0) throw ConfigError("dataset.idx.pool_size", "must be positive");
  } else {
    throw ConfigError("dataset.source", "expected 'synthetic' or 'idx', got '" + d.source + "'");
  }
  with_field("split", [&] { return split_sizes(1000, c.split); });
  if (c.target_arch != "desk-target" && c.target_arch != "desk-proxy")
    throw ConfigError("architectures.target", "unknown architecture '" + c.target_arch + "'");
  if (c.proxy_arch != "desk-proxy")
    throw ConfigError("architectures.proxy", "the proxy architecture is fixed to 'desk-proxy'");
  with_field("training", [&] { validate(c.training); });
  with_field("cascade", [&] { validate(c.cascade_training); });
  with_field("blackbox.proxy_training", [&] { validate(c.proxy_training); });
  for (AttackId id : kAttackColumns) {
    const std::string base = std::string("attacks.") + attack_name(id);
    with_field(base + ".whitebox", [&] { validate(c.attack(id).whitebox); });
    with_field(base + ".blackbox", [&] { validate(c.attack(id).blackbox); });
  }
  if (c.cascade_order.empty()) throw ConfigError("cascade.order", "must name at least one attack");
  if (!(c.current_fraction > 0.0 && c.current_fraction <= 1.0))
    throw ConfigError("cascade.current_fraction", "must lie in (0,1]");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw ConfigError("cascade.alpha", "must lie in [0,1]");
  bool known = false;
  for (const auto& m : defense_modes()) known |= m == c.defense;
  if (!known) throw ConfigError("defense", "expected none, adversarial-train, amc-target or amc-proxy");
  if (!(c.noise >= 0.0 && c.noise < 1.0)) throw ConfigError("blackbox.noise", "must lie in [0,1)");
  if (c.squeeze_bits < 1 || c.squeeze_bits > 8) throw ConfigError("squeeze_bits", "must lie in [1,8]");
  for (std::size_t i = 0; i < c.suite.leave_one_out.size(); ++i)
    if (c.cascade_order.size() < 2)
      throw ConfigError("suite.leave_one_out[" + std::to_string(i) + "]",
                        "needs at least two attacks in cascade.order");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::JsonObject;
  ExperimentConfig c;
  JsonObject root(j, "");
  int version = 0;
  if (!root.has("schema_version")) throw ConfigError("schema_version", "missing");
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.object("dataset", [&](JsonObject& o) {
    o.get("source", c.dataset.source);
    o.get("balance", c.dataset.balance);
    o.get("augment_shift", c.dataset.augment_shift);
    o.object("synthetic", [&](JsonObject& s) {
      auto& y = c.dataset.synthetic;
      s.get("classes", y.classes);
      s.get("side", y.side);
      s.get("train_size", y.train_size);
      s.get("test_size", y.test_size);
      s.get("pool_size", y.pool_size);
      s.get("noise", y.options.noise);
      s.get("max_jitter", y.options.max_jitter);
      s.get("min_intensity", y.options.min_intensity);
    });
    o.object("idx", [&](JsonObject& s) {
      auto& x = c.dataset.idx;
      s.get("train_images", x.train_images);
      s.get("train_labels", x.train_labels);
      s.get("test_images", x.test_images);
      s.get("test_labels", x.test_labels);
      s.get("train_limit", x.train_limit);
      s.get("test_limit", x.test_limit);
      s.get("pool_size", x.pool_size);
    });
  });
  root.object("split", [&](JsonObject& o) {
    o.get("validation_fraction", c.split.validation_fraction);
    o.get("attack_reserve_fraction", c.split.attack_reserve_fraction);
  });
  root.object("architectures", [&](JsonObject& o) {
    o.get("target", c.target_arch);
    o.get("proxy", c.proxy_arch);
  });
  root.object("training", [&](JsonObject& o) { detail::read_train(o, c.training); });
  root.object("attacks", [&](JsonObject& o) {
    for (AttackId id : kAttackColumns)
      o.object(attack_name(id), [&](JsonObject& a) {
        a.object("whitebox", [&](JsonObject& w) { detail::read_attack(w, c.attack(id).whitebox); });
        a.object("blackbox", [&](JsonObject& b) { detail::read_attack(b, c.attack(id).blackbox); });
      });
  });
  root.object("cascade", [&](JsonObject& o) {
    if (auto names = o.strings("order")) c.cascade_order = detail::attack_list(*names, o.field("order"));
    o.get("current_fraction", c.current_fraction);
    o.get("alpha", c.alpha);
    detail::read_train(o, c.cascade_training);
  });
  root.get("defense", c.defense);
  if (root.has("adversarial_attack")) {
    std::string name;
    root.get("adversarial_attack", name);
    c.adversarial_attack = detail::with_field("adversarial_attack", [&] { return attack_id_from_name(name); });
  }
  root.object("blackbox", [&](JsonObject& o) {
    if (o.has("interface")) {
      std::string name;
      o.get("interface", name);
      c.interface = detail::with_field(o.field("interface"), [&] { return interface_from_name(name); });
    }
    o.get("noise", c.noise);
    o.object("proxy_training", [&](JsonObject& p) { detail::read_train(p, c.proxy_training); });
  });
  root.get("squeeze_bits", c.squeeze_bits);
  root.object("suite", [&](JsonObject& o) {
    auto& s = c.suite;
    o.get("whitebox", s.whitebox);
    o.get("blackbox", s.blackbox);
    o.get("blackbox_single_attack_rows", s.blackbox_single_attack_rows);
    if (auto names = o.strings("interfaces")) {
      s.interfaces.clear();
      for (std::size_t i = 0; i < names->size(); ++i)
        s.interfaces.push_back(detail::with_field(o.field("interfaces") + "[" + std::to_string(i) + "]",
                                                  [&] { return interface_from_name((*names)[i]); }));
    }
    o.get("squeeze", s.squeeze);
    if (auto names = o.strings("leave_one_out")) s.leave_one_out = detail::attack_list(*names, o.field("leave_one_out"));
    o.get("no_transfer", s.no_transfer);
    o.get("reversed_order", s.reversed_order);
  });
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------- writing

namespace detail {

inline nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}};
}

inline nlohmann::json attack_params_json(const AttackConfig& a) {
  nlohmann::json j = a;
  j.erase("attack");
  if (const auto* p = std::get_if<PgmConfig>(&a.params); p && !p->step_size) j.erase("step_size");
  return j;
}

inline std::vector<std::string> attack_names(const std::vector<AttackId>& ids) {
  std::vector<std::string> out;
  for (AttackId id : ids) out.push_back(attack_name(id));
  return out;
}

}  // namespace detail

/// Full config with every default spelled out; parses back to an equal config.
inline nlohmann::json to_json_value(const ExperimentConfig& c) {
  using detail::train_json;
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& s = c.dataset.synthetic;
  const auto& x = c.dataset.idx;
  j["dataset"] = {{"source", c.dataset.source},
                  {"balance", c.dataset.balance},
                  {"augment_shift", c.dataset.augment_shift},
                  {"synthetic",
                   {{"classes", s.classes},
                    {"side", s.side},
                    {"train_size", s.train_size},
                    {"test_size", s.test_size},
                    {"pool_size", s.pool_size},
                    {"noise", s.options.noise},
                    {"max_jitter", s.options.max_jitter},
                    {"min_intensity", s.options.min_intensity}}},
                  {"idx",
                   {{"train_images", x.train_images},
                    {"train_labels", x.train_labels},
                    {"test_images", x.test_images},
                    {"test_labels", x.test_labels},
                    {"train_limit", x.train_limit},
                    {"test_limit", x.test_limit},
                    {"pool_size", x.pool_size}}}};
  j["split"] = {{"validation_fraction", c.split.validation_fraction},
                {"attack_reserve_fraction", c.split.attack_reserve_fraction}};
  j["architectures"] = {{"target", c.target_arch}, {"proxy", c.proxy_arch}};
  j["training"] = train_json(c.training);
  for (AttackId id : kAttackColumns)
    j["attacks"][attack_name(id)] = {{"whitebox", detail::attack_params_json(c.attack(id).whitebox)},
                                     {"blackbox", detail::attack_params_json(c.attack(id).blackbox)}};
  j["cascade"] = train_json(c.cascade_training);
  j["cascade"]["order"] = detail::attack_names(c.cascade_order);
  j["cascade"]["current_fraction"] = c.current_fraction;
  j["cascade"]["alpha"] = c.alpha;
  j["defense"] = c.defense;
  j["adversarial_attack"] = attack_name(c.adversarial_attack);
  j["blackbox"] = {{"interface", interface_name(c.interface)},
                   {"noise", c.noise},
                   {"proxy_training", train_json(c.proxy_training)}};
  j["squeeze_bits"] = c.squeeze_bits;
  std::vector<std::string> ifaces;
  for (auto k : c.suite.interfaces) ifaces.push_back(interface_name(k));
  j["suite"] = {{"whitebox", c.suite.whitebox},
                {"blackbox", c.suite.blackbox},
                {"blackbox_single_attack_rows", c.suite.blackbox_single_attack_rows},
                {"interfaces", ifaces},
                {"squeeze", c.suite.squeeze},
                {"leave_one_out", detail::attack_names(c.suite.leave_one_out)},
                {"no_transfer", c.suite.no_transfer},
                {"reversed_order", c.suite.reversed_order}};
  return j;
}

}  // namespace amc
