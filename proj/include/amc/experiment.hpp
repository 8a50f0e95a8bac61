#pragma once

// Experiment driver: data preparation, train / attack / suite commands.
//
// Every random stream derives from the master seed through derive_seed(seed,
// "<stage>"), so stages can be re-run independently and reproduce exactly.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amc/blackbox.hpp"
#include "amc/config.hpp"
#include "amc/data.hpp"
#include "amc/defenses.hpp"
#include "amc/eval.hpp"
#include "amc/serialize.hpp"
#include "json.hpp"

namespace amc {

struct PreparedData {
  Splits splits;
  Dataset pool;  // adversary's unlabeled proxy pool
};

inline nlohmann::json describe(const Dataset& ds) {
  return {{"name", ds.name}, {"partition", partition_name(ds.partition)}, {"size", ds.size()},
          {"class_counts", class_counts(ds)}};
}

/// Builds train / validation / attack-reserve / final-test parts and the
/// proxy pool. The pool never overlaps the target's training data.
inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.seed;
  Dataset train, test, pool;
  const auto& d = cfg.dataset;
  if (d.source == "synthetic") {
    const auto& s = d.synthetic;
    train = synth_generate(s.classes, s.train_size, s.side, derive_seed(seed, "data/train"), s.options);
    test = synth_generate(s.classes, s.test_size, s.side, derive_seed(seed, "data/test"), s.options);
    // a shifted slice of the same generator stands in for the adversary's own data
    pool = synth_generate(s.classes, s.pool_size, s.side, derive_seed(seed, "data/pool"), s.options);
    pool = augment_shift(pool, 1, derive_seed(seed, "data/pool-shift"));
    train.partition = Partition::train;
    test.partition = Partition::test;
  } else {
    const auto& x = d.idx;
    train = load_idx(x.train_images, x.train_labels, Partition::train);
    test = load_idx(x.test_images, x.test_labels, Partition::test);
    test.num_classes = train.num_classes = std::max(train.num_classes, test.num_classes);
    if (x.pool_size >= train.size())
      throw ConfigError("dataset.idx.pool_size", "must be smaller than the training file (" +
                                                     std::to_string(train.size()) + " samples)");
    auto idx = shuffled_indices(train.size(), derive_seed(seed, "data/pool"));
    std::vector<std::size_t> pool_rows(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(x.pool_size));
    std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(x.pool_size), idx.end());
    std::sort(pool_rows.begin(), pool_rows.end());
    std::sort(rest.begin(), rest.end());
    pool = select(train, pool_rows, Partition::proxy_pool);
    train = select(train, rest, Partition::train);
    if (x.train_limit) train = subsample(train, x.train_limit, derive_seed(seed, "data/train-limit"));
    if (x.test_limit) test = subsample(test, x.test_limit, derive_seed(seed, "data/test-limit"));
  }
  pool.partition = Partition::proxy_pool;
  pool.name += "/pool";
  if (d.augment_shift) train = augment_shift(train, d.augment_shift, derive_seed(seed, "data/augment"));

  SplitSpec spec = cfg.split;
  spec.seed = derive_seed(seed, "split");
  PreparedData out{split(train, test, spec), std::move(pool)};
  if (d.balance) {
    auto& s = out.splits;
    s.train = balance_classes(s.train, derive_seed(seed, "balance/train"));
    s.validation = balance_classes(s.validation, derive_seed(seed, "balance/validation"));
    s.attack_reserve = balance_classes(s.attack_reserve, derive_seed(seed, "balance/attack_reserve"));
    s.test = balance_classes(s.test, derive_seed(seed, "balance/test"));
  }
  return out;
}

// ---------------------------------------------------------------- shared pieces

inline std::vector<AttackConfig> whitebox_attacks(const ExperimentConfig& c, const std::vector<AttackId>& ids) {
  std::vector<AttackConfig> out;
  for (AttackId id : ids) out.push_back(c.attack(id).whitebox);
  return out;
}

inline std::vector<AttackConfig> blackbox_attacks(const ExperimentConfig& c, const std::vector<AttackId>& ids) {
  std::vector<AttackConfig> out;
  for (AttackId id : ids) out.push_back(c.attack(id).blackbox);
  return out;
}

inline std::vector<AttackId> column_ids() { return {kAttackColumns.begin(), kAttackColumns.end()}; }

inline AdvTrainConfig adv_config(const ExperimentConfig& c, const std::string& stage) {
  TrainConfig t = c.cascade_training;
  t.seed = derive_seed(c.seed, stage);
  return {c.alpha, t};
}

inline CascadeConfig cascade_config(const ExperimentConfig& c, const std::vector<AttackConfig>& order,
                                    const std::string& stage) {
  return {order, c.current_fraction, adv_config(c, stage)};
}

inline TrainConfig proxy_train_config(const ExperimentConfig& c, const std::string& stage) {
  TrainConfig t = c.proxy_training;
  t.seed = derive_seed(c.seed, stage);
  return t;
}

inline ModelState train_undefended(const ExperimentConfig& c, const Dataset& train, TrainLog* log = nullptr) {
  const ArchitectureSpec spec = architecture_by_name(c.target_arch, train.sample_shape(), train.num_classes);
  TrainConfig t = c.training;
  t.seed = derive_seed(c.seed, "train/undefended");
  return train_plain(build(spec, derive_seed(c.seed, "init/target")), train, t, log);
}

inline nlohmann::json to_json_value(const CascadeLog& log) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : log.levels)
    levels.push_back({{"level", l.level}, {"attack", l.attack}, {"epoch_loss", l.epoch_loss},
                      {"attack_counts", l.attack_counts}});
  return {{"attacks", log.attack_names}, {"levels", levels}, {"cumulative_counts", log.cumulative_counts()},
          {"realized_ratio", log.realized_ratio()}};
}

inline std::string attack_label(const std::vector<AttackConfig>& order) {
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "," : "") + order[i].name();
  return s;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out, const std::string& id) {
  std::string file = id;
  for (char& ch : file)
    if (ch == '/' || ch == '\'' || ch == '(' || ch == ')' || ch == ',') ch = '_';
  return out / "checkpoints" / (file + ".amcm");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Stage bookkeeping: status per stage in run order, wall-clock kept apart so
/// the deterministic artifacts never contain timings.
class StageRunner {
 public:
  bool run(const std::string& name, const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json entry = {{"stage", name}, {"status", "ok"}};
    bool ok = true;
    try {
      fn();
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      ok = false;
      failed_ = true;
    }
    seconds_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stages_.push_back(std::move(entry));
    return ok;
  }
  void skip(const std::string& name, const std::string& reason) {
    stages_.push_back({{"stage", name}, {"status", "skipped"}, {"reason", reason}});
    failed_ = true;
  }
  bool failed() const { return failed_; }
  const nlohmann::json& stages() const { return stages_; }
  const std::map<std::string, double>& seconds() const { return seconds_; }

 private:
  nlohmann::json stages_ = nlohmann::json::array();
  std::map<std::string, double> seconds_;
  bool failed_ = false;
};

// ---------------------------------------------------------------- train

/// Saves each cascade level's final model as <prefix>-level<i>.amcm.
inline CascadeObserver level_saver(const std::filesystem::path& out, const std::string& prefix) {
  return {nullptr, [out, prefix](std::size_t level, const ModelState& m) {
            save(m, checkpoint_path(out, prefix + "-level" + std::to_string(level)));
          }};
}

struct TrainOutcome {
  ModelState model;
  std::filesystem::path checkpoint;
  nlohmann::json log;
};

/// Trains the undefended target and, unless defense == none, the defended
/// model for the configured mode. Writes checkpoints and log.json under out.
inline TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  validate(cfg);
  const PreparedData data = prepare_data(cfg);
  const Dataset& train = data.splits.train;
  nlohmann::json log = {{"config", to_json_value(cfg)}, {"train", describe(train)}};
  TrainLog tl;
  const ModelState undefended = train_undefended(cfg, train, &tl);
  save(undefended, checkpoint_path(out, "undefended"));
  log["undefended"] = {{"epoch_loss", tl.epoch_loss},
                       {"validation_accuracy", accuracy(undefended, data.splits.validation)},
                       {"test_error", clean_error(undefended, data.splits.test)}};

  ModelState model = undefended;
  if (cfg.defense == "adversarial-train") {
    LevelLog ll;
    model = adversarial_train(undefended, cfg.attack(cfg.adversarial_attack).whitebox, train,
                              adv_config(cfg, std::string("adv/") + attack_name(cfg.adversarial_attack)),
                              Crafter::self(), &ll);
    log["adversarial_train"] = {{"attack", ll.attack}, {"epoch_loss", ll.epoch_loss}};
  } else if (cfg.defense == "amc-target") {
    CascadeLog cl;
    model = amc_train(undefended, train, cascade_config(cfg, whitebox_attacks(cfg, cfg.cascade_order), "amc"),
                      Crafter::self(), &cl, level_saver(out, "amc-target"));
    log["cascade"] = to_json_value(cl);
  } else if (cfg.defense == "amc-proxy") {
    PredictionInterface iface(undefended, cfg.interface, cfg.noise);
    auto [proxy, qlog] = train_proxy(iface, data.pool, "P'", proxy_train_config(cfg, "proxy/P'"));
    save(proxy.model, checkpoint_path(out, "proxy-P'"));
    CascadeLog cl;
    ProxyHardeningLog pl;
    model = harden_via_proxy(undefended, proxy, cascade_config(cfg, blackbox_attacks(cfg, cfg.cascade_order), "amc-proxy"),
                             train, data.pool, cfg.interface, cfg.noise, proxy_train_config(cfg, "proxy/P'-levels"),
                             &cl, &pl, level_saver(out, "amc-proxy"));
    log["cascade"] = to_json_value(cl);
    log["queries"] = {{"initial_proxy", qlog.queries}, {"level_proxies", pl.queries},
                      {"proxy_trainings", pl.proxy_trainings}};
  }
  const std::filesystem::path ckpt = checkpoint_path(out, cfg.defense == "none" ? "undefended" : cfg.defense);
  if (cfg.defense != "none") save(model, ckpt);
  log["model"] = {{"defense", cfg.defense}, {"checkpoint", ckpt.filename().string()},
                  {"validation_accuracy", accuracy(model, data.splits.validation)},
                  {"test_error", clean_error(model, data.splits.test)}};
  write_json(out / "train_log.json", log);
  return {std::move(model), ckpt, std::move(log)};
}

// ---------------------------------------------------------------- attack

struct AttackOutcome {
  ErrorTable table;
  double clean_reserve_error = 0.0;
};

/// Crafts every configured white-box attack against the model on the attack
/// reserve; writes adversarial batches and attack_errors.csv.
inline AttackOutcome cmd_attack(const ExperimentConfig& cfg, const std::filesystem::path& model_path,
                                const std::filesystem::path& out) {
  validate(cfg);
  const ModelState model = load(model_path);
  const PreparedData data = prepare_data(cfg);
  const Dataset& reserve = data.splits.attack_reserve;
  if (model.spec.input_shape != reserve.sample_shape() || model.spec.num_classes != reserve.num_classes)
    throw Error("attack: model '" + model.spec.name + "' does not match the configured dataset");
  AttackOutcome res;
  res.table = ErrorTable{"attack", cfg.seed, {}, {}, {}, {}};
  const std::string id = model_path.stem().string();
  for (AttackId a : kAttackColumns) {
    const AttackConfig& attack = cfg.attack(a).whitebox;
    AdvBatch batch{attack, derive_seed(cfg.seed, std::string("attack/") + attack.name()), {}, reserve.labels, {}};
    batch.x_adv = craft_all(model, reserve, attack, batch.seed);
    const auto pred = predict_label(model, batch.x_adv);
    for (std::size_t i = 0; i < pred.size(); ++i) batch.success.push_back(pred[i] != reserve.labels[i]);
    save_adv_batch(batch, out / "adv" / (attack.name() + ".amcm"));
    res.table.set({id, "loaded"}, attack.name(), error_rate(pred, reserve.labels));
  }
  res.clean_reserve_error = error_rate(model, reserve.images, reserve.labels);
  const std::string csv = table_csv(res.table);
  write_file(out / "attack_errors.csv", std::vector<std::uint8_t>(csv.begin(), csv.end()));
  return res;
}

// ---------------------------------------------------------------- suite

struct SuiteOutcome {
  ExperimentReport report;
  bool ok = true;
  std::map<std::string, double> seconds;  // wall-clock per stage
};

inline const char* kStrongSuffix = "-x2";

/// Strengthened variants: doubled eps and nb_iter for PGM, doubled
/// binary_steps and max_iterations for EAP.
inline AttackConfig strengthened(const AttackConfig& a) {
  AttackConfig s = a;
  if (auto* p = std::get_if<PgmConfig>(&s.params)) {
    p->eps = std::min(1.0, 2.0 * p->eps);
    p->nb_iter *= 2;
    if (p->step_size) p->step_size = std::min(p->eps, 2.0 * *p->step_size);
  } else if (auto* e = std::get_if<EapConfig>(&s.params)) {
    e->binary_steps *= 2;
    e->max_iterations *= 2;
  }
  return s;
}

/// White-box, black-box (per interface), squeeze, leave-one-out, no-transfer
/// and reversed-order stages. A failing stage is recorded and the remaining
/// independent stages still run; the outcome is then marked failed.
inline SuiteOutcome cmd_suite(const ExperimentConfig& cfg, const std::filesystem::path& out, ReportFormat format) {
  validate(cfg);
  SuiteOutcome res;
  StageRunner stages;
  ExperimentReport& report = res.report;
  report.config = to_json_value(cfg);
  nlohmann::json& logs = report.logs;
  const std::uint64_t seed = cfg.seed;

  std::optional<PreparedData> data;
  std::optional<ModelState> undefended, amc;
  ErrorTable clean_table{"clean", seed, {}, {}, {}, {}};
  auto note_clean = [&](const std::string& id, const std::string& defense, const ModelState& m) {
    clean_table.set({id, defense}, "clean", clean_error(m, data->splits.test));
    save(m, checkpoint_path(out, id));
  };

  stages.run("data", [&] {
    data = prepare_data(cfg);
    const auto& s = data->splits;
    logs["data"] = {{"train", describe(s.train)}, {"validation", describe(s.validation)},
                    {"attack_reserve", describe(s.attack_reserve)}, {"test", describe(s.test)},
                    {"pool", describe(data->pool)}};
  });
  if (data)
    stages.run("undefended", [&] {
      TrainLog tl;
      undefended = train_undefended(cfg, data->splits.train, &tl);
      logs["undefended"] = {{"epoch_loss", tl.epoch_loss},
                            {"validation_accuracy", accuracy(*undefended, data->splits.validation)}};
      note_clean("undefended", "none", *undefended);
    });
  else
    stages.skip("undefended", "data stage failed");

  const std::vector<AttackId> columns = column_ids();
  auto need = [&](const std::string& name) {
    if (undefended) return true;
    stages.skip(name, "undefended model unavailable");
    return false;
  };

  if (need("amc-target"))
    stages.run("amc-target", [&] {
      CascadeLog cl;
      amc = amc_train(*undefended, data->splits.train,
                      cascade_config(cfg, whitebox_attacks(cfg, cfg.cascade_order), "amc"), Crafter::self(), &cl);
      logs["cascade"]["amc"] = to_json_value(cl);
      note_clean("amc", "amc-target", *amc);
    });

  if (cfg.suite.whitebox && need("whitebox"))
    stages.run("whitebox", [&] {
      std::vector<ModelState> hardened;
      for (AttackId a : columns) {
        const std::string stage = std::string("adv/") + attack_name(a);
        hardened.push_back(adversarial_train(*undefended, cfg.attack(a).whitebox, data->splits.train,
                                             adv_config(cfg, stage)));
        note_clean(std::string("adv-") + attack_name(a), "adversarial-train", hardened.back());
      }
      std::vector<SuiteModel> rows{{"undefended", "none", &*undefended}};
      for (std::size_t k = 0; k < columns.size(); ++k)
        rows.push_back({std::string("adv-") + attack_name(columns[k]), "adversarial-train", &hardened[k]});
      if (amc) rows.push_back({"amc", "amc-target", &*amc});
      report.tables.push_back(run_whitebox_suite(rows, whitebox_attacks(cfg, columns), data->splits.attack_reserve,
                                                 derive_seed(seed, "suite/whitebox"), std::nullopt, "whitebox"));
    });

  if (cfg.suite.blackbox) {
    for (InterfaceKind kind : cfg.suite.interfaces) {
      const std::string name = std::string("blackbox/") + interface_name(kind);
      if (!need(name)) continue;
      stages.run(name, [&] {
        const std::string ik = interface_name(kind);
        const Dataset& train = data->splits.train;
        nlohmann::json& qlog = logs["queries"][ik];
        PredictionInterface iface(*undefended, kind, cfg.noise);
        auto [p1, q1] = train_proxy(iface, data->pool, "P'", proxy_train_config(cfg, "proxy/P'/" + ik));
        qlog["P'"] = q1.queries;
        note_clean("proxy-P'/" + ik, "proxy", p1.model);

        std::vector<ModelState> targets;
        std::vector<BlackBoxTarget> rows{{"undefended", "none", &*undefended}};
        std::vector<std::string> ids;
        if (cfg.suite.blackbox_single_attack_rows && kind == InterfaceKind::label_only) {
          for (AttackId a : columns) {
            const std::string id = std::string("proxy-adv-") + attack_name(a);
            targets.push_back(harden_via_proxy(*undefended, p1, cfg.attack(a).blackbox, train,
                                               adv_config(cfg, "proxy-adv/" + ik + "/" + attack_name(a))));
            ids.push_back(id);
          }
        }
        CascadeLog cl;
        ProxyHardeningLog pl;
        targets.push_back(harden_via_proxy(*undefended, p1,
                                           cascade_config(cfg, blackbox_attacks(cfg, cfg.cascade_order),
                                                          "amc-proxy/" + ik),
                                           train, data->pool, kind, cfg.noise,
                                           proxy_train_config(cfg, "proxy/P'-levels/" + ik), &cl, &pl));
        ids.push_back("amc-proxy");
        logs["cascade"]["amc-proxy/" + ik] = to_json_value(cl);
        qlog["level_proxies"] = pl.queries;
        qlog["level_proxy_trainings"] = pl.proxy_trainings;
        for (std::size_t k = 0; k < targets.size(); ++k) {
          rows.push_back({ids[k], ids[k] == "amc-proxy" ? "amc-proxy" : "proxy-adversarial-train", &targets[k]});
          note_clean(ids[k] + "/" + ik, rows.back().defense, targets[k]);
        }

        BlackBoxAccounting acct;
        std::vector<ProxyState> evaluators;
        ErrorTable t = run_blackbox_suite(rows, data->pool, proxy_train_config(cfg, "proxy/P''/" + ik),
                                          blackbox_attacks(cfg, columns), data->splits.attack_reserve, kind, cfg.noise,
                                          derive_seed(seed, "suite/" + name), name, &acct, &evaluators);
        for (std::size_t k = 0; k < rows.size(); ++k)
          clean_table.set({"proxy-P''/" + ik + "/" + rows[k].id, "proxy"}, "clean",
                          clean_error(evaluators[k].model, data->splits.test));
        qlog["evaluation"] = acct.queries;
        qlog["evaluation_expected"] = acct.expected_queries;
        report.tables.push_back(std::move(t));
      });
    }
  }

  auto need_amc = [&](const std::string& name) {
    if (amc) return true;
    stages.skip(name, "amc-target model unavailable");
    return false;
  };

  if (cfg.suite.squeeze && need_amc("squeeze"))
    stages.run("squeeze", [&] {
      ErrorTable t{"squeeze", seed, {}, {}, {}, {}};
      t.metadata["squeeze_bits"] = cfg.squeeze_bits;
      const Dataset& reserve = data->splits.attack_reserve;
      for (AttackId a : {AttackId::pgm, AttackId::eap}) {
        for (bool strong : {false, true}) {
          const AttackConfig attack = strong ? strengthened(cfg.attack(a).whitebox) : cfg.attack(a).whitebox;
          const std::string col = attack.name() + (strong ? kStrongSuffix : "");
          const Tensor adv = craft_all(*amc, reserve, attack, derive_seed(seed, "suite/squeeze/" + col));
          t.set({"amc", "amc-target"}, col, error_rate(*amc, adv, reserve.labels));
          t.set({"amc+fs", "amc-target+squeeze"}, col, error_rate(*amc, adv, reserve.labels, cfg.squeeze_bits));
        }
      }
      report.tables.push_back(std::move(t));
    });

  for (AttackId holdout : cfg.suite.leave_one_out) {
    const std::string name = std::string("leave_one_out/") + attack_name(holdout);
    if (!need(name)) continue;
    stages.run(name, [&] {
      std::vector<AttackId> order;
      for (AttackId a : cfg.cascade_order)
        if (a != holdout) order.push_back(a);
      LeaveOneOutResult r =
          leave_one_out(*undefended, data->splits.train, data->splits.attack_reserve,
                        cascade_config(cfg, whitebox_attacks(cfg, order), "amc-loo/" + std::string(attack_name(holdout))),
                        cfg.attack(holdout).whitebox, cfg.squeeze_bits, derive_seed(seed, "suite/" + name));
      r.table.name = name;
      logs["cascade"]["loo/" + std::string(attack_name(holdout))] = to_json_value(r.log);
      note_clean("amc-loo-" + std::string(attack_name(holdout)), "amc-target", r.amc_model);
      report.tables.push_back(std::move(r.table));
    });
  }

  if ((cfg.suite.no_transfer || cfg.suite.reversed_order) && need_amc("ablations"))
    stages.run("ablations", [&] {
      std::vector<ModelState> models;
      std::vector<SuiteModel> rows{{"amc", "amc-target", &*amc}};
      const auto order = whitebox_attacks(cfg, cfg.cascade_order);
      if (cfg.suite.no_transfer) {
        CascadeLog cl;
        models.push_back(amc_train_no_transfer(*undefended, data->splits.train, cascade_config(cfg, order, "amc"),
                                               Crafter::self(), &cl));
        logs["cascade"]["no-transfer"] = to_json_value(cl);
      }
      if (cfg.suite.reversed_order) {
        CascadeLog cl;
        const std::vector<AttackConfig> rev(order.rbegin(), order.rend());
        models.push_back(amc_train(*undefended, data->splits.train, cascade_config(cfg, rev, "amc-reversed"),
                                   Crafter::self(), &cl));
        logs["cascade"]["reversed"] = to_json_value(cl);
      }
      std::size_t k = 0;
      if (cfg.suite.no_transfer) {
        rows.push_back({"amc-no-transfer", "amc-target", &models[k]});
        note_clean("amc-no-transfer", "amc-target", models[k++]);
      }
      if (cfg.suite.reversed_order) {
        const std::vector<AttackConfig> rev(order.rbegin(), order.rend());
        rows.push_back({"amc(" + attack_label(rev) + ")", "amc-target", &models[k]});
        note_clean("amc-reversed", "amc-target", models[k++]);
      }
      ErrorTable t = run_whitebox_suite(rows, whitebox_attacks(cfg, columns), data->splits.attack_reserve,
                                        derive_seed(seed, "suite/whitebox"), std::nullopt, "ablations");
      t.metadata["order"] = attack_label(order);
      report.tables.push_back(std::move(t));
    });

  report.tables.insert(report.tables.begin(), std::move(clean_table));
  // Tables report the master seed; the derived crafting seed goes to metadata.
  for (auto& t : report.tables) {
    if (t.seed != seed) t.metadata["crafting_seed"] = t.seed;
    t.seed = seed;
  }
  logs["stages"] = stages.stages();
  logs["partial"] = stages.failed();
  res.ok = !stages.failed();
  res.seconds = stages.seconds();

  emit_report(report, out / (std::string("report.") + (format == ReportFormat::markdown ? "md" : format == ReportFormat::csv ? "csv" : "json")), format);
  if (format != ReportFormat::json) emit_report(report, out / "report.json", ReportFormat::json);
  write_json(out / "log.json", logs);
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& [k, v] : res.seconds) timings[k] = v;
  write_json(out / "timings.json", timings);
  return res;
}

}  // namespace amc
