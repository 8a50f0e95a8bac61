#pragma once

// Error-rate measurement, the white-box / black-box / leave-one-out suites and
// report emission.
//
// Convention: adversarial error rates are computed over every attack-reserve
// sample, including those the model already misclassifies when clean.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "amc/attacks.hpp"
#include "amc/blackbox.hpp"
#include "amc/data.hpp"
#include "amc/defenses.hpp"
#include "json.hpp"

namespace amc {

inline constexpr const char* kErrorConvention =
    "error = fraction of all attack-reserve samples mislabeled after the attack (clean mistakes included)";
inline constexpr int kReportSchemaVersion = 1;

struct RowKey {
  std::string model;
  std::string defense;
  friend bool operator==(const RowKey&, const RowKey&) = default;
};

/// Error rates keyed by (model, defense) rows and attack columns. Cells are
/// nullopt when explicitly absent.
struct ErrorTable {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<RowKey> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> cells;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t row_index(const RowKey& key) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i] == key) return i;
    rows.push_back(key);
    cells.emplace_back(columns.size());
    return rows.size() - 1;
  }
  std::size_t column_index(const std::string& col) {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == col) return i;
    columns.push_back(col);
    for (auto& r : cells) r.emplace_back();
    return columns.size() - 1;
  }
  void set(const RowKey& key, const std::string& column, double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw Error("error table: cell value outside [0,1]");
    const std::size_t c = column_index(column);
    cells[row_index(key)][c] = value;
  }
  std::optional<double> get(const std::string& model, const std::string& column) const {
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (rows[r].model == model)
        for (std::size_t c = 0; c < columns.size(); ++c)
          if (columns[c] == column) return cells[r][c];
    return std::nullopt;
  }
  /// Unweighted mean / max over the present cells of a row.
  double row_mean(const std::string& model) const { return row_stat(model, false); }
  double row_max(const std::string& model) const { return row_stat(model, true); }

 private:
  double row_stat(const std::string& model, bool take_max) const {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].model != model) continue;
      double acc = 0.0;
      std::size_t n = 0;
      for (const auto& v : cells[r])
        if (v) {
          acc = take_max ? std::max(acc, *v) : acc + *v;
          ++n;
        }
      if (n == 0) throw Error("error table '" + name + "': row '" + model + "' has no cells");
      return take_max ? acc : acc / static_cast<double>(n);
    }
    throw Error("error table '" + name + "': no row '" + model + "'");
  }
};

inline double error_rate(std::span<const std::size_t> predicted, std::span<const std::size_t> y) {
  if (y.empty()) throw Error("error_rate: empty batch");
  if (predicted.size() != y.size()) throw Error("error_rate: prediction/label count mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < y.size(); ++i) wrong += predicted[i] != y[i];
  return static_cast<double>(wrong) / static_cast<double>(y.size());
}

inline double error_rate(const ModelState& model, const Tensor& x_adv, std::span<const std::size_t> y,
                         std::optional<int> squeeze_bits = std::nullopt) {
  if (y.empty() || x_adv.rank() == 0 || x_adv.dim(0) == 0) throw Error("error_rate: empty batch");
  return error_rate(defended_predict(model, x_adv, squeeze_bits), y);
}

inline void require_partition(const Dataset& ds, Partition want, const char* who) {
  if (ds.partition != want)
    throw Error(std::string(who) + ": expected the " + partition_name(want) + " split, got " +
                partition_name(ds.partition));
}

/// Clean error on the final test split.
inline double clean_error(const ModelState& model, const Dataset& test, std::optional<int> squeeze = std::nullopt) {
  require_partition(test, Partition::final_test, "clean_error");
  return error_rate(model, test.images, test.labels, squeeze);
}

/// Crafts over a whole dataset in fixed-size chunks (seed derived per chunk).
inline Tensor craft_all(const ModelState& model, const Dataset& ds, const AttackConfig& attack, std::uint64_t seed,
                        std::size_t chunk = 256) {
  Tensor out;
  for (std::size_t begin = 0, k = 0; begin < ds.size(); begin += chunk, ++k) {
    const std::size_t end = std::min(ds.size(), begin + chunk);
    const std::span<const std::size_t> ys(ds.labels.data() + begin, end - begin);
    const AdvBatch b = craft(model, slice_rows(ds.images, begin, end), ys, attack, derive_seed(seed, k));
    out = concat_rows(out, b.x_adv);
  }
  return out;
}

struct SuiteModel {
  std::string id;
  std::string defense;
  const ModelState* model = nullptr;
};

/// Every (model, attack) cell: craft on that model itself, score it on the
/// attack reserve. With squeeze set the model predicts on quantized inputs.
inline ErrorTable run_whitebox_suite(const std::vector<SuiteModel>& models, const std::vector<AttackConfig>& attacks,
                                     const Dataset& attack_reserve, std::uint64_t seed,
                                     std::optional<int> squeeze = std::nullopt, const std::string& name = "whitebox") {
  require_partition(attack_reserve, Partition::attack_reserve, "run_whitebox_suite");
  ErrorTable t{name, seed, {}, {}, {}, {}};
  for (const auto& a : attacks) t.column_index(a.name());
  for (const auto& m : models) {
    if (m.model->spec.input_shape != attack_reserve.sample_shape())
      throw Error("run_whitebox_suite: model '" + m.id + "' input shape differs from the data");
    for (const auto& a : attacks) {
      const Tensor adv = craft_all(*m.model, attack_reserve, a, derive_seed(seed, m.id + "/" + a.name()));
      t.set({m.id, m.defense}, a.name(), error_rate(*m.model, adv, attack_reserve.labels, squeeze));
    }
  }
  if (squeeze) t.metadata["squeeze_bits"] = *squeeze;
  return t;
}

struct BlackBoxTarget {
  std::string id;
  std::string defense;
  const ModelState* model = nullptr;
};

struct BlackBoxAccounting {
  std::uint64_t queries = 0;           // counted interface evaluations
  std::uint64_t expected_queries = 0;  // pool labeling + scoring, by construction
};

/// Transfer evaluation with given proxies (one per target): craft on the
/// proxy, score the target through its label interface.
inline ErrorTable run_blackbox_suite(const std::vector<BlackBoxTarget>& targets,
                                     const std::vector<const ProxyState*>& proxies,
                                     const std::vector<AttackConfig>& attacks, const Dataset& attack_reserve,
                                     std::uint64_t seed, const std::string& name = "blackbox",
                                     BlackBoxAccounting* acct = nullptr) {
  require_partition(attack_reserve, Partition::attack_reserve, "run_blackbox_suite");
  if (proxies.size() != targets.size()) throw Error("run_blackbox_suite: need one proxy per target");
  ErrorTable t{name, seed, {}, {}, {}, {}};
  for (const auto& a : attacks) t.column_index(a.name());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    PredictionInterface iface(*targets[i].model, InterfaceKind::label_only);
    for (const auto& a : attacks) {
      const Tensor adv = craft_all(proxies[i]->model, attack_reserve, a, derive_seed(seed, targets[i].id + "/" + a.name()));
      t.set({targets[i].id, targets[i].defense}, a.name(), error_rate(iface.query_label(adv), attack_reserve.labels));
    }
    if (acct) {
      acct->queries += iface.queries();
      acct->expected_queries += attacks.size() * attack_reserve.size();
    }
  }
  return t;
}

/// Trains an evaluation proxy P'' against each target's interface of the
/// given kind, then runs the transfer evaluation.
inline ErrorTable run_blackbox_suite(const std::vector<BlackBoxTarget>& targets, const Dataset& pool,
                                     const TrainConfig& proxy_cfg, const std::vector<AttackConfig>& attacks,
                                     const Dataset& attack_reserve, InterfaceKind kind, double noise_p,
                                     std::uint64_t seed, const std::string& name = "blackbox",
                                     BlackBoxAccounting* acct = nullptr, std::vector<ProxyState>* trained = nullptr) {
  std::vector<ProxyState> proxies;
  for (const auto& target : targets) {
    PredictionInterface iface(*target.model, kind, noise_p);
    ProxyState proxy = train_proxy(iface, pool, "P''", proxy_cfg).first;
    if (acct) acct->queries += iface.queries();
    proxies.push_back(std::move(proxy));
  }
  if (acct) acct->expected_queries += targets.size() * pool.size();
  std::vector<const ProxyState*> ptrs;
  for (const auto& p : proxies) ptrs.push_back(&p);
  ErrorTable t = run_blackbox_suite(targets, ptrs, attacks, attack_reserve, seed, name, acct);
  t.metadata["interface"] = interface_name(kind);
  if (trained) *trained = std::move(proxies);
  return t;
}

struct LeaveOneOutResult {
  ErrorTable table;
  ModelState amc_model;
  CascadeLog log;
};

/// Trains a cascade on every attack but the holdout and scores the undefended
/// model and the cascade (plain and squeezed) on the holdout attack.
inline LeaveOneOutResult leave_one_out(const ModelState& undefended, const Dataset& train,
                                       const Dataset& attack_reserve, const CascadeConfig& cascade,
                                       const AttackConfig& holdout, int squeeze_bits, std::uint64_t seed) {
  if (cascade.attack_order.empty()) throw Error("leave_one_out: no attacks left to train on");
  for (const auto& a : cascade.attack_order)
    if (a.id() == holdout.id())
      throw Error("leave_one_out: holdout attack '" + holdout.name() + "' is in the training order");
  LeaveOneOutResult res{{}, {}, {}};
  res.amc_model = amc_train(undefended, train, cascade, Crafter::self(), &res.log);
  std::string tag = "amc(";
  for (std::size_t i = 0; i < cascade.attack_order.size(); ++i) tag += (i ? "," : "") + cascade.attack_order[i].name();
  tag += ")";
  res.table = run_whitebox_suite({{"undefended", "none", &undefended}, {tag, "amc-target", &res.amc_model}}, {holdout},
                                 attack_reserve, seed, std::nullopt, "leave_one_out");
  // same crafting seed: the squeezed row differs only by the preprocessing
  const Tensor adv = craft_all(res.amc_model, attack_reserve, holdout, derive_seed(seed, tag + "/" + holdout.name()));
  res.table.set({tag + "+fs", "amc-target+squeeze"}, holdout.name(),
                error_rate(res.amc_model, adv, attack_reserve.labels, squeeze_bits));
  res.table.metadata["holdout"] = holdout.name();
  return res;
}

// ---------------------------------------------------------------- reports

struct ExperimentReport {
  nlohmann::json config = nlohmann::json::object();
  std::vector<ErrorTable> tables;
  nlohmann::json logs = nlohmann::json::object();

  const ErrorTable& table(const std::string& name) const {
    for (const auto& t : tables)
      if (t.name == name) return t;
    throw Error("report has no table '" + name + "'");
  }
};

enum class ReportFormat { csv, markdown, json };

inline ReportFormat report_format_from_name(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "json") return ReportFormat::json;
  throw Error("unknown report format '" + s + "' (expected csv, markdown or json)");
}

inline std::string format_rate(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kCsvHeader = "model,defense,attack,error_rate,seed";

/// Long-format CSV, one line per cell. With `qualify` the model column is
/// prefixed by the table name ("table/model").
inline void append_csv(std::ostringstream& os, const ErrorTable& t, bool qualify) {
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      os << (qualify ? t.name + "/" : "") << t.rows[r].model << ',' << t.rows[r].defense << ',' << t.columns[c] << ','
         << (t.cells[r][c] ? format_rate(*t.cells[r][c]) : "NA") << ',' << t.seed << '\n';
    }
}

inline std::string table_csv(const ErrorTable& t) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  append_csv(os, t, false);
  return os.str();
}

inline nlohmann::json to_json_value(const ErrorTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      cells[t.columns[c]] = t.cells[r][c] ? nlohmann::json(*t.cells[r][c]) : nlohmann::json(nullptr);
    rows.push_back({{"model", t.rows[r].model}, {"defense", t.rows[r].defense}, {"cells", cells}});
  }
  return {{"name", t.name}, {"seed", t.seed}, {"columns", t.columns}, {"rows", rows}, {"metadata", t.metadata}};
}

inline std::string render_report(const ExperimentReport& report, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::csv:
      os << kCsvHeader << '\n';
      for (const auto& t : report.tables) append_csv(os, t, true);
      break;
    case ReportFormat::markdown:
      os << "# Robustness report\n\n" << kErrorConvention << ".\n";
      for (const auto& t : report.tables) {
        os << "\n## " << t.name << " (seed " << t.seed << ")\n\n| model | defense |";
        for (const auto& c : t.columns) os << ' ' << c << " |";
        os << "\n|---|---|";
        for (std::size_t c = 0; c < t.columns.size(); ++c) os << "---|";
        os << '\n';
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          os << "| " << t.rows[r].model << " | " << t.rows[r].defense << " |";
          for (const auto& v : t.cells[r]) {
            if (v) {
              char buf[16];
              std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
              os << ' ' << buf << " |";
            } else {
              os << " - |";
            }
          }
          os << '\n';
        }
      }
      break;
    case ReportFormat::json: {
      nlohmann::json j = {{"schema_version", kReportSchemaVersion},
                          {"convention", kErrorConvention},
                          {"config", report.config},
                          {"logs", report.logs}};
      j["tables"] = nlohmann::json::array();
      for (const auto& t : report.tables) j["tables"].push_back(to_json_value(t));
      os << j.dump(2) << '\n';
      break;
    }
  }
  return os.str();
}

inline void emit_report(const ExperimentReport& report, const std::filesystem::path& path, ReportFormat format) {
  const std::string text = render_report(report, format);
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline void emit_report(const ExperimentReport& report, const std::filesystem::path& path, const std::string& format) {
  emit_report(report, path, report_format_from_name(format));
}

}  // namespace amc
