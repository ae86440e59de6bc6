#include "blipmsm/trial_data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "blipmsm/rng.hpp"

namespace blipmsm {

using nlohmann::json;

void trial_dataset::validate() const {
  const int rows = n();
  if (rows < 1) throw error(errc::empty_dataset, "dataset has no rows");
  if (baseline.rows() != rows || y1.size() != rows || a2.size() != rows || y2.size() != rows ||
      w1.rows() != rows) {
    throw error(errc::dimension_mismatch, "column lengths differ");
  }
  if (baseline_names.size() != static_cast<std::size_t>(baseline.cols()) ||
      w1_names.size() != static_cast<std::size_t>(w1.cols())) {
    throw error(errc::dimension_mismatch, "column names do not match widths");
  }
  if (!baseline.allFinite() || !w1.allFinite()) {
    throw error(errc::non_binary_value, "non-finite covariate values");
  }
  for (int i = 0; i < rows; ++i) {
    if (a1[i] != 0 && a1[i] != 1) throw error(errc::non_binary_value, "a1 outside {0,1}");
    if (y1[i] != 0 && y1[i] != 1) throw error(errc::non_binary_value, "y1 outside {0,1}");
    if (y2[i] != 0 && y2[i] != 1) throw error(errc::non_binary_value, "y2 outside {0,1}");
    if (a2[i] != 0 && a2[i] != 1 && a2[i] != a2_missing) {
      throw error(errc::non_binary_value, "a2 outside {0,1,missing}");
    }
  }
  if (!source_rows.empty() && source_rows.size() != static_cast<std::size_t>(rows)) {
    throw error(errc::dimension_mismatch, "source row metadata does not match rows");
  }
}

void analysis_config::validate() const {
  if (!(q_bound > 0.0 && q_bound < 0.5)) {
    throw error(errc::invalid_config, "q_bound must lie in (0, 0.5)");
  }
  if (folds < 2) throw error(errc::invalid_config, "folds must be at least 2");
  if (known_g1 && !(*known_g1 > 0.0 && *known_g1 < 1.0)) {
    throw error(errc::invalid_config, "known_g1 must lie in (0,1)");
  }
  if (known_g2) {
    for (const auto& [cell, p] : *known_g2) {
      if (!(p > 0.0 && p < 1.0)) {
        throw error(errc::invalid_config, "known_g2 probabilities must lie in (0,1)");
      }
      if ((cell.first != 0 && cell.first != 1) || (cell.second != 0 && cell.second != 1)) {
        throw error(errc::invalid_config, "known_g2 keys must be binary (a1,y1) cells");
      }
    }
  }
}

void analysis_config::normalize() {
  if (blip_library.empty()) {
    blip_library.push_back({.kind = learner_kind::logistic_interact_all});
  }
  if (q2_library.empty()) {
    q2_library.push_back({.kind = learner_kind::logistic_main});
  }
  validate();
}

namespace {

learner_spec learner_from_json(const json& j) {
  learner_spec s;
  const std::string kind = j.at("learner").get<std::string>();
  if (kind == "mean") s.kind = learner_kind::mean;
  else if (kind == "logistic_main") s.kind = learner_kind::logistic_main;
  else if (kind == "logistic_interact") s.kind = learner_kind::logistic_interact;
  else if (kind == "logistic_interact_all") s.kind = learner_kind::logistic_interact_all;
  else if (kind == "logistic_saturated") s.kind = learner_kind::logistic_saturated;
  else if (kind == "ridge_logistic") s.kind = learner_kind::ridge_logistic;
  else if (kind == "hinge_spline") s.kind = learner_kind::hinge_spline;
  else if (kind == "bagged_trees") s.kind = learner_kind::bagged_trees;
  else throw error(errc::invalid_config, "unknown learner kind: " + kind);

  if (j.contains("covariate")) s.covariate = j.at("covariate").get<int>();
  if (j.contains("lambda_grid")) s.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  if (j.contains("max_terms")) s.max_terms = j.at("max_terms").get<int>();
  if (j.contains("n_trees")) s.n_trees = j.at("n_trees").get<int>();
  if (j.contains("max_depth")) s.max_depth = j.at("max_depth").get<int>();
  if (j.contains("min_leaf")) s.min_leaf = j.at("min_leaf").get<int>();
  if (j.contains("mtry")) s.mtry = j.at("mtry").get<int>();
  return s;
}

analysis_config config_from_json(const json& j, const std::string& env_prefix) {
  analysis_config cfg;

  if (j.contains("roles")) {
    const auto& r = j.at("roles");
    cfg.roles.a1 = r.value("a1", "a1");
    cfg.roles.y1 = r.value("y1", "y1");
    cfg.roles.a2 = r.value("a2", "a2");
    cfg.roles.y2 = r.value("y2", "y2");
    if (r.contains("baseline")) cfg.roles.baseline = r.at("baseline").get<std::vector<std::string>>();
    if (r.contains("w1")) cfg.roles.w1 = r.at("w1").get<std::vector<std::string>>();
  }

  if (j.contains("known_g")) {
    const auto& g = j.at("known_g");
    if (g.contains("g1")) cfg.known_g1 = g.at("g1").get<double>();
    if (g.contains("g2")) {
      std::map<std::pair<int, int>, double> table;
      for (const auto& [key, val] : g.at("g2").items()) {
        // keys are "a1,y1" pairs
        const auto comma = key.find(',');
        if (comma == std::string::npos) {
          throw error(errc::invalid_config, "known_g.g2 keys must look like \"a1,y1\"");
        }
        table[{std::stoi(key.substr(0, comma)), std::stoi(key.substr(comma + 1))}] =
            val.get<double>();
      }
      cfg.known_g2 = std::move(table);
    }
  }

  if (j.contains("h_weight_mode")) {
    const std::string m = j.at("h_weight_mode").get<std::string>();
    if (m == "unit") cfg.h_weight_mode = h_mode::unit;
    else if (m == "treatment_prevalence") cfg.h_weight_mode = h_mode::treatment_prevalence;
    else throw error(errc::invalid_config, "h_weight_mode must be unit|treatment_prevalence");
  }
  if (j.contains("second_stage_scope")) {
    const std::string s = j.at("second_stage_scope").get<std::string>();
    if (s == "all") cfg.scope = stage2_scope::all;
    else if (s == "initiators") cfg.scope = stage2_scope::initiators;
    else throw error(errc::invalid_config, "second_stage_scope must be all|initiators");
  }
  cfg.q_bound = j.value("q_bound", cfg.q_bound);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.folds = j.value("folds", cfg.folds);
  if (j.contains("g2_covariates")) {
    cfg.g2_covariates = j.at("g2_covariates").get<std::vector<std::string>>();
  }
  if (j.contains("q2_covariates")) {
    cfg.q2_covariates = j.at("q2_covariates").get<std::vector<std::string>>();
  }
  if (j.contains("adjust_covariates")) {
    cfg.adjust_covariates = j.at("adjust_covariates").get<std::vector<std::string>>();
  }
  if (j.contains("blip_library")) {
    for (const auto& item : j.at("blip_library")) cfg.blip_library.push_back(learner_from_json(item));
  }
  if (j.contains("q2_library")) {
    for (const auto& item : j.at("q2_library")) cfg.q2_library.push_back(learner_from_json(item));
  }

  if (!env_prefix.empty()) {
    auto env = [&](const char* key) -> const char* {
      return std::getenv((env_prefix + key).c_str());
    };
    if (const char* v = env("SEED")) cfg.seed = std::strtoull(v, nullptr, 10);
    if (const char* v = env("FOLDS")) cfg.folds = std::atoi(v);
    if (const char* v = env("Q_BOUND")) cfg.q_bound = std::atof(v);
    if (const char* v = env("H_WEIGHT_MODE")) {
      cfg.h_weight_mode =
          std::string(v) == "treatment_prevalence" ? h_mode::treatment_prevalence : h_mode::unit;
    }
    if (const char* v = env("SECOND_STAGE_SCOPE")) {
      cfg.scope = std::string(v) == "all" ? stage2_scope::all : stage2_scope::initiators;
    }
  }

  cfg.normalize();
  return cfg;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

int parse_binary(const std::string& token, const std::string& col) {
  if (token == "0") return 0;
  if (token == "1") return 1;
  throw error(errc::non_binary_value, "column " + col + " has non-binary token '" + token + "'");
}

double parse_real(const std::string& token, const std::string& col) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &pos);
  } catch (const std::exception&) {
    throw error(errc::non_binary_value, "column " + col + " has non-numeric token '" + token + "'");
  }
  if (pos != token.size()) {
    throw error(errc::non_binary_value, "column " + col + " has non-numeric token '" + token + "'");
  }
  return v;
}

}  // namespace

analysis_config config_from_json_text(const std::string& text, const std::string& env_prefix) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw error(errc::invalid_config, std::string("config parse failure: ") + e.what());
  }
  return config_from_json(j, env_prefix);
}

analysis_config load_config(const std::string& path, const std::string& env_prefix) {
  std::ifstream in(path);
  if (!in) throw error(errc::io_error, "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str(), env_prefix);
}

trial_dataset load_csv(const std::string& path, const analysis_config& config) {
  std::ifstream in(path);
  if (!in) throw error(errc::io_error, "cannot open data file " + path);

  std::string header;
  if (!std::getline(in, header)) throw error(errc::empty_dataset, "data file is empty");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const std::vector<std::string> cols = split_csv_line(header);

  auto col_index = [&](const std::string& name, bool required) -> int {
    auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) {
      if (required) throw error(errc::missing_column, "column '" + name + "' not found");
      return -1;
    }
    return static_cast<int>(it - cols.begin());
  };

  const role_map& roles = config.roles;
  if (roles.a1.empty() || roles.y1.empty() || roles.y2.empty()) {
    throw error(errc::invalid_config, "role_map must name a1, y1 and y2 columns");
  }
  const int ia1 = col_index(roles.a1, true);
  const int iy1 = col_index(roles.y1, true);
  const int iy2 = col_index(roles.y2, true);
  const int ia2 = roles.a2.empty() ? -1 : col_index(roles.a2, true);
  std::vector<int> ibase, iw1;
  for (const auto& b : roles.baseline) ibase.push_back(col_index(b, true));
  for (const auto& w : roles.w1) iw1.push_back(col_index(w, true));

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != cols.size()) {
      throw error(errc::io_error, "row " + std::to_string(rows.size() + 2) +
                                      " has " + std::to_string(fields.size()) + " fields, expected " +
                                      std::to_string(cols.size()));
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw error(errc::empty_dataset, "data file has a header but no rows");

  const int n = static_cast<int>(rows.size());
  trial_dataset data;
  data.baseline.resize(n, static_cast<Eigen::Index>(ibase.size()));
  data.w1.resize(n, static_cast<Eigen::Index>(iw1.size()));
  data.a1.resize(n);
  data.y1.resize(n);
  data.a2.resize(n);
  data.y2.resize(n);
  data.baseline_names = roles.baseline;
  data.w1_names = roles.w1;
  data.source_rows.resize(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    data.a1[i] = parse_binary(r[static_cast<std::size_t>(ia1)], roles.a1);
    data.y1[i] = parse_binary(r[static_cast<std::size_t>(iy1)], roles.y1);
    data.y2[i] = parse_binary(r[static_cast<std::size_t>(iy2)], roles.y2);
    if (ia2 < 0) {
      data.a2[i] = trial_dataset::a2_missing;
    } else {
      const std::string& tok = r[static_cast<std::size_t>(ia2)];
      data.a2[i] = (tok.empty() || tok == "NA") ? trial_dataset::a2_missing
                                                : parse_binary(tok, roles.a2);
    }
    for (std::size_t b = 0; b < ibase.size(); ++b) {
      data.baseline(i, static_cast<Eigen::Index>(b)) =
          parse_real(r[static_cast<std::size_t>(ibase[b])], roles.baseline[b]);
    }
    for (std::size_t q = 0; q < iw1.size(); ++q) {
      data.w1(i, static_cast<Eigen::Index>(q)) =
          parse_real(r[static_cast<std::size_t>(iw1[q])], roles.w1[q]);
    }
    data.source_rows[static_cast<std::size_t>(i)] = i;
  }

  data.validate();
  return data;
}

void write_csv(const std::string& path, const trial_dataset& data, const role_map& roles) {
  std::ofstream out(path);
  if (!out) throw error(errc::io_error, "cannot open " + path + " for writing");

  out.precision(17);
  for (std::size_t b = 0; b < roles.baseline.size(); ++b) out << roles.baseline[b] << ",";
  out << roles.a1 << "," << roles.y1;
  for (std::size_t q = 0; q < roles.w1.size(); ++q) out << "," << roles.w1[q];
  out << "," << (roles.a2.empty() ? "a2" : roles.a2) << "," << roles.y2 << "\n";

  for (int i = 0; i < data.n(); ++i) {
    for (Eigen::Index b = 0; b < data.baseline.cols(); ++b) out << data.baseline(i, b) << ",";
    out << data.a1[i] << "," << data.y1[i];
    for (Eigen::Index q = 0; q < data.w1.cols(); ++q) out << "," << data.w1(i, q);
    if (data.a2[i] == trial_dataset::a2_missing) out << ",NA";
    else out << "," << data.a2[i];
    out << "," << data.y2[i] << "\n";
  }
}

trial_dataset subset_initiators(const trial_dataset& data) {
  data.validate();
  std::vector<int> keep;
  for (int i = 0; i < data.n(); ++i) {
    if (data.a1[i] == 1) keep.push_back(i);
  }
  if (keep.empty()) throw error(errc::empty_subset, "no subject has a1 = 1");

  const int m = static_cast<int>(keep.size());
  trial_dataset out;
  out.baseline.resize(m, data.baseline.cols());
  out.w1.resize(m, data.w1.cols());
  out.a1.resize(m);
  out.y1.resize(m);
  out.a2.resize(m);
  out.y2.resize(m);
  out.baseline_names = data.baseline_names;
  out.w1_names = data.w1_names;
  out.source_rows.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    const int i = keep[static_cast<std::size_t>(j)];
    out.baseline.row(j) = data.baseline.row(i);
    out.w1.row(j) = data.w1.row(i);
    out.a1[j] = data.a1[i];
    out.y1[j] = data.y1[i];
    out.a2[j] = data.a2[i];
    out.y2[j] = data.y2[i];
    out.source_rows[static_cast<std::size_t>(j)] =
        data.source_rows.empty() ? i : data.source_rows[static_cast<std::size_t>(i)];
  }
  return out;
}

std::vector<int> make_folds(int n, int k, std::uint64_t seed) {
  if (k < 2 || n < k) throw error(errc::invalid_fold_count, "need k >= 2 and n >= k");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng = make_rng(seed, 0, stream::folds);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> folds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) folds[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = i % k;
  return folds;
}

}  // namespace blipmsm
