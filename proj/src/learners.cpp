#include "blipmsm/learners.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "blipmsm/logistic.hpp"
#include "blipmsm/rng.hpp"
#include "blipmsm/stats.hpp"
#include "blipmsm/trial_data.hpp"

namespace blipmsm {

std::string learner_spec::name() const {
  switch (kind) {
    case learner_kind::mean: return "mean";
    case learner_kind::logistic_main: return "logistic_main";
    case learner_kind::logistic_interact: return "logistic_interact_" + std::to_string(covariate);
    case learner_kind::logistic_interact_all: return "logistic_interact_all";
    case learner_kind::logistic_saturated: return "logistic_saturated";
    case learner_kind::ridge_logistic: return "ridge_logistic";
    case learner_kind::hinge_spline: return "hinge_spline";
    case learner_kind::bagged_trees: return "bagged_trees";
  }
  return "unknown";
}

void learner_task::validate() const {
  if (features.rows() == 0) throw error(errc::empty_dataset, "learner task has no rows");
  if (names.size() != static_cast<std::size_t>(features.cols())) {
    throw error(errc::dimension_mismatch, "feature names do not match column count");
  }
  if (treatment_col < 0 || treatment_col >= features.cols()) {
    throw error(errc::invalid_config, "treatment column index out of range");
  }
  if (!features.allFinite()) {
    throw error(errc::invalid_config, "learner features contain non-finite values");
  }
}

namespace {

double clipq(double p, double qb) { return stats::clip(p, qb, 1.0 - qb); }

int distinct_count(const Eigen::VectorXd& col, int cap) {
  std::set<double> vals;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    vals.insert(col[i]);
    if (static_cast<int>(vals.size()) > cap) return cap + 1;
  }
  return static_cast<int>(vals.size());
}

// ------------------------------ basis terms --------------------------------

// A term is a product of factors; a factor is either a raw column or a hinge
// max(+-(x - knot), 0). The empty term is the intercept.
struct basis_factor {
  int col = 0;
  int hinge = 0;  // 0 raw, +1 max(x-knot,0), -1 max(knot-x,0)
  double knot = 0.0;
};

struct basis_term {
  std::vector<basis_factor> factors;
  std::string label;
};

double eval_term(const basis_term& t, const Eigen::MatrixXd& X, Eigen::Index row) {
  double v = 1.0;
  for (const auto& f : t.factors) {
    double x = X(row, f.col);
    if (f.hinge > 0) x = std::max(x - f.knot, 0.0);
    if (f.hinge < 0) x = std::max(f.knot - x, 0.0);
    v *= x;
  }
  return v;
}

design_matrix build_basis(const std::vector<basis_term>& terms, const Eigen::MatrixXd& X) {
  design_matrix d;
  d.values.resize(X.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      d.values(i, static_cast<Eigen::Index>(j)) = eval_term(terms[j], X, i);
    }
    d.labels.push_back(terms[j].label);
  }
  return d;
}

std::vector<basis_term> terms_main(const learner_task& task) {
  std::vector<basis_term> terms{{{}, "(intercept)"}};
  terms.push_back({{{task.treatment_col, 0, 0.0}}, task.names[task.treatment_col]});
  for (int j = 0; j < task.cols(); ++j) {
    if (j == task.treatment_col) continue;
    terms.push_back({{{j, 0, 0.0}}, task.names[j]});
  }
  return terms;
}

std::vector<basis_term> terms_interact_all(const learner_task& task) {
  auto terms = terms_main(task);
  const int a = task.treatment_col;
  for (int j = 0; j < task.cols(); ++j) {
    if (j == a) continue;
    terms.push_back({{{a, 0, 0.0}, {j, 0, 0.0}},
                     task.names[a] + ":" + task.names[j]});
  }
  return terms;
}

std::vector<basis_term> terms_interact_one(const learner_task& task, int covariate) {
  const int a = task.treatment_col;
  int j = -1, seen = 0;
  for (int c = 0; c < task.cols(); ++c) {
    if (c == a) continue;
    if (seen++ == covariate) { j = c; break; }
  }
  if (j < 0) throw error(errc::invalid_config, "logistic_interact covariate index out of range");
  return {{{}, "(intercept)"},
          {{{a, 0, 0.0}}, task.names[a]},
          {{{j, 0, 0.0}}, task.names[j]},
          {{{a, 0, 0.0}, {j, 0, 0.0}}, task.names[a] + ":" + task.names[j]}};
}

// ------------------------------ candidates ---------------------------------

class mean_candidate final : public candidate_model {
 public:
  mean_candidate(double value, double qb) : value_(clipq(value, qb)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    return Eigen::VectorXd::Constant(X.rows(), value_);
  }

 private:
  double value_;
};

class glm_candidate final : public candidate_model {
 public:
  glm_candidate(std::vector<basis_term> terms, logistic_fit fit, double qb)
      : terms_(std::move(terms)), fit_(std::move(fit)), qb_(qb) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    design_matrix d = build_basis(terms_, X);
    Eigen::VectorXd p = predict_proba(fit_, d);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = clipq(p[i], qb_);
    return p;
  }

  const logistic_fit& fit() const { return fit_; }

 private:
  std::vector<basis_term> terms_;
  logistic_fit fit_;
  double qb_;
};

// Saturated model over discrete (A, L) cells, fitted as weighted cell means —
// the exact MLE of the saturated logistic without separation issues.
class cellmean_candidate final : public candidate_model {
 public:
  cellmean_candidate(const learner_task& task, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w, double qb)
      : qb_(qb) {
    for (int j = 0; j < task.cols(); ++j) {
      if (distinct_count(task.features.col(j), 12) > 12) {
        throw error(errc::invalid_config,
                    "logistic_saturated requires discrete features (column " +
                        task.names[j] + " has too many levels)");
      }
    }
    std::map<std::vector<double>, std::pair<double, double>> acc;  // key -> (sum w*y, sum w)
    double tot_wy = 0.0, tot_w = 0.0;
    for (Eigen::Index i = 0; i < task.rows(); ++i) {
      std::vector<double> key(task.cols());
      for (int j = 0; j < task.cols(); ++j) key[static_cast<std::size_t>(j)] = task.features(i, j);
      auto& cell = acc[key];
      cell.first += w[i] * y[i];
      cell.second += w[i];
      tot_wy += w[i] * y[i];
      tot_w += w[i];
    }
    fallback_ = tot_w > 0.0 ? tot_wy / tot_w : 0.5;
    for (const auto& [key, cell] : acc) {
      means_[key] = cell.second > 0.0 ? cell.first / cell.second : fallback_;
    }
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd p(X.rows());
    std::vector<double> key(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) key[static_cast<std::size_t>(j)] = X(i, j);
      auto it = means_.find(key);
      p[i] = clipq(it != means_.end() ? it->second : fallback_, qb_);
    }
    return p;
  }

 private:
  std::map<std::vector<double>, double> means_;
  double fallback_ = 0.5;
  double qb_;
};

// ------------------------------ ridge logistic -----------------------------

// IRLS for the L2-penalized weighted likelihood; intercept unpenalized.
logistic_fit fit_ridge(const design_matrix& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& w, double lambda) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::VectorXd pen = Eigen::VectorXd::Constant(d, lambda);
  pen[0] = 0.0;  // column 0 is the intercept by construction

  logistic_fit fit;
  fit.coef = Eigen::VectorXd::Zero(d);
  for (int iter = 1; iter <= 100; ++iter) {
    fit.iterations = iter;
    Eigen::VectorXd eta = X.values * fit.coef;
    Eigen::VectorXd p(n), irls_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = stats::expit(eta[i]);
      irls_w[i] = w[i] * p[i] * (1.0 - p[i]);
    }
    Eigen::VectorXd score =
        X.values.transpose() * (w.array() * (y - p).array()).matrix() - pen.asDiagonal() * fit.coef;
    fit.max_score = score.cwiseAbs().maxCoeff();
    if (fit.max_score < 1e-8) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd info = X.values.transpose() * irls_w.asDiagonal() * X.values;
    info += Eigen::MatrixXd(pen.asDiagonal());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd step = ldlt.solve(score);
    fit.coef += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

class ridge_candidate final : public candidate_model {
 public:
  ridge_candidate(std::vector<basis_term> terms, logistic_fit fit, double lambda, double qb)
      : terms_(std::move(terms)), fit_(std::move(fit)), lambda_(lambda), qb_(qb) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    design_matrix d = build_basis(terms_, X);
    Eigen::VectorXd p = predict_proba(fit_, d);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = clipq(p[i], qb_);
    return p;
  }

  double lambda() const { return lambda_; }

 private:
  std::vector<basis_term> terms_;
  logistic_fit fit_;
  double lambda_;
  double qb_;
};

candidate_ptr fit_ridge_candidate(const learner_spec& spec, const learner_task& task,
                                  const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                  double qb, std::uint64_t seed) {
  auto terms = terms_interact_all(task);
  design_matrix d = build_basis(terms, task.features);
  const int n = static_cast<int>(task.rows());

  // lambda by internal cross-validated NLL over the spec grid.
  double best_lambda = spec.lambda_grid.front();
  if (spec.lambda_grid.size() > 1 && n >= 10) {
    const int k = 5;
    std::vector<int> folds = make_folds(n, k, derive_seed(seed, 17, stream::folds));
    double best_risk = std::numeric_limits<double>::infinity();
    for (double lambda : spec.lambda_grid) {
      double risk = 0.0, wsum = 0.0;
      for (int f = 0; f < k; ++f) {
        std::vector<int> tr, te;
        for (int i = 0; i < n; ++i) (folds[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
        if (tr.empty() || te.empty()) continue;
        design_matrix dtr;
        dtr.values.resize(static_cast<Eigen::Index>(tr.size()), d.cols());
        dtr.labels = d.labels;
        Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size())), wtr(ytr.size());
        for (std::size_t i = 0; i < tr.size(); ++i) {
          dtr.values.row(static_cast<Eigen::Index>(i)) = d.values.row(tr[i]);
          ytr[static_cast<Eigen::Index>(i)] = y[tr[i]];
          wtr[static_cast<Eigen::Index>(i)] = w[tr[i]];
        }
        logistic_fit lf = fit_ridge(dtr, ytr, wtr, lambda);
        for (int i : te) {
          const double p = clipq(stats::expit(d.values.row(i) * lf.coef), qb);
          risk -= w[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
          wsum += w[i];
        }
      }
      if (wsum > 0.0) risk /= wsum;
      if (risk < best_risk - 1e-12) {
        best_risk = risk;
        best_lambda = lambda;
      }
    }
  }

  logistic_fit lf = fit_ridge(d, y, w, best_lambda);
  auto cand = std::make_unique<ridge_candidate>(std::move(terms), lf, best_lambda, qb);
  cand->converged = lf.converged;
  return cand;
}

// ------------------------------ hinge spline -------------------------------

std::vector<double> weighted_quantile_knots(const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                                            const std::vector<double>& probs) {
  std::vector<int> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  const double total = w.sum();
  std::vector<double> knots;
  for (double q : probs) {
    double cum = 0.0;
    for (int i : order) {
      cum += w[i];
      if (cum >= q * total) {
        knots.push_back(x[i]);
        break;
      }
    }
  }
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  return knots;
}

candidate_ptr fit_hinge_candidate(const learner_spec& spec, const learner_task& task,
                                  const Eigen::VectorXd& y, const Eigen::VectorXd& w, double qb) {
  const int a = task.treatment_col;

  // Candidate pool: raw mains, hinge pairs at quantile knots of continuous
  // columns, and treatment interactions with each of those.
  std::vector<basis_term> pool;
  for (int j = 0; j < task.cols(); ++j) {
    pool.push_back({{{j, 0, 0.0}}, task.names[j]});
    if (j != a) {
      pool.push_back({{{a, 0, 0.0}, {j, 0, 0.0}}, task.names[a] + ":" + task.names[j]});
    }
  }
  for (int j = 0; j < task.cols(); ++j) {
    if (j == a || distinct_count(task.features.col(j), 4) <= 4) continue;
    for (double knot : weighted_quantile_knots(task.features.col(j), w, {0.2, 0.4, 0.6, 0.8})) {
      const std::string kn = std::to_string(knot);
      pool.push_back({{{j, +1, knot}}, "h+(" + task.names[j] + "," + kn + ")"});
      pool.push_back({{{j, -1, knot}}, "h-(" + task.names[j] + "," + kn + ")"});
      pool.push_back({{{a, 0, 0.0}, {j, +1, knot}},
                      task.names[a] + ":h+(" + task.names[j] + "," + kn + ")"});
      pool.push_back({{{a, 0, 0.0}, {j, -1, knot}},
                      task.names[a] + ":h-(" + task.names[j] + "," + kn + ")"});
    }
  }

  Eigen::MatrixXd pool_vals(task.rows(), static_cast<Eigen::Index>(pool.size()));
  for (std::size_t c = 0; c < pool.size(); ++c) {
    for (Eigen::Index i = 0; i < task.rows(); ++i) {
      pool_vals(i, static_cast<Eigen::Index>(c)) = eval_term(pool[c], task.features, i);
    }
  }

  std::vector<basis_term> selected{{{}, "(intercept)"}};
  std::vector<bool> used(pool.size(), false);
  logistic_fit fit;

  for (int step = 0; step < spec.max_terms; ++step) {
    design_matrix d = build_basis(selected, task.features);
    try {
      fit = fit_logistic(d, y, w, Eigen::VectorXd::Zero(task.rows()));
    } catch (const error&) {
      break;  // collinear addition slipped through screening; stop growing
    }
    Eigen::VectorXd p = predict_proba(fit, d);

    // Rao-score screening against the current fit (diagonal approximation).
    int best = -1;
    double best_stat = 0.0;
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (used[c]) continue;
      double num = 0.0, den = 0.0;
      for (Eigen::Index i = 0; i < task.rows(); ++i) {
        const double v = pool_vals(i, static_cast<Eigen::Index>(c));
        num += w[i] * (y[i] - p[i]) * v;
        den += w[i] * p[i] * (1.0 - p[i]) * v * v;
      }
      if (den < 1e-12) continue;
      const double stat = num * num / den;
      if (stat > best_stat) {
        best_stat = stat;
        best = static_cast<int>(c);
      }
    }
    if (best < 0 || best_stat < 4.0) break;  // ~ chi-square(1) 95% cutoff
    used[static_cast<std::size_t>(best)] = true;
    selected.push_back(pool[static_cast<std::size_t>(best)]);
  }

  design_matrix d = build_basis(selected, task.features);
  logistic_fit final_fit;
  try {
    final_fit = fit_logistic(d, y, w, Eigen::VectorXd::Zero(task.rows()));
  } catch (const error&) {
    // fall back to intercept-only
    selected.resize(1);
    d = build_basis(selected, task.features);
    final_fit = fit_logistic(d, y, w, Eigen::VectorXd::Zero(task.rows()));
  }
  auto cand = std::make_unique<glm_candidate>(std::move(selected), final_fit, qb);
  cand->converged = final_fit.converged;
  return cand;
}

// ------------------------------ bagged trees -------------------------------

struct tree_node {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1, right = -1;
};

struct reg_tree {
  std::vector<tree_node> nodes;

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index row) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const auto& nd = nodes[static_cast<std::size_t>(k)];
      k = X(row, nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }
};

struct tree_builder {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  const Eigen::VectorXd& w;  // observation weight x bootstrap count
  int max_depth, min_leaf, mtry;
  std::mt19937_64& rng;
  reg_tree tree;

  int build(std::vector<int>& idx, int lo, int hi, int depth) {
    double sw = 0.0, swy = 0.0;
    for (int t = lo; t < hi; ++t) {
      sw += w[idx[static_cast<std::size_t>(t)]];
      swy += w[idx[static_cast<std::size_t>(t)]] * y[idx[static_cast<std::size_t>(t)]];
    }
    tree_node node;
    node.value = sw > 0.0 ? swy / sw : 0.5;
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);
    if (depth >= max_depth || hi - lo < 2 * min_leaf) return id;

    // Feature subsample without replacement.
    std::vector<int> feats(static_cast<std::size_t>(X.cols()));
    std::iota(feats.begin(), feats.end(), 0);
    for (int t = 0; t < mtry && t < static_cast<int>(feats.size()); ++t) {
      std::uniform_int_distribution<int> pick(t, static_cast<int>(feats.size()) - 1);
      std::swap(feats[static_cast<std::size_t>(t)], feats[static_cast<std::size_t>(pick(rng))]);
    }

    int best_f = -1, best_pos = -1;
    double best_gain = 1e-12, best_thr = 0.0;
    std::vector<int> span(idx.begin() + lo, idx.begin() + hi);
    for (int t = 0; t < mtry && t < static_cast<int>(feats.size()); ++t) {
      const int f = feats[static_cast<std::size_t>(t)];
      std::sort(span.begin(), span.end(),
                [&](int a, int b) { return X(a, f) < X(b, f); });
      double lw = 0.0, lwy = 0.0;
      for (int pos = 0; pos + 1 < static_cast<int>(span.size()); ++pos) {
        const int i = span[static_cast<std::size_t>(pos)];
        lw += w[i];
        lwy += w[i] * y[i];
        if (pos + 1 < min_leaf || static_cast<int>(span.size()) - pos - 1 < min_leaf) continue;
        const double xl = X(i, f), xr = X(span[static_cast<std::size_t>(pos + 1)], f);
        if (xl == xr) continue;
        const double rw = sw - lw, rwy = swy - lwy;
        if (lw <= 0.0 || rw <= 0.0) continue;
        const double gain = lwy * lwy / lw + rwy * rwy / rw - swy * swy / sw;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_thr = 0.5 * (xl + xr);
          best_pos = pos;
        }
      }
    }
    if (best_f < 0) return id;

    auto mid = std::partition(idx.begin() + lo, idx.begin() + hi,
                              [&](int i) { return X(i, best_f) <= best_thr; });
    const int cut = static_cast<int>(mid - idx.begin());
    if (cut == lo || cut == hi) return id;
    (void)best_pos;
    tree.nodes[static_cast<std::size_t>(id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best_thr;
    tree.nodes[static_cast<std::size_t>(id)].left = build(idx, lo, cut, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].right = build(idx, cut, hi, depth + 1);
    return id;
  }
};

class forest_candidate final : public candidate_model {
 public:
  forest_candidate(const learner_spec& spec, const learner_task& task, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& w, double qb, std::uint64_t seed)
      : qb_(qb) {
    const int n = static_cast<int>(task.rows());
    const int d = static_cast<int>(task.cols());
    const int mtry = spec.mtry > 0 ? spec.mtry
                                   : std::max(1, static_cast<int>(std::ceil(std::sqrt(d))));
    trees_.reserve(static_cast<std::size_t>(spec.n_trees));
    for (int b = 0; b < spec.n_trees; ++b) {
      std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(b), stream::learner);
      std::uniform_int_distribution<int> pick(0, n - 1);
      Eigen::VectorXd bw = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) bw[pick(rng)] += 1.0;
      bw = bw.cwiseProduct(w);
      std::vector<int> idx;
      idx.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        if (bw[i] > 0.0) idx.push_back(i);
      }
      if (idx.empty()) continue;
      tree_builder builder{task.features, y, bw, spec.max_depth, spec.min_leaf, mtry, rng, {}};
      builder.build(idx, 0, static_cast<int>(idx.size()), 0);
      trees_.push_back(std::move(builder.tree));
    }
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(X.rows());
    for (const auto& t : trees_) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) p[i] += t.predict_row(X, i);
    }
    if (!trees_.empty()) p /= static_cast<double>(trees_.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = clipq(p[i], qb_);
    return p;
  }

 private:
  std::vector<reg_tree> trees_;
  double qb_;
};

}  // namespace

// ------------------------------ dispatch ------------------------------------

candidate_ptr fit_candidate(const learner_spec& spec, const learner_task& task,
                            const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                            double q_bound, std::uint64_t seed) {
  task.validate();
  if (y.size() != task.rows() || weights.size() != task.rows()) {
    throw error(errc::dimension_mismatch, "response/weights length must match task rows");
  }

  candidate_ptr out;
  switch (spec.kind) {
    case learner_kind::mean: {
      const double wsum = weights.sum();
      const double m = wsum > 0.0 ? weights.dot(y) / wsum : 0.5;
      out = std::make_unique<mean_candidate>(m, q_bound);
      break;
    }
    case learner_kind::logistic_main:
    case learner_kind::logistic_interact:
    case learner_kind::logistic_interact_all: {
      std::vector<basis_term> terms;
      if (spec.kind == learner_kind::logistic_main) terms = terms_main(task);
      else if (spec.kind == learner_kind::logistic_interact_all) terms = terms_interact_all(task);
      else terms = terms_interact_one(task, spec.covariate);
      design_matrix d = build_basis(terms, task.features);
      logistic_fit fit = fit_logistic(d, y, weights, Eigen::VectorXd::Zero(task.rows()));
      auto cand = std::make_unique<glm_candidate>(std::move(terms), fit, q_bound);
      cand->converged = fit.converged;
      out = std::move(cand);
      break;
    }
    case learner_kind::logistic_saturated:
      out = std::make_unique<cellmean_candidate>(task, y, weights, q_bound);
      break;
    case learner_kind::ridge_logistic:
      out = fit_ridge_candidate(spec, task, y, weights, q_bound, seed);
      break;
    case learner_kind::hinge_spline:
      out = fit_hinge_candidate(spec, task, y, weights, q_bound);
      break;
    case learner_kind::bagged_trees:
      out = std::make_unique<forest_candidate>(spec, task, y, weights, q_bound, seed);
      break;
  }
  out->name = spec.name();
  return out;
}

std::vector<candidate_ptr> fit_learner_library(const learner_task& task, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& weights,
                                               const std::vector<learner_spec>& specs,
                                               double q_bound, std::uint64_t seed) {
  if (specs.empty()) throw error(errc::empty_library, "learner library is empty");
  std::set<std::string> names;
  for (const auto& s : specs) {
    if (!names.insert(s.name()).second) {
      throw error(errc::duplicate_learner, "duplicate learner in library: " + s.name());
    }
  }
  std::vector<candidate_ptr> fits;
  fits.reserve(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    fits.push_back(fit_candidate(specs[k], task, y, weights, q_bound,
                                 derive_seed(seed, k, stream::learner)));
  }
  return fits;
}

// ------------------------------ super learner -------------------------------

Eigen::VectorXd ensemble_fit::predict(const Eigen::MatrixXd& features) const {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(features.rows());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (weights[static_cast<Eigen::Index>(k)] == 0.0) continue;
    p += weights[static_cast<Eigen::Index>(k)] * candidates[k]->predict(features);
  }
  return p;
}

namespace {

double cv_risk_of(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                  const Eigen::VectorXd& alpha, double qb) {
  double risk = 0.0;
  const double wsum = w.sum();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = stats::clip(Z.row(i) * alpha, qb, 1.0 - qb);
    risk -= w[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
  }
  return risk / wsum;
}

bool folds_degenerate(const std::vector<int>& folds, int k, const Eigen::VectorXd& y) {
  bool binary = true;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) { binary = false; break; }
  }
  if (!binary) return false;
  for (int f = 0; f < k; ++f) {
    bool has0 = false, has1 = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (folds[static_cast<std::size_t>(i)] == f) continue;  // training complement of fold f
      (y[i] == 1.0 ? has1 : has0) = true;
      if (has0 && has1) break;
    }
    if (!(has0 && has1)) return true;
  }
  return false;
}

}  // namespace

ensemble_fit fit_super_learner(const learner_task& task, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& weights,
                               const std::vector<learner_spec>& specs,
                               const std::vector<int>& folds, double q_bound, std::uint64_t seed) {
  task.validate();
  if (specs.empty()) throw error(errc::empty_library, "learner library is empty");
  const int n = static_cast<int>(task.rows());
  if (folds.size() != static_cast<std::size_t>(n)) {
    throw error(errc::dimension_mismatch, "fold assignment length must equal task rows");
  }
  const std::size_t K = specs.size();

  ensemble_fit ens;
  ens.q_bound = q_bound;
  for (const auto& s : specs) ens.names.push_back(s.name());

  // Single-candidate library: nothing to stack, no cross-validation needed.
  if (K == 1) {
    ens.candidates = fit_learner_library(task, y, weights, specs, q_bound, seed);
    ens.weights = Eigen::VectorXd::Ones(1);
    const Eigen::VectorXd p = ens.candidates[0]->predict(task.features);
    double risk = 0.0;
    for (int i = 0; i < n; ++i) {
      risk -= weights[i] * (y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log1p(-p[i]));
    }
    ens.cv_risks = Eigen::VectorXd::Constant(1, risk / weights.sum());
    ens.ensemble_cv_risk = ens.cv_risks[0];
    return ens;
  }

  const int k = 1 + *std::max_element(folds.begin(), folds.end());
  std::vector<int> use_folds = folds;
  if (folds_degenerate(use_folds, k, y)) {
    use_folds = make_folds(n, k, derive_seed(seed, 1, stream::folds));
    if (folds_degenerate(use_folds, k, y)) {
      throw error(errc::degenerate_folds, "a training complement lacks both outcome classes");
    }
  }

  // Cross-validated candidate predictions.
  Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(K));
  for (int f = 0; f < k; ++f) {
    std::vector<int> tr, te;
    for (int i = 0; i < n; ++i) (use_folds[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    if (te.empty()) continue;
    if (tr.empty()) throw error(errc::degenerate_folds, "empty training complement");

    learner_task sub;
    sub.names = task.names;
    sub.treatment_col = task.treatment_col;
    sub.features.resize(static_cast<Eigen::Index>(tr.size()), task.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size())), wtr(ytr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      sub.features.row(static_cast<Eigen::Index>(i)) = task.features.row(tr[i]);
      ytr[static_cast<Eigen::Index>(i)] = y[tr[i]];
      wtr[static_cast<Eigen::Index>(i)] = weights[tr[i]];
    }
    Eigen::MatrixXd xte(static_cast<Eigen::Index>(te.size()), task.cols());
    for (std::size_t i = 0; i < te.size(); ++i) {
      xte.row(static_cast<Eigen::Index>(i)) = task.features.row(te[i]);
    }
    for (std::size_t c = 0; c < K; ++c) {
      candidate_ptr cand =
          fit_candidate(specs[c], sub, ytr, wtr, q_bound,
                        derive_seed(seed, (static_cast<std::uint64_t>(f) + 1) * 1024 + c,
                                    stream::learner));
      Eigen::VectorXd pte = cand->predict(xte);
      for (std::size_t i = 0; i < te.size(); ++i) {
        Z(te[i], static_cast<Eigen::Index>(c)) = pte[static_cast<Eigen::Index>(i)];
      }
    }
  }

  ens.cv_risks.resize(static_cast<Eigen::Index>(K));
  for (std::size_t c = 0; c < K; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    e[static_cast<Eigen::Index>(c)] = 1.0;
    ens.cv_risks[static_cast<Eigen::Index>(c)] = cv_risk_of(Z, y, weights, e, q_bound);
  }

  // Exponentiated-gradient descent on the simplex with backtracking.
  Eigen::VectorXd alpha =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K), 1.0 / static_cast<double>(K));
  double risk = cv_risk_of(Z, y, weights, alpha, q_bound);
  double step = 1.0;
  const double wsum = weights.sum();
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    for (int i = 0; i < n; ++i) {
      const double p = stats::clip(Z.row(i) * alpha, q_bound, 1.0 - q_bound);
      const double gscale = -weights[i] * (y[i] / p - (1.0 - y[i]) / (1.0 - p)) / wsum;
      grad += gscale * Z.row(i).transpose();
    }
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      Eigen::VectorXd logits = (-step * grad).array() - (-step * grad).maxCoeff();
      Eigen::VectorXd cand = alpha.array() * logits.array().exp();
      cand /= cand.sum();
      const double cand_risk = cv_risk_of(Z, y, weights, cand, q_bound);
      if (cand_risk <= risk) {
        const double gain = risk - cand_risk;
        alpha = cand;
        risk = cand_risk;
        improved = gain > 1e-8;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }

  // Convexity guarantees no corner beats the optimum; if one slips under by
  // more than tolerance, take it (earliest index wins ties toward the simpler
  // learner, in library order).
  for (std::size_t c = 0; c < K; ++c) {
    if (ens.cv_risks[static_cast<Eigen::Index>(c)] < risk - 1e-8) {
      alpha = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
      alpha[static_cast<Eigen::Index>(c)] = 1.0;
      risk = ens.cv_risks[static_cast<Eigen::Index>(c)];
      break;
    }
  }

  ens.weights = alpha;
  ens.ensemble_cv_risk = risk;
  ens.candidates = fit_learner_library(task, y, weights, specs, q_bound, seed);
  return ens;
}

}  // namespace blipmsm
