#include "crt/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "crt/design.hpp"
#include "crt/errors.hpp"
#include "crt/logistic.hpp"
#include "crt/rng.hpp"

namespace crt {

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::intercept_only: return "intercept-only";
    case LearnerKind::generalized_linear: return "generalized-linear";
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::regression_forest: return "regression-forest";
    case LearnerKind::knn: return "knn";
    case LearnerKind::ensemble: return "ensemble";
  }
  return "unknown";
}

LearnerKind learner_kind_from_string(const std::string& s) {
  for (auto k : {LearnerKind::intercept_only, LearnerKind::generalized_linear, LearnerKind::ridge,
                 LearnerKind::regression_forest, LearnerKind::knn, LearnerKind::ensemble}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown learner kind '" + s + "'");
}

namespace {

// ---------------------------------------------------------------------------
// intercept-only

class ConstantModel final : public FittedLearner {
 public:
  explicit ConstantModel(double v) : value_(v) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    return Eigen::VectorXd::Constant(X.rows(), value_);
  }

 private:
  double value_;
};

// ---------------------------------------------------------------------------
// linear / logistic, optionally ridge-penalized on standardized features

Eigen::MatrixXd linear_features(const Eigen::MatrixXd& X, bool interactions) {
  if (!interactions || X.cols() < 2) return X;
  Eigen::MatrixXd out(X.rows(), X.cols() + X.cols() - 1);
  out.leftCols(X.cols()) = X;
  for (Eigen::Index j = 1; j < X.cols(); ++j) {
    out.col(X.cols() + j - 1) = X.col(0).cwiseProduct(X.col(j));
  }
  return out;
}

class LinearModel final : public FittedLearner {
 public:
  LinearModel(std::vector<std::size_t> kept, Eigen::VectorXd center, Eigen::VectorXd scale, Eigen::VectorXd beta,
              bool logistic, bool interactions)
      : kept_(std::move(kept)),
        center_(std::move(center)),
        scale_(std::move(scale)),
        beta_(std::move(beta)),
        logistic_(logistic),
        interactions_(interactions) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& Xraw) const override {
    const Eigen::MatrixXd X = linear_features(Xraw, interactions_);
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      double eta = beta_[0];
      for (std::size_t k = 0; k < kept_.size(); ++k) {
        const auto idx = static_cast<Eigen::Index>(k);
        eta += beta_[idx + 1] * (X(r, static_cast<Eigen::Index>(kept_[k])) - center_[idx]) / scale_[idx];
      }
      out[r] = logistic_ ? expit(eta) : eta;
    }
    return out;
  }

 private:
  std::vector<std::size_t> kept_;
  Eigen::VectorXd center_, scale_, beta_;
  bool logistic_, interactions_;
};

std::unique_ptr<FittedLearner> train_linear(const LearnerSpec& spec, const Eigen::MatrixXd& Xraw,
                                            const Eigen::VectorXd& y, double lambda) {
  const Eigen::MatrixXd X = linear_features(Xraw, spec.treatment_interactions);
  std::vector<std::size_t> cand(static_cast<std::size_t>(X.cols()));
  std::iota(cand.begin(), cand.end(), 0);
  const auto kept = informative_columns(X, cand);

  const auto n = X.rows();
  const auto d = static_cast<Eigen::Index>(kept.size());
  Eigen::VectorXd center(d), scale(d);
  Eigen::MatrixXd Z(n, d + 1);
  Z.col(0).setOnes();
  for (Eigen::Index k = 0; k < d; ++k) {
    const auto col = X.col(static_cast<Eigen::Index>(kept[static_cast<std::size_t>(k)]));
    center[k] = col.mean();
    const double sd = std::sqrt((col.array() - center[k]).square().mean());
    scale[k] = sd > 0 ? sd : 1.0;
    Z.col(k + 1) = (col.array() - center[k]) / scale[k];
  }

  const bool logistic = spec.target == LearnerTarget::kappa;
  Eigen::VectorXd beta;
  if (logistic) {
    IrlsOptions opt;
    opt.ridge = lambda;
    try {
      beta = fit_logistic_irls(Z, y, nullptr, opt).coefficients;
    } catch (const NumericalError&) {
      if (lambda > 0) throw;
      opt.ridge = 1e-2;  // separated training fold: minimal shrinkage keeps the fit finite
      beta = fit_logistic_irls(Z, y, nullptr, opt).coefficients;
    }
  } else {
    Eigen::MatrixXd H = Z.transpose() * Z;
    H.diagonal().tail(d).array() += lambda;
    beta = H.ldlt().solve(Z.transpose() * y);
  }
  return std::make_unique<LinearModel>(kept, center, scale, beta, logistic, spec.treatment_interactions);
}

// ---------------------------------------------------------------------------
// k-nearest neighbours on standardized features

class KnnModel final : public FittedLearner {
 public:
  KnnModel(Eigen::MatrixXd Z, Eigen::VectorXd y, Eigen::RowVectorXd center, Eigen::RowVectorXd scale, int k)
      : Z_(std::move(Z)), y_(std::move(y)), center_(std::move(center)), scale_(std::move(scale)), k_(k) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    const auto n = Z_.rows();
    const auto k = std::min<Eigen::Index>(k_, n);
    Eigen::VectorXd out(X.rows());
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const Eigen::RowVectorXd z = (X.row(r) - center_).cwiseQuotient(scale_);
      for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(Z_.row(i) - z).squaredNorm(), i};
      std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
      double s = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) s += y_[dist[static_cast<std::size_t>(i)].second];
      out[r] = s / static_cast<double>(k);
    }
    return out;
  }

 private:
  Eigen::MatrixXd Z_;
  Eigen::VectorXd y_;
  Eigen::RowVectorXd center_, scale_;
  int k_;
};

std::unique_ptr<FittedLearner> train_knn(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (spec.k < 1) throw ValidationError("knn: k must be positive");
  Eigen::RowVectorXd center = X.colwise().mean();
  Eigen::RowVectorXd scale = ((X.rowwise() - center).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale[j] > 0)) scale[j] = 1.0;
  }
  Eigen::MatrixXd Z = (X.rowwise() - center).array().rowwise() / scale.array();
  return std::make_unique<KnnModel>(std::move(Z), y, center, scale, spec.k);
}

// ---------------------------------------------------------------------------
// histogram-based regression forest

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class ForestModel final : public FittedLearner {
 public:
  ForestModel(std::vector<std::vector<TreeNode>> trees) : trees_(std::move(trees)) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      double s = 0.0;
      for (const auto& tree : trees_) {
        int node = 0;
        while (tree[static_cast<std::size_t>(node)].feature >= 0) {
          const auto& nd = tree[static_cast<std::size_t>(node)];
          node = X(r, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        s += tree[static_cast<std::size_t>(node)].value;
      }
      out[r] = s / static_cast<double>(trees_.size());
    }
    return out;
  }

 private:
  std::vector<std::vector<TreeNode>> trees_;
};

class ForestBuilder {
 public:
  ForestBuilder(const ForestParams& params, const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
      : params_(params), y_(y), n_(static_cast<std::size_t>(X.rows())), d_(static_cast<std::size_t>(X.cols())) {
    edges_.resize(d_);
    bins_.resize(n_ * d_);
    std::vector<double> values(n_);
    for (std::size_t j = 0; j < d_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) values[i] = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
      auto& e = edges_[j];
      const std::size_t u = sorted.size();
      const std::size_t nb = static_cast<std::size_t>(std::max(params.bins, 2));
      if (u <= nb) {
        for (std::size_t k = 0; k + 1 < u; ++k) e.push_back(0.5 * (sorted[k] + sorted[k + 1]));
      } else {
        for (std::size_t b = 1; b < nb; ++b) {
          const std::size_t pos = b * u / nb;
          e.push_back(0.5 * (sorted[pos - 1] + sorted[pos]));
        }
        e.erase(std::unique(e.begin(), e.end()), e.end());
      }
      for (std::size_t i = 0; i < n_; ++i) {
        bins_[i * d_ + j] = static_cast<std::uint8_t>(std::lower_bound(e.begin(), e.end(), values[i]) - e.begin());
      }
    }
  }

  std::vector<TreeNode> build(std::uint64_t seed) {
    Philox4x32 rng(seed, 0);
    std::vector<std::size_t> sample(n_);
    for (auto& s : sample) s = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n_));
    std::vector<TreeNode> nodes;
    nodes.reserve(256);
    grow(nodes, sample, 0, sample.size(), 0, rng);
    return nodes;
  }

 private:
  int grow(std::vector<TreeNode>& nodes, std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
           int depth, Philox4x32& rng) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    const std::size_t n = end - begin;
    double sum = 0.0, sq = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const double v = y_[static_cast<Eigen::Index>(idx[k])];
      sum += v;
      sq += v * v;
    }
    nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(n);
    const auto min_leaf = static_cast<std::size_t>(std::max(params_.min_leaf, 1));
    if (depth >= params_.max_depth || n < 2 * min_leaf || sq - sum * sum / static_cast<double>(n) <= 1e-12) {
      return id;
    }

    // Feature subsample.
    const std::size_t mtry = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(params_.mtry_fraction * static_cast<double>(d_))), 1, d_);
    std::vector<std::size_t> feats(d_);
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t pick = k + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d_ - k));
      std::swap(feats[k], feats[pick]);
    }

    const double parent = sum * sum / static_cast<double>(n);
    double best_gain = 1e-12;
    int best_feature = -1;
    std::size_t best_bin = 0;
    std::vector<double> hsum;
    std::vector<std::size_t> hcnt;
    for (std::size_t f = 0; f < mtry; ++f) {
      const std::size_t j = feats[f];
      const std::size_t nb = edges_[j].size() + 1;
      if (nb < 2) continue;
      hsum.assign(nb, 0.0);
      hcnt.assign(nb, 0);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t b = bins_[idx[k] * d_ + j];
        hsum[b] += y_[static_cast<Eigen::Index>(idx[k])];
        hcnt[b]++;
      }
      double lsum = 0.0;
      std::size_t lcnt = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        lsum += hsum[b];
        lcnt += hcnt[b];
        if (lcnt < min_leaf) continue;
        const std::size_t rcnt = n - lcnt;
        if (rcnt < min_leaf) break;
        const double rsum = sum - lsum;
        const double gain = lsum * lsum / static_cast<double>(lcnt) + rsum * rsum / static_cast<double>(rcnt) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(j);
          best_bin = b;
        }
      }
    }
    if (best_feature < 0) return id;

    const auto jf = static_cast<std::size_t>(best_feature);
    auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin), idx.begin() + static_cast<std::ptrdiff_t>(end),
                              [&](std::size_t r) { return bins_[r * d_ + jf] <= best_bin; });
    const auto split = static_cast<std::size_t>(mid - idx.begin());
    nodes[static_cast<std::size_t>(id)].feature = best_feature;
    nodes[static_cast<std::size_t>(id)].threshold = edges_[jf][best_bin];
    const int left = grow(nodes, idx, begin, split, depth + 1, rng);
    const int right = grow(nodes, idx, split, end, depth + 1, rng);
    nodes[static_cast<std::size_t>(id)].left = left;
    nodes[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  const ForestParams& params_;
  const Eigen::VectorXd& y_;
  std::size_t n_, d_;
  std::vector<std::vector<double>> edges_;
  std::vector<std::uint8_t> bins_;
};

std::unique_ptr<FittedLearner> train_forest(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            std::uint64_t seed) {
  if (spec.forest.trees < 1) throw ValidationError("regression-forest: trees must be positive");
  if (spec.forest.bins > 256) throw ValidationError("regression-forest: at most 256 bins");
  ForestBuilder builder(spec.forest, X, y);
  std::vector<std::vector<TreeNode>> trees;
  trees.reserve(static_cast<std::size_t>(spec.forest.trees));
  for (int t = 0; t < spec.forest.trees; ++t) {
    trees.push_back(builder.build(stream_id(seed, static_cast<std::uint64_t>(t), 0x7ee)));
  }
  return std::make_unique<ForestModel>(std::move(trees));
}

// ---------------------------------------------------------------------------
// convex ensemble

class EnsembleModel final : public FittedLearner {
 public:
  EnsembleModel(std::vector<std::unique_ptr<FittedLearner>> members, std::vector<double> weights)
      : members_(std::move(members)), weights_(std::move(weights)) {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (std::size_t k = 0; k < members_.size(); ++k) {
      if (weights_[k] > 0) out += weights_[k] * members_[k]->predict(X);
    }
    return out;
  }
  std::vector<double> member_weights() const override { return weights_; }

 private:
  std::vector<std::unique_ptr<FittedLearner>> members_;
  std::vector<double> weights_;
};

std::unique_ptr<FittedLearner> train_ensemble(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                              std::span<const std::size_t> groups, std::uint64_t seed) {
  if (spec.members.empty()) throw ValidationError("ensemble: no member learners");
  const std::size_t L = spec.members.size();
  if (L > 8) throw ValidationError("ensemble: at most 8 members");
  if (groups.size() != static_cast<std::size_t>(X.rows())) throw std::invalid_argument("ensemble: groups size");

  // Cluster-level validation split.
  std::vector<std::size_t> ids(groups.begin(), groups.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Philox4x32 rng(seed, 0x5eed);
  for (std::size_t k = ids.size(); k > 1; --k) {
    std::swap(ids[k - 1], ids[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k))]);
  }
  const auto n_valid = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::round(spec.validation_fraction * static_cast<double>(ids.size()))), 1,
      ids.size() > 1 ? ids.size() - 1 : 1);
  std::set<std::size_t> valid(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_valid));

  std::vector<Eigen::Index> tr, va;
  for (std::size_t r = 0; r < groups.size(); ++r) (valid.count(groups[r]) ? va : tr).push_back(static_cast<Eigen::Index>(r));

  std::vector<double> weights(L, 0.0);
  if (ids.size() < 2 || tr.empty() || va.empty()) {
    weights.assign(L, 1.0 / static_cast<double>(L));
  } else {
    const Eigen::MatrixXd Xtr = X(tr, Eigen::all), Xva = X(va, Eigen::all);
    const Eigen::VectorXd ytr = y(tr), yva = y(va);
    std::vector<std::size_t> gtr;
    for (auto r : tr) gtr.push_back(groups[static_cast<std::size_t>(r)]);
    Eigen::MatrixXd P(Xva.rows(), static_cast<Eigen::Index>(L));
    for (std::size_t k = 0; k < L; ++k) {
      auto fitted = train_learner(spec.members[k], Xtr, ytr, gtr, stream_id(seed, k, 0xa11));
      P.col(static_cast<Eigen::Index>(k)) = fitted->predict(Xva);
    }
    Eigen::VectorXd w = nnls_small(P, yva);
    const double total = w.sum();
    if (total > 0) {
      for (std::size_t k = 0; k < L; ++k) weights[k] = w[static_cast<Eigen::Index>(k)] / total;
    } else {
      Eigen::Index best = 0;
      (P.colwise() - yva).colwise().squaredNorm().minCoeff(&best);
      weights[static_cast<std::size_t>(best)] = 1.0;
    }
  }

  std::vector<std::unique_ptr<FittedLearner>> members(L);
  for (std::size_t k = 0; k < L; ++k) {
    if (weights[k] > 0) members[k] = train_learner(spec.members[k], X, y, groups, stream_id(seed, k, 0xf01));
  }
  return std::make_unique<EnsembleModel>(std::move(members), std::move(weights));
}

class StratifiedModel final : public FittedLearner {
 public:
  StratifiedModel(std::unique_ptr<FittedLearner> control, std::unique_ptr<FittedLearner> treated)
      : arm_{std::move(control), std::move(treated)} {}

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd out(X.rows());
    for (int a = 0; a < 2; ++a) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        if ((X(r, 0) > 0.5) == (a == 1)) rows.push_back(r);
      }
      if (rows.empty()) continue;
      const Eigen::MatrixXd sub = X(rows, Eigen::all);
      const Eigen::VectorXd p = arm_[a]->predict(sub);
      for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = p[static_cast<Eigen::Index>(k)];
    }
    return out;
  }

 private:
  std::unique_ptr<FittedLearner> arm_[2];
};

std::unique_ptr<FittedLearner> train_stratified(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                                                const Eigen::VectorXd& y, std::span<const std::size_t> groups,
                                                std::uint64_t seed) {
  LearnerSpec base = spec;
  base.stratify_by_treatment = false;
  std::unique_ptr<FittedLearner> arm[2];
  for (int a = 0; a < 2; ++a) {
    std::vector<Eigen::Index> rows;
    std::vector<std::size_t> g;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      if ((X(r, 0) > 0.5) != (a == 1)) continue;
      rows.push_back(r);
      if (!groups.empty()) g.push_back(groups[static_cast<std::size_t>(r)]);
    }
    if (rows.empty()) return train_learner(base, X, y, groups, seed);
    const Eigen::MatrixXd Xa = X(rows, Eigen::all);
    const Eigen::VectorXd ya = y(rows);
    arm[a] = train_learner(base, Xa, ya, g, stream_id(seed, static_cast<std::uint64_t>(a), 0x57a));
  }
  return std::make_unique<StratifiedModel>(std::move(arm[0]), std::move(arm[1]));
}

}  // namespace

Eigen::VectorXd nnls_small(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const auto L = A.cols();
  Eigen::VectorXd best = Eigen::VectorXd::Zero(L);
  double best_rss = b.squaredNorm();
  for (unsigned mask = 1; mask < (1u << L); ++mask) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index k = 0; k < L; ++k) {
      if (mask & (1u << k)) cols.push_back(k);
    }
    const Eigen::MatrixXd As = A(Eigen::all, cols);
    const Eigen::VectorXd x = As.colPivHouseholderQr().solve(b);
    if (!x.allFinite() || (x.array() < 0).any()) continue;
    const double rss = (As * x - b).squaredNorm();
    if (rss < best_rss - 1e-12 * (1.0 + best_rss)) {
      best_rss = rss;
      best.setZero();
      for (std::size_t k = 0; k < cols.size(); ++k) best[cols[k]] = x[static_cast<Eigen::Index>(k)];
    }
  }
  return best;
}

std::unique_ptr<FittedLearner> train_learner(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             std::span<const std::size_t> groups, std::uint64_t seed) {
  if (X.rows() == 0) throw NumericalError("learner: empty training set");
  if (spec.stratify_by_treatment) return train_stratified(spec, X, y, groups, seed);
  switch (spec.kind) {
    case LearnerKind::intercept_only: return std::make_unique<ConstantModel>(y.mean());
    case LearnerKind::generalized_linear: return train_linear(spec, X, y, 0.0);
    case LearnerKind::ridge: return train_linear(spec, X, y, spec.ridge_lambda);
    case LearnerKind::regression_forest: return train_forest(spec, X, y, seed);
    case LearnerKind::knn: return train_knn(spec, X, y);
    case LearnerKind::ensemble: return train_ensemble(spec, X, y, groups, seed);
  }
  throw std::logic_error("unreachable learner kind");
}

}  // namespace crt
