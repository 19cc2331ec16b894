#ifndef MRDD_EVAL_HPP
#define MRDD_EVAL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrdd/latents.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd::eval {

/// Per-metric result over repeated runs. `variance` is the population
/// variance of the per-run values; `stddev` its square root (the paper's
/// "+-" notation does not say which it reports, so both are carried).
struct MetricsReport {
  std::string task;
  std::string metric;
  std::vector<double> per_run;
  double mean = 0.0;
  double variance = 0.0;
  double stddev = 0.0;

  void finalize();
};

/// Clustering accuracy after the optimal one-to-one cluster-to-class
/// assignment (Hungarian algorithm on the contingency matrix).
double hungarian_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// Minimum-cost assignment on a dense square cost matrix; returns row->col.
std::vector<int> hungarian_min_assignment(const std::vector<double>& cost, int n);

/// NMI with natural-log entropies, normalized by the mean of the marginal
/// entropies; 0 by convention when either labeling has zero entropy.
double nmi(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// F = 2PR/(P+R); 0 when tp = 0.
double f_score(long tp, long fp, long fn);

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;  // (k, d)
  double inertia = 0.0;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; throws when fewer than k
/// distinct points exist.
KMeansResult kmeans(const Tensor& x, int k, std::uint64_t seed, int max_iter = 300);

/// One-vs-rest linear SVM trained by dual coordinate descent (hinge loss,
/// L2 regularization, bias via feature augmentation).
class LinearSvc {
 public:
  explicit LinearSvc(double c = 1.0, int max_epochs = 1000, double tol = 1e-3)
      : c_(c), max_epochs_(max_epochs), tol_(tol) {}

  void fit(const Tensor& x, const std::vector<int>& y, int n_classes, std::uint64_t seed);
  std::vector<int> predict(const Tensor& x) const;

 private:
  double c_;
  int max_epochs_;
  double tol_;
  int n_classes_ = 0;
  Tensor weights_;  // (n_classes, d+1), last column is the bias
};

/// Representation choice for downstream evaluation.
/// One of: c | s<i> | cs1 | concat.
struct Selector {
  enum class Kind { consistent, specific, consistent_plus_first, concat_all };
  Kind kind = Kind::consistent;
  int view = 1;  // for Kind::specific, 1-based

  static Selector parse(const std::string& s);
  std::string to_string() const;
};

/// Materialize the selected representation as a (n, d) matrix.
Tensor select_representation(const latents::LatentSet& set, const Selector& sel);

/// k-means clustering metrics over `runs` seeded repetitions.
std::map<std::string, MetricsReport> cluster_eval(const latents::LatentSet& set,
                                                  const Selector& sel, int n_classes,
                                                  int runs, std::uint64_t seed);

/// SVC classification metrics on a fixed train/test split over `runs`
/// seeded repetitions. F-score is macro-averaged.
std::map<std::string, MetricsReport> classify_eval(const latents::LatentSet& set,
                                                   const Selector& sel,
                                                   const std::vector<int>& train_idx,
                                                   const std::vector<int>& test_idx,
                                                   int runs, std::uint64_t seed,
                                                   double svc_c = 1.0);

}  // namespace mrdd::eval

#endif
