#include "mrdd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "mrdd/rng.hpp"

namespace mrdd::eval {

void MetricsReport::finalize() {
  mean = 0.0;
  variance = 0.0;
  if (per_run.empty()) return;
  for (double v : per_run) mean += v;
  mean /= static_cast<double>(per_run.size());
  for (double v : per_run) variance += (v - mean) * (v - mean);
  variance /= static_cast<double>(per_run.size());
  stddev = std::sqrt(variance);
}

// ------------------------------------------------------------- hungarian

std::vector<int> hungarian_min_assignment(const std::vector<double>& cost, int n) {
  // potentials + shortest augmenting paths, O(n^3)
  if (n == 0) return {};
  if (static_cast<int>(cost.size()) != n * n) {
    throw std::invalid_argument("hungarian: cost matrix size mismatch");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

double hungarian_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.empty() || y_true.size() != y_pred.size()) {
    throw std::invalid_argument("hungarian_accuracy: empty or mismatched labelings");
  }
  int k = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_pred[i] < 0) {
      throw std::invalid_argument("hungarian_accuracy: negative label");
    }
    k = std::max({k, y_true[i] + 1, y_pred[i] + 1});
  }
  // contingency counts, padded square
  std::vector<double> counts(static_cast<std::size_t>(k) * k, 0.0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    counts[static_cast<std::size_t>(y_pred[i]) * k + y_true[i]] += 1.0;
  }
  std::vector<double> costmat(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) costmat[i] = -counts[i];
  auto assign = hungarian_min_assignment(costmat, k);
  double matched = 0.0;
  for (int c = 0; c < k; ++c) matched += counts[static_cast<std::size_t>(c) * k + assign[c]];
  return matched / static_cast<double>(y_true.size());
}

double nmi(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("nmi: mismatched labelings");
  }
  if (y_true.empty()) return 0.0;
  int ky = 0, kc = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ky = std::max(ky, y_true[i] + 1);
    kc = std::max(kc, y_pred[i] + 1);
  }
  double n = static_cast<double>(y_true.size());
  std::vector<double> joint(static_cast<std::size_t>(ky) * kc, 0.0);
  std::vector<double> py(ky, 0.0), pc(kc, 0.0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    joint[static_cast<std::size_t>(y_true[i]) * kc + y_pred[i]] += 1.0 / n;
    py[y_true[i]] += 1.0 / n;
    pc[y_pred[i]] += 1.0 / n;
  }
  double hy = 0.0, hc = 0.0, mi = 0.0;
  for (double p : py) {
    if (p > 0.0) hy -= p * std::log(p);
  }
  for (double p : pc) {
    if (p > 0.0) hc -= p * std::log(p);
  }
  if (hy <= 0.0 || hc <= 0.0) return 0.0;  // degenerate labeling convention
  for (int a = 0; a < ky; ++a) {
    for (int b = 0; b < kc; ++b) {
      double p = joint[static_cast<std::size_t>(a) * kc + b];
      if (p > 0.0) mi += p * std::log(p / (py[a] * pc[b]));
    }
  }
  double val = mi / (0.5 * (hy + hc));
  return std::clamp(val, 0.0, 1.0);
}

double f_score(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw std::invalid_argument("f_score: negative counts");
  if (tp == 0) return 0.0;
  double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------- kmeans

KMeansResult kmeans(const Tensor& x, int k, std::uint64_t seed, int max_iter) {
  if (x.ndim() != 2) throw std::invalid_argument("kmeans: x must be (n, d)");
  const int n = x.dim(0), d = x.dim(1);
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: k out of range");
  RngStream rng(seed);

  auto sqdist = [&](const double* a, const double* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = a[j] - b[j];
      s += diff * diff;
    }
    return s;
  };

  // k-means++ seeding
  Tensor centroids({k, d});
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  {
    int first = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    std::copy(x.data() + static_cast<std::size_t>(first) * d,
              x.data() + static_cast<std::size_t>(first + 1) * d, centroids.data());
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double ds = sqdist(x.data() + static_cast<std::size_t>(i) * d,
                           centroids.data() + static_cast<std::size_t>(c - 1) * d);
        dist2[i] = std::min(dist2[i], ds);
        total += dist2[i];
      }
      if (total <= 0.0) {
        throw std::invalid_argument("kmeans: fewer distinct samples than k");
      }
      double r = rng.uniform() * total;
      double acc = 0.0;
      int pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
      std::copy(x.data() + static_cast<std::size_t>(pick) * d,
                x.data() + static_cast<std::size_t>(pick + 1) * d,
                centroids.data() + static_cast<std::size_t>(c) * d);
    }
  }

  KMeansResult res;
  res.labels.assign(n, -1);
  std::vector<double> sums(static_cast<std::size_t>(k) * d);
  std::vector<int> counts(k);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    res.inertia = 0.0;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      const double* xi = x.data() + static_cast<std::size_t>(i) * d;
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        double ds = sqdist(xi, centroids.data() + static_cast<std::size_t>(c) * d);
        if (ds < best) {
          best = ds;
          arg = c;
        }
      }
      if (res.labels[i] != arg) {
        changed = true;
        res.labels[i] = arg;
      }
      res.inertia += best;
      ++counts[arg];
      double* s = sums.data() + static_cast<std::size_t>(arg) * d;
      for (int j = 0; j < d; ++j) s[j] += xi[j];
    }
    res.iterations = iter + 1;
    // empty clusters grab the point farthest from its centroid
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double worst = -1.0;
      int steal = -1;
      for (int i = 0; i < n; ++i) {
        if (counts[res.labels[i]] <= 1) continue;
        double ds = sqdist(x.data() + static_cast<std::size_t>(i) * d,
                           centroids.data() + static_cast<std::size_t>(res.labels[i]) * d);
        if (ds > worst) {
          worst = ds;
          steal = i;
        }
      }
      if (steal < 0) throw std::invalid_argument("kmeans: fewer distinct samples than k");
      int old = res.labels[steal];
      const double* xi = x.data() + static_cast<std::size_t>(steal) * d;
      for (int j = 0; j < d; ++j) {
        sums[static_cast<std::size_t>(old) * d + j] -= xi[j];
        sums[static_cast<std::size_t>(c) * d + j] += xi[j];
      }
      --counts[old];
      ++counts[c];
      res.labels[steal] = c;
      changed = true;
    }
    for (int c = 0; c < k; ++c) {
      double* ctr = centroids.data() + static_cast<std::size_t>(c) * d;
      const double* s = sums.data() + static_cast<std::size_t>(c) * d;
      for (int j = 0; j < d; ++j) ctr[j] = s[j] / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  res.centroids = std::move(centroids);
  return res;
}

// ------------------------------------------------------------- LinearSvc

void LinearSvc::fit(const Tensor& x, const std::vector<int>& y, int n_classes,
                    std::uint64_t seed) {
  if (x.ndim() != 2 || x.dim(0) != static_cast<int>(y.size())) {
    throw std::invalid_argument("svc: x/y mismatch");
  }
  const int n = x.dim(0), d = x.dim(1);
  n_classes_ = n_classes;
  weights_ = Tensor({n_classes, d + 1});

  // squared norms of bias-augmented rows
  std::vector<double> qii(n);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * d;
    double s = 1.0;
    for (int j = 0; j < d; ++j) s += xi[j] * xi[j];
    qii[i] = s;
  }

  for (int cls = 0; cls < n_classes; ++cls) {
    std::vector<double> label(n);
    bool any_pos = false;
    for (int i = 0; i < n; ++i) {
      label[i] = y[i] == cls ? 1.0 : -1.0;
      any_pos |= y[i] == cls;
    }
    if (!any_pos) {
      throw std::invalid_argument("svc: class " + std::to_string(cls) +
                                  " absent from training data");
    }
    std::vector<double> alpha(n, 0.0);
    std::vector<double> w(d + 1, 0.0);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    RngStream rng(derive_seed(seed, {0x737663ULL, static_cast<std::uint64_t>(cls)}));

    for (int epoch = 0; epoch < max_epochs_; ++epoch) {
      rng.shuffle(order);
      double max_pg = 0.0;
      for (int oi = 0; oi < n; ++oi) {
        int i = order[oi];
        const double* xi = x.data() + static_cast<std::size_t>(i) * d;
        double wx = w[d];
        for (int j = 0; j < d; ++j) wx += w[j] * xi[j];
        double g = label[i] * wx - 1.0;
        double pg = g;
        if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
        else if (alpha[i] >= c_) pg = std::max(g, 0.0);
        max_pg = std::max(max_pg, std::abs(pg));
        if (std::abs(pg) > 1e-12) {
          double old = alpha[i];
          double next = std::clamp(old - g / qii[i], 0.0, c_);
          double delta = (next - old) * label[i];
          if (delta != 0.0) {
            alpha[i] = next;
            for (int j = 0; j < d; ++j) w[j] += delta * xi[j];
            w[d] += delta;
          }
        }
      }
      if (max_pg < tol_) break;
    }
    std::copy(w.begin(), w.end(),
              weights_.data() + static_cast<std::size_t>(cls) * (d + 1));
  }
}

std::vector<int> LinearSvc::predict(const Tensor& x) const {
  if (n_classes_ == 0) throw std::logic_error("svc: predict before fit");
  const int n = x.dim(0), d = x.dim(1);
  if (d + 1 != weights_.dim(1)) throw std::invalid_argument("svc: feature dim mismatch");
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * d;
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int cls = 0; cls < n_classes_; ++cls) {
      const double* w = weights_.data() + static_cast<std::size_t>(cls) * (d + 1);
      double s = w[d];
      for (int j = 0; j < d; ++j) s += w[j] * xi[j];
      if (s > best) {
        best = s;
        arg = cls;
      }
    }
    out[i] = arg;
  }
  return out;
}

// ---------------------------------------------------------- selection

Selector Selector::parse(const std::string& s) {
  Selector sel;
  if (s == "c") {
    sel.kind = Kind::consistent;
  } else if (s == "cs1") {
    sel.kind = Kind::consistent_plus_first;
  } else if (s == "concat") {
    sel.kind = Kind::concat_all;
  } else if (s.size() >= 2 && s[0] == 's') {
    sel.kind = Kind::specific;
    sel.view = std::stoi(s.substr(1));
    if (sel.view < 1) throw std::invalid_argument("selector: bad view index in " + s);
  } else {
    throw std::invalid_argument("unknown selector: " + s);
  }
  return sel;
}

std::string Selector::to_string() const {
  switch (kind) {
    case Kind::consistent: return "c";
    case Kind::specific: return "s" + std::to_string(view);
    case Kind::consistent_plus_first: return "cs1";
    case Kind::concat_all: return "concat";
  }
  return "?";
}

namespace {

Tensor hconcat(const std::vector<const Tensor*>& parts) {
  int n = parts[0]->dim(0);
  int d = 0;
  for (auto* p : parts) d += p->dim(1);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * d;
    for (auto* p : parts) {
      int pd = p->dim(1);
      const double* src = p->data() + static_cast<std::size_t>(i) * pd;
      std::copy(src, src + pd, row);
      row += pd;
    }
  }
  return out;
}

}  // namespace

Tensor select_representation(const latents::LatentSet& set, const Selector& sel) {
  switch (sel.kind) {
    case Selector::Kind::consistent:
      return set.c;
    case Selector::Kind::specific: {
      if (sel.view > set.n_views()) {
        throw std::invalid_argument("selector: view " + std::to_string(sel.view) +
                                    " not present");
      }
      return set.s[sel.view - 1];
    }
    case Selector::Kind::consistent_plus_first: {
      if (set.n_views() < 1) throw std::invalid_argument("selector: no specific codes");
      return hconcat({&set.c, &set.s[0]});
    }
    case Selector::Kind::concat_all: {
      std::vector<const Tensor*> parts{&set.c};
      for (const auto& s : set.s) parts.push_back(&s);
      return hconcat(parts);
    }
  }
  throw std::logic_error("selector: unreachable");
}

// -------------------------------------------------------------- cluster

std::map<std::string, MetricsReport> cluster_eval(const latents::LatentSet& set,
                                                  const Selector& sel, int n_classes,
                                                  int runs, std::uint64_t seed) {
  if (set.labels.empty()) throw std::invalid_argument("cluster_eval: labels required");
  Tensor x = select_representation(set, sel);
  MetricsReport acc, nmi_rep;
  acc.task = nmi_rep.task = "clustering";
  acc.metric = "ACC_clu";
  nmi_rep.metric = "NMI";
  for (int r = 0; r < runs; ++r) {
    auto km = kmeans(x, n_classes, derive_seed(seed, {0x6b6dULL, static_cast<std::uint64_t>(r)}));
    acc.per_run.push_back(hungarian_accuracy(set.labels, km.labels));
    nmi_rep.per_run.push_back(nmi(set.labels, km.labels));
  }
  acc.finalize();
  nmi_rep.finalize();
  return {{"ACC_clu", acc}, {"NMI", nmi_rep}};
}

// ------------------------------------------------------------- classify

std::map<std::string, MetricsReport> classify_eval(const latents::LatentSet& set,
                                                   const Selector& sel,
                                                   const std::vector<int>& train_idx,
                                                   const std::vector<int>& test_idx,
                                                   int runs, std::uint64_t seed,
                                                   double svc_c) {
  if (set.labels.empty()) throw std::invalid_argument("classify_eval: labels required");
  Tensor x = select_representation(set, sel);
  const int d = x.dim(1);

  int n_classes = 0;
  for (int l : set.labels) n_classes = std::max(n_classes, l + 1);
  {
    std::set<int> train_classes;
    for (int i : train_idx) train_classes.insert(set.labels[i]);
    for (int cls = 0; cls < n_classes; ++cls) {
      if (!train_classes.count(cls)) {
        throw std::invalid_argument("classify_eval: class " + std::to_string(cls) +
                                    " absent from train split");
      }
    }
  }

  auto gather = [&](const std::vector<int>& idx, Tensor& xs, std::vector<int>& ys) {
    xs = Tensor({static_cast<int>(idx.size()), d});
    ys.clear();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = x.data() + static_cast<std::size_t>(idx[i]) * d;
      std::copy(src, src + d, xs.data() + i * d);
      ys.push_back(set.labels[idx[i]]);
    }
  };
  Tensor xtr, xte;
  std::vector<int> ytr, yte;
  gather(train_idx, xtr, ytr);
  gather(test_idx, xte, yte);

  // standardize with train statistics
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (int i = 0; i < xtr.dim(0); ++i) {
    for (int j = 0; j < d; ++j) mu[j] += xtr[static_cast<std::size_t>(i) * d + j];
  }
  for (int j = 0; j < d; ++j) mu[j] /= std::max(1, xtr.dim(0));
  for (int i = 0; i < xtr.dim(0); ++i) {
    for (int j = 0; j < d; ++j) {
      double v = xtr[static_cast<std::size_t>(i) * d + j] - mu[j];
      sd[j] += v * v;
    }
  }
  for (int j = 0; j < d; ++j) sd[j] = std::max(1e-8, std::sqrt(sd[j] / std::max(1, xtr.dim(0))));
  auto standardize = [&](Tensor& t) {
    for (int i = 0; i < t.dim(0); ++i) {
      for (int j = 0; j < d; ++j) {
        double& v = t[static_cast<std::size_t>(i) * d + j];
        v = (v - mu[j]) / sd[j];
      }
    }
  };
  standardize(xtr);
  standardize(xte);

  MetricsReport acc, f1;
  acc.task = f1.task = "classification";
  acc.metric = "ACC_cls";
  f1.metric = "F-score";
  for (int r = 0; r < runs; ++r) {
    LinearSvc svc(svc_c);
    svc.fit(xtr, ytr, n_classes, derive_seed(seed, {0x636c66ULL, static_cast<std::uint64_t>(r)}));
    auto pred = svc.predict(xte);
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == yte[i];
    acc.per_run.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));

    double fsum = 0.0;
    for (int cls = 0; cls < n_classes; ++cls) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        bool is_pos = yte[i] == cls, said_pos = pred[i] == cls;
        tp += is_pos && said_pos;
        fp += !is_pos && said_pos;
        fn += is_pos && !said_pos;
      }
      fsum += f_score(tp, fp, fn);
    }
    f1.per_run.push_back(fsum / static_cast<double>(n_classes));
  }
  acc.finalize();
  f1.finalize();
  return {{"ACC_cls", acc}, {"F-score", f1}};
}

}  // namespace mrdd::eval
