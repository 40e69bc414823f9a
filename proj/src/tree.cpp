#include "tc/tree.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace tc {

FeatureBins FeatureBins::build(const MatrixXd& x, int max_bins) {
  max_bins = std::clamp(max_bins, 2, 255);
  FeatureBins bins;
  bins.edges.resize(x.cols());
  bins.codes.resize(x.cols());
  const Index n = x.rows();
  std::vector<double> sorted(static_cast<std::size_t>(n));
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < n; ++i) sorted[i] = x(i, j);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    auto& edges = bins.edges[j];
    if (static_cast<int>(uniq.size()) <= max_bins) {
      for (std::size_t k = 1; k < uniq.size(); ++k) edges.push_back(0.5 * (uniq[k - 1] + uniq[k]));
    } else {
      for (int k = 1; k < max_bins; ++k) {
        const auto pos = static_cast<std::size_t>((static_cast<double>(k) / max_bins) * n);
        edges.push_back(sorted[std::min<std::size_t>(pos, n - 1)]);
      }
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
      // The largest value must stay to the right of every edge.
      while (!edges.empty() && edges.back() >= sorted.back()) edges.pop_back();
    }

    auto& codes = bins.codes[j];
    codes.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      codes[i] = static_cast<std::uint8_t>(std::lower_bound(edges.begin(), edges.end(), x(i, j)) - edges.begin());
    }
  }
  return bins;
}

RowPatterns RowPatterns::build(const FeatureBins& full) {
  RowPatterns out;
  const std::size_t p = full.codes.size();
  const std::size_t n = p == 0 ? 0 : full.codes[0].size();
  out.bins.edges = full.edges;
  out.bins.codes.resize(p);
  out.pattern_of.resize(n);
  std::map<std::vector<std::uint8_t>, int> seen;
  std::vector<std::uint8_t> key(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) key[j] = full.codes[j][i];
    auto [it, inserted] = seen.try_emplace(key, out.count);
    if (inserted) {
      for (std::size_t j = 0; j < p; ++j) out.bins.codes[j].push_back(key[j]);
      ++out.count;
    }
    out.pattern_of[i] = it->second;
  }
  return out;
}

DistinctRows DistinctRows::build(const MatrixXd& x) {
  const Index n = x.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index j = 0; j < x.cols(); ++j) {
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  DistinctRows out;
  out.index.resize(static_cast<std::size_t>(n));
  std::vector<Index> firsts;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k == 0 || less(order[k - 1], order[k])) firsts.push_back(order[k]);
    out.index[order[k]] = static_cast<Index>(firsts.size()) - 1;
  }
  out.rows = x(firsts, Eigen::all);
  return out;
}

RegressionTree RegressionTree::fit(const FeatureBins& bins, const std::vector<int>& rows_in, const VectorXd& g,
                                   const VectorXd& h, const TreeParams& params, Rng* rng,
                                   const std::vector<int>* multiplicity) {
  RegressionTree tree;
  std::vector<int> rows = rows_in;
  const int p = static_cast<int>(bins.edges.size());
  const int mtry = (params.mtry <= 0 || params.mtry >= p) ? p : params.mtry;
  const double lambda = params.lambda;

  std::vector<int> features(static_cast<std::size_t>(p));
  std::iota(features.begin(), features.end(), 0);
  std::vector<double> hist_g(256), hist_h(256);
  std::vector<int> hist_c(256);

  struct Task {
    int node;
    int begin;
    int end;
    int depth;
  };
  tree.nodes_.emplace_back();
  std::vector<Task> stack{{0, 0, static_cast<int>(rows.size()), 0}};

  while (!stack.empty()) {
    const Task t = stack.back();
    stack.pop_back();

    double sg = 0.0, sh = 0.0;
    int count = 0;
    for (int k = t.begin; k < t.end; ++k) {
      sg += g[rows[k]];
      sh += h[rows[k]];
      count += multiplicity ? (*multiplicity)[rows[k]] : 1;
    }
    tree.nodes_[t.node].value = sh + lambda > 0 ? sg / (sh + lambda) : 0.0;
    if (t.depth >= params.max_depth || count < 2 * params.min_leaf) continue;

    if (mtry < p) {
      for (int k = 0; k < mtry; ++k) {
        std::uniform_int_distribution<int> pick(k, p - 1);
        std::swap(features[k], features[pick(*rng)]);
      }
    }

    const double parent_score = sg * sg / (sh + lambda);
    double best_gain = 1e-12;
    int best_feature = -1;
    int best_bin = -1;
    for (int fi = 0; fi < mtry; ++fi) {
      const int f = features[fi];
      const int nb = bins.bin_count(f);
      if (nb < 2) continue;
      std::fill_n(hist_g.begin(), nb, 0.0);
      std::fill_n(hist_h.begin(), nb, 0.0);
      std::fill_n(hist_c.begin(), nb, 0);
      const auto& codes = bins.codes[f];
      for (int k = t.begin; k < t.end; ++k) {
        const int r = rows[k];
        const int b = codes[r];
        hist_g[b] += g[r];
        hist_h[b] += h[r];
        hist_c[b] += multiplicity ? (*multiplicity)[r] : 1;
      }
      double gl = 0.0, hl = 0.0;
      int cl = 0;
      for (int b = 0; b < nb - 1; ++b) {
        gl += hist_g[b];
        hl += hist_h[b];
        cl += hist_c[b];
        if (cl < params.min_leaf) continue;
        if (count - cl < params.min_leaf) break;
        const double gr = sg - gl, hr = sh - hl;
        if (hl + lambda <= 0 || hr + lambda <= 0) continue;
        const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_bin = b;
        }
      }
    }
    if (best_feature < 0) continue;

    const auto& codes = bins.codes[best_feature];
    auto mid = std::partition(rows.begin() + t.begin, rows.begin() + t.end,
                              [&](int r) { return codes[r] <= best_bin; });
    const int split = static_cast<int>(mid - rows.begin());

    const int left = static_cast<int>(tree.nodes_.size());
    tree.nodes_.emplace_back();
    tree.nodes_.emplace_back();
    Node& node = tree.nodes_[t.node];
    node.feature = best_feature;
    node.threshold = bins.edges[best_feature][best_bin];
    node.split_bin = best_bin;
    node.left = left;
    node.right = left + 1;
    stack.push_back({left + 1, split, t.end, t.depth + 1});
    stack.push_back({left, t.begin, split, t.depth + 1});
  }
  return tree;
}

double RegressionTree::predict_row(const MatrixXd& x, Index row) const {
  int k = 0;
  while (nodes_[k].feature >= 0) {
    const Node& node = nodes_[k];
    k = x(row, node.feature) <= node.threshold ? node.left : node.right;
  }
  return nodes_[k].value;
}

double RegressionTree::leaf_value(const FeatureBins& bins, int row) const {
  int k = 0;
  while (nodes_[k].feature >= 0) {
    const Node& node = nodes_[k];
    k = bins.codes[node.feature][row] <= node.split_bin ? node.left : node.right;
  }
  return nodes_[k].value;
}

void RegressionTree::accumulate(const MatrixXd& x, double scale, VectorXd& out) const {
  const Node* nodes = nodes_.data();
  for (Index i = 0; i < x.rows(); ++i) {
    int k = 0;
    while (nodes[k].feature >= 0) k = x(i, nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    out[i] += scale * nodes[k].value;
  }
}

}  // namespace tc
