#pragma once

// Histogram CART used by the forest and boosting learners.

#include "tc/core.hpp"

#include <cstdint>
#include <vector>

namespace tc {

/// Per-column cut points. A value x falls in bin b = #{edges < x}, so
/// "x <= edges[b]" sends it left of a split after bin b.
struct FeatureBins {
  std::vector<std::vector<double>> edges;
  std::vector<std::vector<std::uint8_t>> codes;  // codes[col][row]

  static FeatureBins build(const MatrixXd& x, int max_bins = 64);
  int bin_count(Index col) const { return static_cast<int>(edges[col].size()) + 1; }
};

/// Rows with identical bin codes are interchangeable for tree growing.
/// `pattern_of[row]` indexes the distinct code vectors held in `bins`.
struct RowPatterns {
  FeatureBins bins;
  std::vector<int> pattern_of;
  int count = 0;

  static RowPatterns build(const FeatureBins& full);
};

/// Distinct rows of `x` and, for every row, the index of its distinct row.
struct DistinctRows {
  MatrixXd rows;
  std::vector<Index> index;

  static DistinctRows build(const MatrixXd& x);
};

struct TreeParams {
  int max_depth = 8;
  int min_leaf = 5;
  int mtry = 0;        // 0 uses every column
  double lambda = 0.0; // leaf value = sum(g) / (sum(h) + lambda)
};

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int split_bin = 0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  /// Fits on `rows` using per-row gradient `g` and hessian `h`. With h == 1
  /// this is variance-reduction CART on g. `multiplicity`, when given, is the
  /// number of copies each row stands for (g and h already scaled by it) and
  /// is what min_leaf counts.
  static RegressionTree fit(const FeatureBins& bins, const std::vector<int>& rows, const VectorXd& g,
                            const VectorXd& h, const TreeParams& params, Rng* rng,
                            const std::vector<int>* multiplicity = nullptr);

  double predict_row(const MatrixXd& x, Index row) const;
  /// Leaf value reached by row `row` of the binned data the tree was grown on.
  double leaf_value(const FeatureBins& bins, int row) const;
  /// out[i] += scale * prediction for every row of x.
  void accumulate(const MatrixXd& x, double scale, VectorXd& out) const;
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

}  // namespace tc
