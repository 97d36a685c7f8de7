#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "dblogit/common.hpp"
#include "dblogit/score.hpp"

namespace dblogit::detail {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1, right = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(RowView x) const {
    int id = 0;
    while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
      id = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(id)].value;
  }
};

struct TreeOptions {
  int max_depth = 64;
  int min_leaf = 5;  // counted with bootstrap multiplicity
  int mtry = 0;      // 0 or >= p means all features in natural order
};

// Exact greedy regression trees over a fixed covariate matrix. Features are
// sorted once at construction; nodes partition the sorted index lists, so
// fitting many trees (boosting rounds, forest members) avoids per-node sorts.
// Bootstrap resampling enters as per-row multiplicities.
class TreeBuilder {
 public:
  explicit TreeBuilder(const Eigen::MatrixXd& x) : x_(x) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    sorted_.resize(static_cast<std::size_t>(p));
    for (Eigen::Index f = 0; f < p; ++f) {
      auto& idx = sorted_[static_cast<std::size_t>(f)];
      idx.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double va = x(a, f), vb = x(b, f);
        return va < vb || (va == vb && a < b);
      });
    }
  }

  // Leaf value is sum(count*grad)/sum(count*hess); hess == nullptr means unit
  // hessians. counts empty means every row once; rows with count 0 are left
  // out of the tree entirely.
  Tree fit(const Eigen::VectorXd& grad, const Eigen::VectorXd* hess,
           const std::vector<int>& counts, const TreeOptions& opt, Rng* rng) const {
    const Eigen::Index p = x_.cols();
    const bool sample_features = rng != nullptr && opt.mtry > 0 && opt.mtry < p;

    using Lists = std::vector<std::vector<int>>;
    Lists root(static_cast<std::size_t>(p));
    for (Eigen::Index f = 0; f < p; ++f) {
      const auto& src = sorted_[static_cast<std::size_t>(f)];
      auto& dst = root[static_cast<std::size_t>(f)];
      if (counts.empty()) {
        dst = src;
      } else {
        dst.reserve(src.size());
        for (const int r : src)
          if (counts[static_cast<std::size_t>(r)] > 0) dst.push_back(r);
      }
    }

    auto cnt = [&](int r) {
      return counts.empty() ? 1 : counts[static_cast<std::size_t>(r)];
    };
    auto hval = [&](int r) { return hess ? (*hess)[r] : 1.0; };

    Tree tree;
    struct Item {
      Lists lists;
      int node = 0;
      int depth = 0;
    };
    std::vector<Item> stack;
    tree.nodes.push_back(TreeNode{});
    stack.push_back({std::move(root), 0, 0});

    std::vector<int> feature_pool;

    while (!stack.empty()) {
      Item item = std::move(stack.back());
      stack.pop_back();
      const auto& any = item.lists[0];

      double g_tot = 0.0, h_tot = 0.0;
      long c_tot = 0;
      for (const int r : any) {
        const int c = cnt(r);
        g_tot += c * grad[r];
        h_tot += c * hval(r);
        c_tot += c;
      }
      const double leaf = g_tot / std::max(h_tot, 1e-12);

      if (item.depth >= opt.max_depth || c_tot < 2 * opt.min_leaf) {
        tree.nodes[static_cast<std::size_t>(item.node)].value = leaf;
        continue;
      }

      feature_pool.clear();
      if (sample_features) {
        feature_pool.resize(static_cast<std::size_t>(p));
        for (Eigen::Index j = 0; j < p; ++j)
          feature_pool[static_cast<std::size_t>(j)] = static_cast<int>(j);
        for (int t = 0; t < opt.mtry; ++t) {
          std::uniform_int_distribution<int> pick(t, static_cast<int>(p) - 1);
          std::swap(feature_pool[static_cast<std::size_t>(t)],
                    feature_pool[static_cast<std::size_t>(pick(*rng))]);
        }
        feature_pool.resize(static_cast<std::size_t>(opt.mtry));
      } else {
        for (Eigen::Index j = 0; j < p; ++j)
          feature_pool.push_back(static_cast<int>(j));
      }

      const double base_gain = g_tot * g_tot / std::max(h_tot, 1e-12);
      double best_gain = base_gain;
      int best_feature = -1;
      double best_threshold = 0.0;
      bool improved = false;

      for (const int f : feature_pool) {
        const auto& idx = item.lists[static_cast<std::size_t>(f)];
        double gl = 0.0, hl = 0.0;
        long cl = 0;
        for (std::size_t t = 0; t + 1 < idx.size(); ++t) {
          const int r = idx[t];
          const int c = cnt(r);
          gl += c * grad[r];
          hl += c * hval(r);
          cl += c;
          const double v = x_(r, f);
          const double v_next = x_(idx[t + 1], f);
          if (v == v_next) continue;
          if (cl < opt.min_leaf || c_tot - cl < opt.min_leaf) continue;
          const double gr = g_tot - gl, hr = h_tot - hl;
          const double gain =
              gl * gl / std::max(hl, 1e-12) + gr * gr / std::max(hr, 1e-12);
          if (gain > best_gain + 1e-12) {
            best_gain = gain;
            best_feature = f;
            best_threshold = 0.5 * (v + v_next);
            improved = true;
          }
        }
      }

      if (!improved) {
        tree.nodes[static_cast<std::size_t>(item.node)].value = leaf;
        continue;
      }

      Lists left(static_cast<std::size_t>(p)), right(static_cast<std::size_t>(p));
      for (Eigen::Index f = 0; f < p; ++f) {
        for (const int r : item.lists[static_cast<std::size_t>(f)])
          (x_(r, best_feature) <= best_threshold ? left : right)[static_cast<std::size_t>(f)]
              .push_back(r);
      }

      const int left_id = static_cast<int>(tree.nodes.size());
      const int right_id = left_id + 1;
      {
        TreeNode& node = tree.nodes[static_cast<std::size_t>(item.node)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = left_id;
        node.right = right_id;
      }
      const int depth = item.depth;
      tree.nodes.push_back(TreeNode{});
      tree.nodes.push_back(TreeNode{});
      stack.push_back({std::move(right), right_id, depth + 1});
      stack.push_back({std::move(left), left_id, depth + 1});
    }
    return tree;
  }

 private:
  const Eigen::MatrixXd& x_;
  std::vector<std::vector<int>> sorted_;
};

// Single-shot convenience wrapper over TreeBuilder.
inline Tree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& grad,
                     const Eigen::VectorXd* hess, const TreeOptions& opt,
                     Rng* rng) {
  return TreeBuilder(x).fit(grad, hess, {}, opt, rng);
}

}  // namespace dblogit::detail
