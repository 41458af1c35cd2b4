#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "refinery/errors.hpp"
#include "refinery/label_vector.hpp"
#include "refinery/serialize.hpp"

// Rooted category hierarchy and Wu-Palmer similarity:
//   WP(a,b) = 2 * depth(lcs(a,b)) / (depth(a) + depth(b)),
// with depth(root) = 1 so WP is well-defined and positive everywhere.

namespace refinery {

class TaxonomyTree {
public:
  struct Node {
    std::string name;
    int parent = -1;
    std::vector<int> children;
  };

  static TaxonomyTree from_edges(
      const std::vector<std::pair<std::string, std::string>>& child_parent) {
    TaxonomyTree t;
    auto intern = [&t](const std::string& name) {
      auto it = t.by_name_.find(name);
      if (it != t.by_name_.end()) return it->second;
      const int id = static_cast<int>(t.nodes_.size());
      t.nodes_.push_back({name, -1, {}});
      t.by_name_.emplace(name, id);
      return id;
    };
    for (const auto& [child, parent] : child_parent) {
      const int c = intern(child);
      const int p = intern(parent);
      if (t.nodes_[c].parent != -1)
        throw ConfigError("taxonomy: node '" + child + "' has two parents");
      if (c == p) throw ConfigError("taxonomy: self-loop at '" + child + "'");
      t.nodes_[c].parent = p;
      t.nodes_[p].children.push_back(c);
    }
    t.finish();
    return t;
  }

  /// Tree file: UTF-8 lines `<child-name>\t<parent-name>`; the root is the
  /// unique name that never appears as a child.
  static TaxonomyTree load(const std::string& path) {
    std::istringstream lines(read_text_file(path));
    std::vector<std::pair<std::string, std::string>> edges;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
        throw IoError(path + ":" + std::to_string(lineno) +
                      ": expected <child-name>\\t<parent-name>");
      edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    if (edges.empty()) throw IoError(path + ": empty taxonomy file");
    try {
      return from_edges(edges);
    } catch (const ConfigError& e) {
      throw IoError(path + ": " + e.what());
    }
  }

  std::size_t node_count() const { return nodes_.size(); }
  int root() const { return root_; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  int find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
  }

  int require(const std::string& name) const {
    const int id = find(name);
    if (id < 0) throw InvalidInputError("taxonomy: unknown node '" + name + "'");
    return id;
  }

  bool is_leaf(int id) const { return node(id).children.empty(); }

  /// Nodes on the root->node path, inclusive; depth(root) = 1.
  int depth(int id) const {
    check(id);
    return depth_[static_cast<std::size_t>(id)];
  }

  /// Deepest common ancestor.
  int lcs(int a, int b) const {
    check(a);
    check(b);
    while (depth_[static_cast<std::size_t>(a)] > depth_[static_cast<std::size_t>(b)])
      a = nodes_[static_cast<std::size_t>(a)].parent;
    while (depth_[static_cast<std::size_t>(b)] > depth_[static_cast<std::size_t>(a)])
      b = nodes_[static_cast<std::size_t>(b)].parent;
    while (a != b) {
      a = nodes_[static_cast<std::size_t>(a)].parent;
      b = nodes_[static_cast<std::size_t>(b)].parent;
    }
    return a;
  }

  double wu_palmer(int a, int b) const {
    const int anc = lcs(a, b);
    return 2.0 * depth(anc) / (static_cast<double>(depth(a)) + depth(b));
  }

  double wu_palmer(const std::string& a, const std::string& b) const {
    return wu_palmer(require(a), require(b));
  }

  /// Leaf names in name order; handy when no explicit binding file is given.
  std::vector<std::string> leaf_names() const {
    std::vector<std::string> names;
    for (const Node& n : nodes_)
      if (n.children.empty()) names.push_back(n.name);
    std::sort(names.begin(), names.end());
    return names;
  }

private:
  void check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw InvalidInputError("taxonomy: node id out of range");
  }

  void finish() {
    root_ = -1;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].parent == -1) {
        if (root_ != -1)
          throw ConfigError("taxonomy: multiple roots ('" +
                            nodes_[static_cast<std::size_t>(root_)].name +
                            "', '" + nodes_[i].name + "')");
        root_ = static_cast<int>(i);
      }
    }
    if (root_ == -1) throw ConfigError("taxonomy: no root (cycle)");
    depth_.assign(nodes_.size(), 0);
    std::vector<int> stack{root_};
    depth_[static_cast<std::size_t>(root_)] = 1;
    std::size_t visited = 0;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      ++visited;
      for (int c : nodes_[static_cast<std::size_t>(id)].children) {
        depth_[static_cast<std::size_t>(c)] =
            depth_[static_cast<std::size_t>(id)] + 1;
        stack.push_back(c);
      }
    }
    if (visited != nodes_.size())
      throw ConfigError("taxonomy: graph contains a cycle or unreachable nodes");
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> by_name_;
  std::vector<int> depth_;
  int root_ = -1;
};

/// Leaf binding file: `<class-index>\t<node-name>` lines. Every class must
/// bind to a distinct leaf.
inline std::vector<int> load_leaf_bindings(const std::string& path,
                                           const TaxonomyTree& tree) {
  std::istringstream lines(read_text_file(path));
  std::unordered_map<std::size_t, int> by_index;
  std::string line;
  std::size_t lineno = 0, max_index = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected <class-index>\\t<node-name>");
    std::size_t idx = 0;
    try {
      idx = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed index");
    }
    const std::string name = line.substr(tab + 1);
    const int node = tree.find(name);
    if (node < 0)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": category '" + name + "' missing from tree");
    if (!tree.is_leaf(node))
      throw ConfigError(path + ":" + std::to_string(lineno) + ": category '" +
                        name + "' is not a leaf");
    by_index[idx] = node;
    max_index = std::max(max_index, idx);
  }
  if (by_index.empty()) throw IoError(path + ": empty leaf binding file");
  std::vector<int> binding(max_index + 1, -1);
  for (auto& [idx, node] : by_index) binding[idx] = node;
  for (std::size_t i = 0; i < binding.size(); ++i)
    if (binding[i] < 0)
      throw ConfigError(path + ": missing class index " + std::to_string(i));
  return binding;
}

enum class TaxonomyNormalization { Sum, Softmax };

/// Per-category label table: row c is the Wu-Palmer similarity of category c
/// against every category, normalized onto the simplex. Sum normalization is
/// parameter-free and keeps the row argmax at the true category; a softmax
/// with temperature is available as the alternative.
inline std::vector<LabelVector> category_taxonomy_labels(
    const TaxonomyTree& tree, const std::vector<int>& class_leaves,
    TaxonomyNormalization norm = TaxonomyNormalization::Sum,
    double temperature = 1.0) {
  const std::size_t k = class_leaves.size();
  if (k == 0) throw ConfigError("category_taxonomy_labels: no categories");
  for (int node : class_leaves)
    if (node < 0 || !tree.is_leaf(node))
      throw ConfigError("category_taxonomy_labels: every category must bind "
                        "to a leaf of the tree");
  std::vector<LabelVector> table(k);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> sim(k);
    for (std::size_t b = 0; b < k; ++b)
      sim[b] = tree.wu_palmer(class_leaves[a], class_leaves[b]);
    std::vector<float> row(k);
    if (norm == TaxonomyNormalization::Sum) {
      double total = 0.0;
      for (double v : sim) total += v;
      for (std::size_t b = 0; b < k; ++b)
        row[b] = static_cast<float>(sim[b] / total);
    } else {
      double mx = sim[0];
      for (double v : sim) mx = std::max(mx, v);
      double total = 0.0;
      std::vector<double> e(k);
      for (std::size_t b = 0; b < k; ++b) {
        e[b] = std::exp((sim[b] - mx) / temperature);
        total += e[b];
      }
      for (std::size_t b = 0; b < k; ++b)
        row[b] = static_cast<float>(e[b] / total);
    }
    table[a] = LabelVector(std::move(row));
  }
  return table;
}

} // namespace refinery
