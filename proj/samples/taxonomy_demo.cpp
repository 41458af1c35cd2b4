// Wu-Palmer similarities and the normalized per-category label table for
// the shipped shape taxonomy.

#include <iostream>

#include "refinery/synth.hpp"
#include "refinery/taxonomy.hpp"

using namespace refinery;

int main() {
  const TaxonomyTree tree = synth_taxonomy();

  std::cout << "WP(circle_red, circle_green) = "
            << tree.wu_palmer("circle_red", "circle_green") << "\n";
  std::cout << "WP(circle_red, square_red)   = "
            << tree.wu_palmer("circle_red", "square_red") << "\n";
  std::cout << "WP(circle_red, circle_red)   = "
            << tree.wu_palmer("circle_red", "circle_red") << "\n\n";

  std::vector<int> leaves;
  for (const std::string& name : synth_class_names())
    leaves.push_back(tree.require(name));
  const auto table = category_taxonomy_labels(tree, leaves);

  std::cout << "normalized label rows:\n";
  const auto names = synth_class_names();
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::cout << names[i] << ":";
    for (std::size_t j = 0; j < table[i].size(); ++j)
      std::cout << " " << table[i][j];
    std::cout << "\n";
  }
  return 0;
}
