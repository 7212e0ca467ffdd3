#pragma once

#include "vera/common.hpp"
#include "vera/inversion.hpp"
#include "vera/latent.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vera {

/// Index of images with optional pairing metadata. Paired entries share both
/// the pair id and the identity id; each pair has exactly two members.
struct DatasetIndex {
  struct Entry {
    std::string image;
    std::string labels;
    std::string identity;
    std::string pair;  // empty for unpaired entries
  };
  std::vector<Entry> entries;

  static DatasetIndex load(const std::string& path);
  void validate() const;
  /// Pair id -> the two entry indices, in file order.
  std::map<std::string, std::pair<int, int>> pairs() const;
};

/// Source-label-value -> component-name collapse table (e.g. the 19-class
/// CelebAMask labels onto the 13-component layout). Shipped as editable data.
using LabelCollapseTable = std::map<int, std::string>;

LabelCollapseTable load_collapse_table(const std::string& path);

struct LabelMapResult {
  TargetLabels labels;
  std::vector<std::string> warnings;  // out-of-set values mapped to background
};

/// Reads an indexed PNG and remaps its values into the layout. Without a
/// table, values must already be valid layout indices. Values missing from
/// the table fall back to "background" with a warning; table names absent
/// from the layout are an error listing the offending values.
LabelMapResult load_label_map(const std::string& path, const SemanticLayout& layout,
                              const LabelCollapseTable* table = nullptr);

}  // namespace vera
