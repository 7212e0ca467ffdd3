#include "vera/dataset.hpp"

#include "vera/image.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace vera {

DatasetIndex DatasetIndex::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset index: " + path);
  const nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw DataError("dataset index must be a JSON array");
  DatasetIndex idx;
  for (const auto& item : j) {
    Entry e;
    e.image = item.at("image").get<std::string>();
    e.labels = item.at("labels").get<std::string>();
    e.identity = item.at("identity").get<std::string>();
    if (item.contains("pair")) e.pair = item.at("pair").get<std::string>();
    for (const auto& [key, value] : item.items()) {
      (void)value;
      if (key != "image" && key != "labels" && key != "identity" && key != "pair")
        throw DataError("dataset index: unknown key '" + key + "'");
    }
    idx.entries.push_back(std::move(e));
  }
  idx.validate();
  return idx;
}

void DatasetIndex::validate() const {
  std::map<std::string, std::vector<int>> by_pair;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    if (e.image.empty() || e.labels.empty() || e.identity.empty())
      throw DataError("dataset index: entry " + std::to_string(i) + " incomplete");
    if (!e.pair.empty()) by_pair[e.pair].push_back(static_cast<int>(i));
  }
  for (const auto& [pair_id, members] : by_pair) {
    if (members.size() != 2)
      throw DataError("dataset index: pair '" + pair_id + "' must have exactly two entries");
    if (entries[static_cast<std::size_t>(members[0])].identity !=
        entries[static_cast<std::size_t>(members[1])].identity)
      throw DataError("dataset index: pair '" + pair_id + "' mixes identities");
  }
}

std::map<std::string, std::pair<int, int>> DatasetIndex::pairs() const {
  std::map<std::string, std::vector<int>> by_pair;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (!entries[i].pair.empty()) by_pair[entries[i].pair].push_back(static_cast<int>(i));
  std::map<std::string, std::pair<int, int>> out;
  for (const auto& [pair_id, members] : by_pair) out[pair_id] = {members[0], members[1]};
  return out;
}

LabelCollapseTable load_collapse_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open collapse table: " + path);
  const nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("collapse table must be a JSON object");
  LabelCollapseTable table;
  for (const auto& [key, value] : j.items()) {
    int source = 0;
    try {
      source = std::stoi(key);
    } catch (...) {
      throw DataError("collapse table: non-integer source label '" + key + "'");
    }
    table[source] = value.get<std::string>();
  }
  return table;
}

LabelMapResult load_label_map(const std::string& path, const SemanticLayout& layout,
                              const LabelCollapseTable* table) {
  auto [raw, shape] = read_png_labels(path);
  LabelMapResult out;
  out.labels.height = shape.first;
  out.labels.width = shape.second;
  out.labels.labels.resize(raw.size());

  const int background = layout.contains("background") ? layout.index_of("background") : 0;
  std::set<int> out_of_set;
  std::set<std::string> unmappable;
  for (Eigen::Index p = 0; p < raw.size(); ++p) {
    const int v = raw[p];
    if (table) {
      const auto it = table->find(v);
      if (it == table->end()) {
        out_of_set.insert(v);
        out.labels.labels[p] = background;
        continue;
      }
      if (!layout.contains(it->second)) {
        unmappable.insert(it->second + " (source value " + std::to_string(v) + ")");
        continue;
      }
      out.labels.labels[p] = layout.index_of(it->second);
    } else {
      if (v < 0 || v >= layout.size()) {
        out_of_set.insert(v);
        out.labels.labels[p] = background;
        continue;
      }
      out.labels.labels[p] = v;
    }
  }
  if (!unmappable.empty()) {
    std::ostringstream oss;
    oss << "label map " << path << " has values the layout cannot hold:";
    for (const std::string& s : unmappable) oss << " " << s;
    throw DataError(oss.str());
  }
  for (int v : out_of_set)
    out.warnings.push_back("label value " + std::to_string(v) + " outside the table, mapped to background");
  return out;
}

}  // namespace vera
