#include "taxpref/taxonomy.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace taxpref {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& node, const std::set<std::string>& allowed,
                         const std::string& path) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw TaxonomyError("unknown key '" + it.key() + "' at " + path);
    }
  }
}

std::string require_string(const json& node, const char* key, const std::string& path) {
  if (!node.contains(key) || !node[key].is_string() || node[key].get<std::string>().empty()) {
    throw TaxonomyError(std::string("missing or empty '") + key + "' at " + path);
  }
  return node[key].get<std::string>();
}

}  // namespace

std::size_t Taxonomy::subject_count_for_discipline(const std::string& discipline_id) const {
  std::size_t n = 0;
  for (const Subject& s : subjects) {
    if (s.discipline_id == discipline_id) ++n;
  }
  return n;
}

bool Taxonomy::discipline_is_empty(const std::string& discipline_id) const {
  return subject_count_for_discipline(discipline_id) == 0;
}

Taxonomy parse_taxonomy(const std::string& source) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw TaxonomyError(std::string("malformed taxonomy document: ") + e.what());
  }
  if (!doc.is_object()) throw TaxonomyError("taxonomy document must be a JSON object");
  reject_unknown_keys(doc, {"disciplines", "categories", "subjects"}, "$");
  for (const char* key : {"disciplines", "categories", "subjects"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw TaxonomyError(std::string("missing array '") + key + "'");
    }
  }
  if (doc["disciplines"].empty()) throw TaxonomyError("no disciplines");

  Taxonomy t;
  std::unordered_set<std::string> seen_ids;
  auto check_unique_id = [&](const std::string& id, const std::string& path) {
    if (!seen_ids.insert(id).second) {
      throw TaxonomyError("duplicate id '" + id + "' at " + path);
    }
  };

  std::unordered_map<std::string, std::vector<std::string>> sibling_names;
  auto check_sibling_name = [&](const std::string& parent, const std::string& name,
                                const std::string& path) {
    auto& names = sibling_names[parent];
    if (std::find(names.begin(), names.end(), name) != names.end()) {
      throw TaxonomyError("duplicate name '" + name + "' among siblings at " + path);
    }
    names.push_back(name);
  };

  std::size_t idx = 0;
  for (const json& node : doc["disciplines"]) {
    std::string path = "disciplines[" + std::to_string(idx++) + "]";
    reject_unknown_keys(node, {"id", "name"}, path);
    Discipline d{require_string(node, "id", path), require_string(node, "name", path)};
    check_unique_id(d.id, path);
    check_sibling_name("$root", d.name, path);
    t.disciplines.push_back(std::move(d));
  }

  std::unordered_map<std::string, std::string> category_to_discipline;
  idx = 0;
  for (const json& node : doc["categories"]) {
    std::string path = "categories[" + std::to_string(idx++) + "]";
    reject_unknown_keys(node, {"id", "name", "discipline_id"}, path);
    Category c{require_string(node, "id", path), require_string(node, "name", path),
               require_string(node, "discipline_id", path)};
    check_unique_id(c.id, path);
    bool found = std::any_of(t.disciplines.begin(), t.disciplines.end(),
                             [&](const Discipline& d) { return d.id == c.discipline_id; });
    if (!found) {
      throw TaxonomyError("dangling discipline_id '" + c.discipline_id + "' at " + path);
    }
    check_sibling_name(c.discipline_id, c.name, path);
    category_to_discipline[c.id] = c.discipline_id;
    t.categories.push_back(std::move(c));
  }

  idx = 0;
  for (const json& node : doc["subjects"]) {
    std::string path = "subjects[" + std::to_string(idx++) + "]";
    reject_unknown_keys(node, {"id", "name", "category_id"}, path);
    Subject s;
    s.id = require_string(node, "id", path);
    s.name = require_string(node, "name", path);
    s.category_id = require_string(node, "category_id", path);
    check_unique_id(s.id, path);
    auto it = category_to_discipline.find(s.category_id);
    if (it == category_to_discipline.end()) {
      throw TaxonomyError("dangling category_id '" + s.category_id + "' at " + path);
    }
    s.discipline_id = it->second;
    check_sibling_name(s.category_id, s.name, path);
    t.subjects.push_back(std::move(s));
  }

  return t;
}

Taxonomy apply_filter(const Taxonomy& t, const SubjectFilter& f,
                      std::vector<std::string>* warnings) {
  std::unordered_map<std::string, const Subject*> by_id;
  for (const Subject& s : t.subjects) by_id[s.id] = &s;

  std::unordered_set<std::string> overrides;
  for (const std::string& id : f.include_overrides) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw TaxonomyError("include override references unknown subject '" + id + "'");
    }
    if (!f.excluded_discipline_ids.count(it->second->discipline_id)) {
      throw TaxonomyError("include override '" + id +
                          "' does not belong to an excluded discipline");
    }
    overrides.insert(id);
  }

  Taxonomy out;
  out.disciplines = t.disciplines;
  out.categories = t.categories;
  for (const Subject& s : t.subjects) {
    if (f.excluded_discipline_ids.count(s.discipline_id) && !overrides.count(s.id)) {
      continue;
    }
    out.subjects.push_back(s);
  }

  if (warnings) {
    if (out.subjects.empty()) {
      warnings->push_back("filter removed every subject");
    }
    for (const Discipline& d : out.disciplines) {
      if (out.discipline_is_empty(d.id) && !t.discipline_is_empty(d.id)) {
        warnings->push_back("discipline '" + d.id + "' has no subjects after filtering");
      }
    }
  }
  return out;
}

std::vector<Subject> enumerate_subjects(const Taxonomy& t) {
  // subjects are stored in document order; order them by (discipline pos,
  // category pos, subject pos)
  std::unordered_map<std::string, std::size_t> discipline_pos, category_pos;
  for (std::size_t i = 0; i < t.disciplines.size(); ++i) discipline_pos[t.disciplines[i].id] = i;
  for (std::size_t i = 0; i < t.categories.size(); ++i) category_pos[t.categories[i].id] = i;

  std::vector<Subject> out = t.subjects;
  std::stable_sort(out.begin(), out.end(), [&](const Subject& a, const Subject& b) {
    auto ka = std::pair(discipline_pos.at(a.discipline_id), category_pos.at(a.category_id));
    auto kb = std::pair(discipline_pos.at(b.discipline_id), category_pos.at(b.category_id));
    return ka < kb;
  });
  return out;
}

}  // namespace taxpref
