#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace taxpref {

struct TaxonomyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Discipline {
  std::string id;
  std::string name;
};

struct Category {
  std::string id;
  std::string name;
  std::string discipline_id;
};

struct Subject {
  std::string id;
  std::string name;
  std::string category_id;
  std::string discipline_id;  // derived from the owning category
};

/// The discipline -> category -> subject tree. Node order follows the
/// source document and is the canonical enumeration order everywhere.
struct Taxonomy {
  std::vector<Discipline> disciplines;
  std::vector<Category> categories;
  std::vector<Subject> subjects;

  std::size_t subject_count_for_discipline(const std::string& discipline_id) const;
  bool discipline_is_empty(const std::string& discipline_id) const;
};

struct SubjectFilter {
  std::set<std::string> excluded_discipline_ids;
  std::vector<std::string> include_overrides;  // subject ids kept from excluded disciplines
};

// Parses the taxonomy document (JSON, keys `disciplines`/`categories`/
// `subjects`; see docs/formats.md). Unknown keys are rejected; errors carry
// the node path.
Taxonomy parse_taxonomy(const std::string& source);

// Removes subjects of excluded disciplines except the listed overrides.
// Categories and disciplines are retained even when emptied so per-discipline
// statistics keep their full denominator. Warnings (e.g. "no subjects left")
// are appended to *warnings when given.
Taxonomy apply_filter(const Taxonomy& t, const SubjectFilter& f,
                      std::vector<std::string>* warnings = nullptr);

// Subjects in discipline order, then category order, then subject order.
// Stable across calls and runs.
std::vector<Subject> enumerate_subjects(const Taxonomy& t);

}  // namespace taxpref
