#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace taxpref {

struct TemplateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A template file holds one or more sections separated by lines containing
/// only `---`. Placeholders are written `{name}`; `{{` and `}}` escape
/// literal braces. Section roles depend on the consuming stage (e.g. the
/// question-type template uses section 0 for the opening turn and section 1
/// for the round-continuation turn).
class PromptTemplate {
 public:
  static PromptTemplate load(const std::filesystem::path& path);
  static PromptTemplate from_string(std::string text, std::string name = "<inline>");

  const std::string& name() const { return name_; }
  const std::string& sha256() const { return sha256_; }
  std::size_t section_count() const { return sections_.size(); }

  /// Renders section `index` with the given placeholder values. Unknown
  /// placeholders in the text are an error; unused values are fine.
  std::string render(std::size_t index,
                     const std::map<std::string, std::string>& values) const;

  /// True if the section's text mentions `{placeholder}`.
  bool section_mentions(std::size_t index, const std::string& placeholder) const;

 private:
  std::string name_;
  std::string sha256_;
  std::vector<std::string> sections_;
};

}  // namespace taxpref
