#include "taxpref/templates.hpp"

#include "taxpref/util.hpp"

namespace taxpref {

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  return from_string(read_text_file(path), path.filename().string());
}

PromptTemplate PromptTemplate::from_string(std::string text, std::string name) {
  PromptTemplate t;
  t.name_ = std::move(name);
  t.sha256_ = sha256_hex(text);

  std::string current;
  for (const std::string& line : split_lines(text)) {
    if (trim(line) == "---") {
      t.sections_.push_back(trim(current));
      current.clear();
    } else {
      current += line;
      current += '\n';
    }
  }
  t.sections_.push_back(trim(current));
  if (t.sections_.size() == 1 && t.sections_[0].empty()) {
    throw TemplateError("template '" + t.name_ + "' is empty");
  }
  return t;
}

std::string PromptTemplate::render(std::size_t index,
                                   const std::map<std::string, std::string>& values) const {
  if (index >= sections_.size()) {
    throw TemplateError("template '" + name_ + "' has no section " + std::to_string(index));
  }
  const std::string& text = sections_[index];
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      out.push_back('{');
      ++i;
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      out.push_back('}');
      ++i;
    } else if (c == '{') {
      std::size_t close = text.find('}', i + 1);
      if (close == std::string::npos) {
        throw TemplateError("unterminated placeholder in template '" + name_ + "'");
      }
      std::string key = text.substr(i + 1, close - i - 1);
      auto it = values.find(key);
      if (it == values.end()) {
        throw TemplateError("template '" + name_ + "' references unknown placeholder {" +
                            key + "}");
      }
      out += it->second;
      i = close;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

bool PromptTemplate::section_mentions(std::size_t index,
                                      const std::string& placeholder) const {
  if (index >= sections_.size()) return false;
  return sections_[index].find("{" + placeholder + "}") != std::string::npos;
}

}  // namespace taxpref
