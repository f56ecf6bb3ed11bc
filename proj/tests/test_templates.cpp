#include <doctest.h>

#include "helpers.hpp"
#include "taxpref/templates.hpp"
#include "taxpref/util.hpp"

using namespace taxpref;

TEST_CASE("render substitutes placeholders and honors brace escapes") {
  auto tpl = PromptTemplate::from_string("Ask about {subject} using {{literal}} braces");
  CHECK(tpl.render(0, {{"subject", "Algebra"}}) == "Ask about Algebra using {literal} braces");
}

TEST_CASE("sections split on --- lines") {
  auto tpl = PromptTemplate::from_string("first {x}\n---\nsecond {x}\n---\nthird");
  REQUIRE(tpl.section_count() == 3);
  CHECK(tpl.render(1, {{"x", "A"}}) == "second A");
  CHECK(tpl.render(2, {}) == "third");
  CHECK_THROWS_AS(tpl.render(3, {}), TemplateError);
}

TEST_CASE("unknown placeholder and unterminated braces are errors") {
  auto tpl = PromptTemplate::from_string("hello {name}");
  CHECK_THROWS_AS(tpl.render(0, {}), TemplateError);
  auto broken = PromptTemplate::from_string("hello {name");
  CHECK_THROWS_AS(broken.render(0, {{"name", "x"}}), TemplateError);
}

TEST_CASE("empty template is rejected, extra values are fine") {
  CHECK_THROWS_AS(PromptTemplate::from_string("  \n "), TemplateError);
  auto tpl = PromptTemplate::from_string("plain text");
  CHECK(tpl.render(0, {{"unused", "v"}}) == "plain text");
}

TEST_CASE("template hash is content-stable") {
  auto a = PromptTemplate::from_string("same text");
  auto b = PromptTemplate::from_string("same text");
  auto c = PromptTemplate::from_string("other text");
  CHECK(a.sha256() == b.sha256());
  CHECK(a.sha256() != c.sha256());
}

TEST_CASE("section_mentions sees placeholders") {
  auto tpl = PromptTemplate::from_string("uses {subject}\n---\nno placeholder");
  CHECK(tpl.section_mentions(0, "subject"));
  CHECK_FALSE(tpl.section_mentions(1, "subject"));
}

TEST_CASE("fixture templates load and carry the documented placeholders") {
  auto dir = testing::fixture_dir() / "demo" / "templates";
  auto types = PromptTemplate::load(dir / "question_types.txt");
  CHECK(types.section_mentions(0, "subject"));
  auto draft = PromptTemplate::load(dir / "draft.txt");
  REQUIRE(draft.section_count() == 3);
  CHECK(draft.section_mentions(0, "question_type"));
  CHECK(draft.section_mentions(1, "candidate_prompt"));
  auto annotation = PromptTemplate::load(dir / "annotation.txt");
  CHECK(annotation.section_mentions(0, "response_1"));
  CHECK(annotation.section_mentions(0, "response_2"));
}
