#include "taxpref/tokenizer.hpp"

#include <cctype>
#include <stdexcept>

namespace taxpref {

namespace {

class WhitespaceEncoder final : public TokenEncoder {
 public:
  std::string name() const override { return "whitespace"; }
  int count_tokens(std::string_view text) const override {
    int n = 0;
    bool in_token = false;
    for (unsigned char c : text) {
      if (std::isspace(c)) {
        in_token = false;
      } else if (!in_token) {
        in_token = true;
        ++n;
      }
    }
    return n;
  }
};

class ByteEncoder final : public TokenEncoder {
 public:
  std::string name() const override { return "bytes"; }
  int count_tokens(std::string_view text) const override {
    return static_cast<int>(text.size());
  }
};

// Decodes one UTF-8 codepoint starting at i; advances i. Invalid sequences
// consume one byte and yield the byte value.
std::uint32_t next_codepoint(std::string_view s, std::size_t& i) {
  unsigned char c = s[i];
  std::size_t extra = 0;
  std::uint32_t cp = c;
  if ((c & 0x80u) == 0) {
    extra = 0;
  } else if ((c & 0xE0u) == 0xC0u) {
    extra = 1;
    cp = c & 0x1Fu;
  } else if ((c & 0xF0u) == 0xE0u) {
    extra = 2;
    cp = c & 0x0Fu;
  } else if ((c & 0xF8u) == 0xF0u) {
    extra = 3;
    cp = c & 0x07u;
  }
  if (extra > 0 && i + extra >= s.size()) {
    ++i;
    return c;
  }
  for (std::size_t k = 1; k <= extra; ++k) {
    unsigned char cc = s[i + k];
    if ((cc & 0xC0u) != 0x80u) {
      ++i;
      return c;
    }
    cp = (cp << 6) | (cc & 0x3Fu);
  }
  i += extra + 1;
  return cp;
}

// Approximation of the cl100k_base tokenizer: non-ASCII codepoints (CJK in
// particular) count as one token each, ASCII word runs as ceil(len/4), any
// other visible codepoint as one. Close enough for corpus statistics; swap
// in a real BPE for parity.
class Cl100kApproxEncoder final : public TokenEncoder {
 public:
  std::string name() const override { return "cl100k_base"; }
  int count_tokens(std::string_view text) const override {
    int n = 0;
    std::size_t i = 0;
    std::size_t word_len = 0;
    auto flush_word = [&] {
      if (word_len > 0) {
        n += static_cast<int>((word_len + 3) / 4);
        word_len = 0;
      }
    };
    while (i < text.size()) {
      std::uint32_t cp = next_codepoint(text, i);
      if (cp < 0x80 && (std::isalnum(static_cast<int>(cp)) || cp == '\'')) {
        ++word_len;
      } else {
        flush_word();
        if (cp < 0x80 && std::isspace(static_cast<int>(cp))) continue;
        ++n;  // CJK codepoints and symbols are one token apiece
      }
    }
    flush_word();
    return n;
  }
};

}  // namespace

std::shared_ptr<const TokenEncoder> find_encoder(const std::string& id) {
  if (id == "whitespace") return std::make_shared<WhitespaceEncoder>();
  if (id == "bytes") return std::make_shared<ByteEncoder>();
  if (id == "cl100k_base") return std::make_shared<Cl100kApproxEncoder>();
  throw std::invalid_argument("unknown encoding id: " + id);
}

}  // namespace taxpref
