#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace taxpref {

/// Pluggable token counting. Encoders are looked up by the id named in the
/// run config; an unknown id is an error at the call site.
class TokenEncoder {
 public:
  virtual ~TokenEncoder() = default;
  virtual std::string name() const = 0;
  virtual int count_tokens(std::string_view text) const = 0;
};

// Built-in encoders:
//   "whitespace"  - whitespace-separated pieces
//   "bytes"       - raw byte count
//   "cl100k_base" - local approximation of the cl100k_base BPE (no merge
//                   table shipped; see docs/formats.md for the rules)
std::shared_ptr<const TokenEncoder> find_encoder(const std::string& id);

}  // namespace taxpref
