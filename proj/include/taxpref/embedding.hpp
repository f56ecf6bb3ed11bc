#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace taxpref {

/// Text embedding provider. Implementations must be deterministic for a
/// given input so that clustering and selection are reproducible.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// "ngram-hash-64": character trigrams hashed into 64 buckets, L2-normalized.
// Crude but deterministic; separates texts well enough to cluster responses.
std::shared_ptr<const Embedder> find_embedder(const std::string& id);

}  // namespace taxpref
