#include "taxpref/embedding.hpp"

#include <cmath>
#include <stdexcept>

#include "taxpref/util.hpp"

namespace taxpref {

namespace {

class NgramHashEmbedder final : public Embedder {
 public:
  static constexpr int kDim = 64;
  static constexpr std::size_t kN = 3;

  std::string name() const override { return "ngram-hash-64"; }
  int dimension() const override { return kDim; }

  std::vector<double> embed(std::string_view text) const override {
    std::vector<double> v(kDim, 0.0);
    if (text.size() < kN) {
      if (!text.empty()) v[fnv1a64(text) % kDim] += 1.0;
    } else {
      for (std::size_t i = 0; i + kN <= text.size(); ++i) {
        std::uint64_t h = fnv1a64(text.substr(i, kN));
        // sign bit decorrelates buckets that collide
        double sign = (h >> 63) ? -1.0 : 1.0;
        v[h % kDim] += sign;
      }
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (double& x : v) x *= inv;
    }
    return v;
  }
};

}  // namespace

std::shared_ptr<const Embedder> find_embedder(const std::string& id) {
  if (id == "ngram-hash-64") return std::make_shared<NgramHashEmbedder>();
  throw std::invalid_argument("unknown embedder id: " + id);
}

}  // namespace taxpref
