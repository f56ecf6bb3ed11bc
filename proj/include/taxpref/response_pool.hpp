#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "taxpref/embedding.hpp"
#include "taxpref/gateway.hpp"
#include "taxpref/prompt_forge.hpp"
#include "taxpref/templates.hpp"
#include "taxpref/tokenizer.hpp"

namespace taxpref {

struct Response {
  std::string id;  // "<prompt_id>#<model_id>"
  std::string prompt_id;
  std::string model_id;
  std::string text;
  int token_count = 0;
};

struct GenerationFailure {
  std::string model_id;
  std::string error;
};

/// Per-prompt response pool; failures are isolated per model so the pool can
/// be smaller than the model list.
struct ResponsePool {
  std::vector<Response> responses;
  std::vector<GenerationFailure> failures;
};

struct EmbeddingVector {
  std::string response_id;
  std::vector<double> values;
};

struct ClusterAssignment {
  int k = 0;  // requested cluster count; some clusters may be empty
  std::map<std::string, int> labels;
  std::vector<std::vector<double>> centroids;  // size k; exact member means
  std::vector<int> sizes;                      // size k
};

struct SelectionResult {
  std::string prompt_id;
  std::vector<std::string> selected_response_ids;  // one per non-empty cluster
  bool flagship_override_applied = false;
};

/// Fan the prompt out to every listed model under the shared system prompt.
ResponsePool generate_responses(const PromptCandidate& prompt,
                                std::span<const std::string> model_ids,
                                const PromptTemplate& system_tpl, Gateway& gateway,
                                const TokenEncoder& encoder, std::uint64_t stage_seed);

/// Unordered pairs among n responses: n(n-1)/2.
std::int64_t pair_count(std::int64_t n);

/// Seeded k-means++ / Lloyd over squared Euclidean distance. Converges on
/// stable assignments or after 300 iterations. Clustering is canonicalized
/// on response id order, so the result is invariant under permutation of the
/// input. With |vectors| <= k every vector becomes its own cluster.
ClusterAssignment cluster_responses(std::span<const EmbeddingVector> vectors, int k,
                                    std::uint64_t seed);

/// Nearest-to-centroid representative per non-empty cluster, except that the
/// cluster holding the flagship model's response contributes that response
/// regardless of distance. Distance ties break to the smallest response id.
SelectionResult select_representatives(std::span<const Response> pool,
                                       std::span<const EmbeddingVector> vectors,
                                       const ClusterAssignment& assignment,
                                       const std::string& flagship_model_id);

}  // namespace taxpref
