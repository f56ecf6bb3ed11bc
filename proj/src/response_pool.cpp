#include "taxpref/response_pool.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "taxpref/util.hpp"

namespace taxpref {

ResponsePool generate_responses(const PromptCandidate& prompt,
                                std::span<const std::string> model_ids,
                                const PromptTemplate& system_tpl, Gateway& gateway,
                                const TokenEncoder& encoder, std::uint64_t stage_seed) {
  if (prompt.status != CandidateStatus::final_) {
    throw std::invalid_argument("responses are only generated for final prompts (got " +
                                prompt.id + ")");
  }
  std::string system_text = system_tpl.render(0, {{"prompt", prompt.text}});

  std::vector<CompletionRequest> requests;
  requests.reserve(model_ids.size());
  for (const std::string& model_id : model_ids) {
    CompletionRequest req;
    req.model_id = model_id;
    req.messages = {{Role::system, system_text}, {Role::user, prompt.text}};
    req.seed = mix_seed(stage_seed, prompt.id + "|" + model_id);
    requests.push_back(std::move(req));
  }

  ResponsePool pool;
  std::vector<CompletionOutcome> outcomes = gateway.complete_batch(requests);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].ok()) {
      Response r;
      r.prompt_id = prompt.id;
      r.model_id = model_ids[i];
      r.id = prompt.id + "#" + model_ids[i];
      r.text = outcomes[i].result->text;
      r.token_count = encoder.count_tokens(r.text);
      pool.responses.push_back(std::move(r));
    } else {
      pool.failures.push_back({model_ids[i], outcomes[i].error->message});
    }
  }
  return pool;
}

std::int64_t pair_count(std::int64_t n) {
  if (n < 0) throw std::invalid_argument("pair_count: n must be >= 0");
  return n * (n - 1) / 2;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

}  // namespace

ClusterAssignment cluster_responses(std::span<const EmbeddingVector> vectors, int k,
                                    std::uint64_t seed) {
  if (vectors.empty()) throw std::invalid_argument("cluster_responses: empty input");
  if (k < 1) throw std::invalid_argument("cluster_responses: k must be >= 1");
  const std::size_t dim = vectors[0].values.size();
  for (const EmbeddingVector& v : vectors) {
    if (v.values.size() != dim) {
      throw std::invalid_argument("cluster_responses: mixed dimensions");
    }
    for (double x : v.values) {
      if (!std::isfinite(x)) {
        throw std::invalid_argument("cluster_responses: non-finite component in " +
                                    v.response_id);
      }
    }
  }

  // canonical order makes the result independent of input permutation
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return vectors[a].response_id < vectors[b].response_id;
  });

  const std::size_t n = vectors.size();
  ClusterAssignment out;
  out.k = k;

  auto point = [&](std::size_t rank) -> std::span<const double> {
    return vectors[order[rank]].values;
  };

  if (n <= static_cast<std::size_t>(k)) {
    out.centroids.assign(k, std::vector<double>(dim, 0.0));
    out.sizes.assign(k, 0);
    for (std::size_t r = 0; r < n; ++r) {
      out.labels[vectors[order[r]].response_id] = static_cast<int>(r);
      out.centroids[r].assign(point(r).begin(), point(r).end());
      out.sizes[r] = 1;
    }
    return out;
  }

  DetRng rng(seed);
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);

  // k-means++ seeding
  std::size_t first = rng.uniform_index(n);
  centroids.emplace_back(point(first).begin(), point(first).end());
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(point(r), c));
      d2[r] = best;
      total += best;
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.uniform_index(n);
    } else {
      double target = rng.unit_double() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t r = 0; r < n; ++r) {
        acc += d2[r];
        if (acc >= target) {
          pick = r;
          break;
        }
      }
    }
    centroids.emplace_back(point(pick).begin(), point(pick).end());
  }

  std::vector<int> labels(n, -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (std::size_t r = 0; r < n; ++r) {
      int best_c = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = sq_dist(point(r), centroids[c]);
        if (d < best_d) {
          best_d = d;
          best_c = c;
        }
      }
      if (labels[r] != best_c) {
        labels[r] = best_c;
        changed = true;
      }
    }
    if (!changed) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < dim; ++j) sums[labels[r]][j] += point(r)[j];
      ++counts[labels[r]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty clusters keep their centroid and may stay empty
      for (std::size_t j = 0; j < dim; ++j) centroids[c][j] = sums[c][j] / counts[c];
    }
  }

  // exact member means so the centroid invariant holds to tolerance
  out.centroids.assign(k, std::vector<double>(dim, 0.0));
  out.sizes.assign(k, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim; ++j) out.centroids[labels[r]][j] += point(r)[j];
    ++out.sizes[labels[r]];
  }
  for (int c = 0; c < k; ++c) {
    if (out.sizes[c] > 0) {
      for (double& x : out.centroids[c]) x /= out.sizes[c];
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    out.labels[vectors[order[r]].response_id] = labels[r];
  }
  return out;
}

SelectionResult select_representatives(std::span<const Response> pool,
                                       std::span<const EmbeddingVector> vectors,
                                       const ClusterAssignment& assignment,
                                       const std::string& flagship_model_id) {
  SelectionResult result;
  if (pool.empty()) return result;
  result.prompt_id = pool.front().prompt_id;

  std::map<std::string, std::span<const double>> vec_by_id;
  for (const EmbeddingVector& v : vectors) vec_by_id[v.response_id] = v.values;

  for (const Response& r : pool) {
    if (!assignment.labels.count(r.id) || !vec_by_id.count(r.id)) {
      throw std::invalid_argument("assignment does not cover response " + r.id);
    }
  }

  // nearest member per cluster, ties to the smallest response id
  std::vector<std::string> best_id(assignment.k);
  std::vector<double> best_d(assignment.k, std::numeric_limits<double>::infinity());
  std::string flagship_response_id;
  int flagship_cluster = -1;
  for (const Response& r : pool) {
    int c = assignment.labels.at(r.id);
    double d = sq_dist(vec_by_id.at(r.id), assignment.centroids[c]);
    if (d < best_d[c] || (d == best_d[c] && (best_id[c].empty() || r.id < best_id[c]))) {
      best_d[c] = d;
      best_id[c] = r.id;
    }
    if (r.model_id == flagship_model_id) {
      flagship_response_id = r.id;
      flagship_cluster = c;
    }
  }

  if (flagship_cluster >= 0) {
    best_id[flagship_cluster] = flagship_response_id;
    result.flagship_override_applied = true;
  }

  for (int c = 0; c < assignment.k; ++c) {
    if (!best_id[c].empty()) result.selected_response_ids.push_back(best_id[c]);
  }
  return result;
}

}  // namespace taxpref
