#include "perprompt/retrieval.hpp"

#include <algorithm>

#include "perprompt/errors.hpp"
#include "perprompt/simd.hpp"

namespace perprompt {

Mlp make_encoder(std::size_t input_dim, const EncoderConfig& config, Rng& init_rng) {
  return Mlp("encoder", input_dim, {config.hidden, config.output}, config.dropout, init_rng);
}

std::vector<double> encode(const Mlp& encoder, std::span<const double> flat, Mode mode, Rng* rng,
                           Mlp::Cache* cache) {
  if (flat.size() != encoder.input_dim()) {
    throw DimensionError("encoder expects " + std::to_string(encoder.input_dim()) + " values, got " +
                         std::to_string(flat.size()));
  }
  Matrix row(1, flat.size());
  std::copy(flat.begin(), flat.end(), row.data.begin());
  return encoder.forward(row, mode, rng, cache).data;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine similarity of vectors with lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = simd::dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

NeighborSet top_k_similar(std::span<const double> target, std::span<const PoolEntry> pool, std::size_t k,
                          const std::string& exclude_id) {
  if (k == 0) throw SchemaError("k must be at least 1");
  if (pool.empty()) throw SchemaError("retrieval pool is empty");
  NeighborSet scored;
  scored.reserve(pool.size());
  for (const auto& entry : pool) {
    if (!exclude_id.empty() && entry.id == exclude_id) continue;
    scored.push_back({entry.id, cosine_similarity(target, entry.vector)});
  }
  auto better = [](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  scored.resize(take);
  return scored;
}

}  // namespace perprompt
