#pragma once

// Subject encoder and cosine top-k retrieval over a pool of encoded subjects.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "perprompt/mlp.hpp"

namespace perprompt {

struct EncoderConfig {
  std::size_t hidden = 256;
  std::size_t output = 128;
  double dropout = 0.4;
};

// Two dense layers: input -> hidden (rectifier, dropout) -> output.
Mlp make_encoder(std::size_t input_dim, const EncoderConfig& config, Rng& init_rng);

// Encodes one padded subject vector. Train mode draws dropout masks from rng.
std::vector<double> encode(const Mlp& encoder, std::span<const double> flat, Mode mode, Rng* rng = nullptr,
                           Mlp::Cache* cache = nullptr);

// dot(a, b) / (|a| |b|), or 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct PoolEntry {
  std::string id;
  std::vector<double> vector;
};

struct Neighbor {
  std::string id;
  double score = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Sorted by score descending, ties by ascending id.
using NeighborSet = std::vector<Neighbor>;

// The min(k, eligible pool size) most similar pool entries to `target`.
// Entries whose id equals `exclude_id` are skipped.
NeighborSet top_k_similar(std::span<const double> target, std::span<const PoolEntry> pool, std::size_t k,
                          const std::string& exclude_id = {});

}  // namespace perprompt
