#pragma once

#include <cstddef>
#include <vector>

namespace filtrank {

inline constexpr std::size_t kEmbedDim = 128;
inline constexpr int kNumCategories = 8;

enum class EmbeddingKind { Aesthetic, Fused };

/// Last-layer representation. The kind tag keeps fused and unfused
/// embeddings from being mixed in one pairwise comparison.
template <EmbeddingKind Kind>
struct Embedding {
  std::vector<float> values;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

using AestheticEmbedding = Embedding<EmbeddingKind::Aesthetic>;
using FusedEmbedding = Embedding<EmbeddingKind::Fused>;

}  // namespace filtrank
