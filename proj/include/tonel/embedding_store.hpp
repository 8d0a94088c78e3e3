#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tonel/quantizer.hpp"

namespace tonel {

// N x dim row-major matrix of finite float32 embeddings plus document ids.
// Immutable after construction; safe to share read-only across threads.
struct EmbeddingSet {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<float> data;       // count * dim
  std::vector<std::string> ids;  // unique, one per row

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * dim, dim};
  }
};

// Queries share the layout; each row is one encoded query.
using QuerySet = EmbeddingSet;

// Throws kShapeMismatch / kNonFiniteValue / kIdMismatch on violated invariants.
void validate(const EmbeddingSet& set);

struct ManifestEntry {
  std::string id;
  std::optional<std::string> text;
  std::optional<int> true_label;
  std::optional<int> pseudo_label;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Embeddings joined with their manifest labels; missing labels stay nullopt.
struct LabeledSet {
  const EmbeddingSet* set = nullptr;
  std::vector<std::optional<int>> true_labels;
  std::vector<std::optional<int>> pseudo_labels;
  int true_classes = 0;    // max present true label + 1
  int pseudo_classes = 0;  // max present pseudo label + 1
};

// "TEMB" little-endian binary: magic, u32 version=1, u64 N, u32 dim,
// N*dim float32 row-major, then N length-prefixed (u32) UTF-8 ids.
EmbeddingSet load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingSet& set, const std::string& path);

// JSON Lines, one {id, text?, true_label?, pseudo_label?} object per line.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

LabeledSet attach_labels(const EmbeddingSet& set, const Manifest& manifest);

// Quantized corpus persisted with a "TQ08" header: codes as i8 rows plus one
// float32 scale per row, ids as in TEMB.
struct QuantizedSet {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<CimVector> vectors;
  std::vector<std::string> ids;
};

QuantizedSet load_quantized(const std::string& path);
void save_quantized(const QuantizedSet& set, const std::string& path);

}  // namespace tonel
