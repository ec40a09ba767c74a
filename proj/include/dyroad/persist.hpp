#pragma once

// Binary artefacts. Both formats open with the 8-byte magic "DYTOAST1"
// followed by little-endian u32 header fields and little-endian f64 blobs.
//
// Embedding file:
//   magic, version, segments, dim, feature_count, cardinalities[feature_count],
//   dynamic, freq_count, frame_rows,
//   f [segments, dim], h~ [segments, dim + categories], g [categories, dim],
//   w_t [freq_count], e_t [frame_rows, dim]
//
// Checkpoint:
//   magic, layers, heads, d_model, d_ff, max_len, vocab,
//   meta [dynamic, time_scale, frames_per_day, frame_seconds, sigma,
//         mask_ratio, disc_weight, dropout],
//   then every tensor of TrajectoryModel::parameters() in order.

#include <cstdint>
#include <filesystem>

#include "dyroad/skipgram.hpp"
#include "dyroad/transformer.hpp"

namespace dyroad {

inline constexpr char kMagic[8] = {'D', 'Y', 'T', 'O', 'A', 'S', 'T', '1'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

struct EmbeddingFile {
  EmbeddingSet embeddings;
  ad::Tensor frames;  // e_t [frames, dim]; undefined when absent
};

void save_embeddings(const EmbeddingSet& es, const std::filesystem::path& file,
                     const ad::Tensor& frame_table = {});
EmbeddingFile load_embeddings(const std::filesystem::path& file);

void save_checkpoint(const TrajectoryModel& model, const std::filesystem::path& file);
TrajectoryModel load_checkpoint(const std::filesystem::path& file);

}  // namespace dyroad
