#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsteg/group.hpp"
#include "wsteg/model_file.hpp"
#include "wsteg/payload.hpp"
#include "wsteg/quant.hpp"

namespace wsteg {

// Matches the transformer block index in names such as
// "model.layers.12.mlp.down_proj.weight" or "blk.3.attn_q.weight".
inline constexpr const char* kDefaultLayerPattern = R"((?:^|\.)(?:layers|layer|h|blk|block|blocks)\.(\d+)(?:\.|$))";

// MODEL: one group of every tensor. LAYER: one group per layer index.
// NAME: one group per name stem (the name with its layer index replaced by
// '*'), spanning all layers. MATRIX: one group per tensor. Groups are
// ordered by layer index then name; members stay in file order.
std::vector<ParameterGroup> make_groups(const ModelFile& model, GroupingStrategy strategy,
                                        const std::string& layer_pattern = kDefaultLayerPattern);

// Looks up "model", "layer:<i>", "name:<stem>" or "matrix:<tensor>".
ParameterGroup resolve_group(const ModelFile& model, const std::string& group_id,
                             const std::string& layer_pattern = kDefaultLayerPattern);
ParameterGroup resolve_group(const ModelFile& model, const EmbedManifest& manifest);

struct EvalScores {
  double perplexity = 1.0;  // +inf for a destroyed model
  double accuracy = 0.0;
  std::string dataset;
  std::string split;
  std::uint64_t seed = 0;
  std::string model_digest;
};

EvalScores scores_from_json(const nlohmann::json& doc);
nlohmann::ordered_json scores_to_json(const EvalScores& scores);
EvalScores load_scores(const std::filesystem::path& path);

// One clean/embedded comparison.
struct PaiEntry {
  double d_ppl_rel = 0.0;  // D_ppl
  double d_acc_rel = 0.0;  // D_acc
  double d_pai = 0.0;
  double sr = 1.0;
  EvalScores clean;
  EvalScores embedded;
};

// D_ppl = |1/p - 1/p'| / (1/p), D_acc = |a - a'| / a, d_PAI = max, SR = 1 - d_PAI.
// An infinite embedded perplexity gives D_ppl = 1.
PaiEntry pai(const EvalScores& clean, const EvalScores& embedded);

// All runs for one (group, n) cell; selection uses the mean over runs.
struct PaiReport {
  std::string group_id;
  unsigned n = 1;
  std::uint64_t group_size = 0;
  std::optional<int> layer_index;
  std::vector<PaiEntry> runs;

  double mean_d_ppl() const;
  double mean_d_acc() const;
  double mean_d_pai() const;
  double sr() const { return 1.0 - mean_d_pai(); }
  std::uint64_t capacity_bits() const { return group_size * n; }
};

struct TargetChoice {
  std::string group_id;
  unsigned n = 1;
  friend bool operator==(const TargetChoice&, const TargetChoice&) = default;
};

// argmin of mean d_PAI; ties go to larger |G|*n, then lower layer index
// (groups without one last), then smaller n, then group id.
TargetChoice select_target(const std::vector<PaiReport>& reports);

// Fills every element of the group with seeded random n-bit segments;
// identical to embed_general with random_frame(|G| * n, n, seed).
void probe(ModelFile& model, const ParameterGroup& group, unsigned n, std::uint64_t seed);

// General: floor(|G| * n / 8). Robust: floor(eligible * n / 8).
std::uint64_t capacity_bytes(const ParameterGroup& group, unsigned n, EmbedMode mode, Scheme scheme,
                             const ModelFile* model = nullptr,
                             const std::optional<AffineQuantParams>& affine = std::nullopt);

nlohmann::ordered_json pai_report_json(const std::vector<PaiReport>& reports);
// Plain-text grid: one row per group, one column per n, cells = mean d_PAI.
std::string pai_table(const std::vector<PaiReport>& reports);

}  // namespace wsteg
