#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sagvit/gat.hpp"
#include "sagvit/graph.hpp"
#include "sagvit/training.hpp"

namespace sagvit {

// Doubles are written with 17 significant digits so CSV values round-trip exactly.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);
void write_adjacency_csv(const std::filesystem::path& path, const PatchGraph& graph);
// u, v, weight with a header row.
void write_edge_tsv(const std::filesystem::path& path, const PatchGraph& graph);
// layer, head, u, v, alpha: the weight node u gives neighbor v.
void write_attention_tsv(const std::filesystem::path& path, std::span<const GatAttentionOutput> layers);
void write_correlation_csv(const std::filesystem::path& path, const Tensor& correlation);

inline constexpr const char* kMetricsHeader = "epoch,loss,macro_f1,micro_f1,lr,throughput";
std::string metrics_row(const MetricsReport& report);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsReport> rows);
void append_metrics_row(const std::filesystem::path& path, const MetricsReport& report);

void write_landscape_csv(const std::filesystem::path& path, const Tensor& surface);

Tensor read_matrix_csv(const std::filesystem::path& path);

}  // namespace sagvit
