#include "sagvit/exports.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sagvit/errors.hpp"

namespace sagvit {

namespace {

std::string fmt(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("write_matrix_csv: expected a matrix, got " + shape_string(matrix.shape()));
  auto out = open_out(path);
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    for (std::size_t c = 0; c < matrix.cols(); ++c) out << (c ? "," : "") << fmt(matrix.at(r, c));
    out << '\n';
  }
}

void write_adjacency_csv(const std::filesystem::path& path, const PatchGraph& graph) {
  write_matrix_csv(path, adjacency_dense(graph));
}

void write_edge_tsv(const std::filesystem::path& path, const PatchGraph& graph) {
  auto out = open_out(path);
  out << "u\tv\tweight\n";
  for (const auto& e : graph.edges) out << e.src << '\t' << e.dst << '\t' << fmt(e.weight, 9) << '\n';
}

void write_attention_tsv(const std::filesystem::path& path, std::span<const GatAttentionOutput> layers) {
  auto out = open_out(path);
  out << "layer\thead\tu\tv\talpha\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& nb = layers[l].neighborhoods;
    for (std::size_t h = 0; h < layers[l].alphas.size(); ++h) {
      for (std::size_t u = 0; u < nb.num_nodes; ++u) {
        for (std::size_t e = nb.offsets[u]; e < nb.offsets[u + 1]; ++e) {
          out << l << '\t' << h << '\t' << u << '\t' << nb.nodes[e] << '\t' << fmt(layers[l].alphas[h][e]) << '\n';
        }
      }
    }
  }
}

void write_correlation_csv(const std::filesystem::path& path, const Tensor& correlation) {
  write_matrix_csv(path, correlation);
}

std::string metrics_row(const MetricsReport& r) {
  return std::to_string(r.epoch) + "," + fmt(r.loss) + "," + fmt(r.macro_f1) + "," + fmt(r.micro_f1) + "," +
         fmt(r.lr) + "," + fmt(r.throughput, 6);
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsReport> rows) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << metrics_row(r) << '\n';
}

void append_metrics_row(const std::filesystem::path& path, const MetricsReport& report) {
  const bool fresh = !std::filesystem::exists(path);
  auto out = open_out(path, std::ios::app);
  if (fresh) out << kMetricsHeader << '\n';
  out << metrics_row(report) << '\n';
}

void write_landscape_csv(const std::filesystem::path& path, const Tensor& surface) {
  write_matrix_csv(path, surface);
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError(path.string() + ": ragged CSV");
    rows.push_back(std::move(row));
  }
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  Tensor t = Tensor::zeros({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) t.values()[static_cast<Eigen::Index>(r * cols + c)] = rows[r][c];
  }
  return t;
}

}  // namespace sagvit
