#pragma once

// Content clustering for instance-level prompts: spectral embedding of the
// content affinity graph, k-means in the embedding, then single-node moves
// that lower the min-max cut objective sum_k cut(C_k, rest) / W(C_k, C_k).

#include <cstdint>
#include <filesystem>
#include <vector>

#include "settp/backbone.hpp"
#include "settp/corpus.hpp"
#include "settp/matrix.hpp"

namespace settp {

struct ContentGraph {
  Matrix weights;  // n x n, symmetric, non-negative
  Matrix nodes;    // n x e node features; may be empty for weight-only graphs
};

/// W_ij = 1 / (1 + ||p_i - p_j||). Needs at least two vectors of equal width.
ContentGraph build_affinity(const std::vector<ContentVector>& contents);
/// Validates a caller-supplied weight matrix.
ContentGraph graph_from_weights(Matrix weights);

struct PartitionOptions {
  /// L = 1 and L = n are rejected unless this is set.
  bool allow_degenerate = false;
  std::size_t kmeans_iterations = 100;
};

struct ClusterAssignment {
  std::vector<std::size_t> labels;
  std::size_t clusters = 0;
  std::vector<ContentVector> centroids;  // empty when the graph has no node features
  double objective = 0.0;
  std::size_t components = 1;
};

double minmax_cut_objective(const Matrix& weights, const std::vector<std::size_t>& labels, std::size_t clusters);

/// Every cluster non-empty. Labels are canonical: cluster ids appear in order
/// of their lowest member index. Disconnected graphs are partitioned per
/// connected component.
ClusterAssignment minmax_cut_partition(const ContentGraph& graph, std::size_t clusters,
                                       const PartitionOptions& options = {});

/// max(2, floor(sqrt(n / 10))).
std::size_t default_cluster_count(std::size_t n);

/// Encodes every source sentence of the corpus and partitions the graph.
ClusterAssignment cluster_contents(const Backbone& model, const StyleCorpus& corpus, std::size_t clusters,
                                   const PartitionOptions& options = {});

/// One JSON object per line: {"pair_index", "cluster_index", "source"}.
void export_assignment_jsonl(const ClusterAssignment& assignment, const StyleCorpus& corpus,
                             const std::filesystem::path& path);

}  // namespace settp
