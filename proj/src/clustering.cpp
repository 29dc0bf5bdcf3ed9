#include "settp/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "settp/error.hpp"
#include "settp/kernels.hpp"

namespace settp {

namespace {

using Labels = std::vector<std::size_t>;

Labels canonicalize(const Labels& labels, std::size_t clusters) {
  std::vector<std::size_t> remap(clusters, clusters);
  std::size_t next = 0;
  Labels out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (remap[labels[i]] == clusters) remap[labels[i]] = next++;
    out[i] = remap[labels[i]];
  }
  return out;
}

std::vector<Labels> connected_components(const Matrix& w) {
  const std::size_t n = w.rows();
  std::vector<std::size_t> comp(n, n);
  std::vector<Labels> out;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] != n) continue;
    Labels members{s};
    comp[s] = out.size();
    for (std::size_t h = 0; h < members.size(); ++h) {
      const std::size_t u = members[h];
      for (std::size_t v = 0; v < n; ++v) {
        if (v != u && comp[v] == n && w(u, v) > 0.0) {
          comp[v] = out.size();
          members.push_back(v);
        }
      }
    }
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  return out;
}

// Farthest-point seeding from the point with the largest total squared
// distance, followed by Lloyd iterations. Every choice depends only on the
// point set, so relabeling the input permutes the output.
Labels kmeans(const Matrix& x, std::size_t k, std::size_t iterations) {
  const std::size_t n = x.rows();
  std::vector<std::size_t> seeds;
  {
    std::size_t first = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += squared_l2_distance(x.row(i), x.row(j));
      if (s > best) {
        best = s;
        first = i;
      }
    }
    seeds.push_back(first);
  }
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    std::size_t pick = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], squared_l2_distance(x.row(i), x.row(seeds.back())));
      if (mind[i] > best) {
        best = mind[i];
        pick = i;
      }
    }
    seeds.push_back(pick);
  }
  Matrix centers(k, x.cols());
  for (std::size_t c = 0; c < k; ++c) std::copy(x.row(seeds[c]).begin(), x.row(seeds[c]).end(), centers.row(c).begin());

  Labels labels(n, k);
  for (std::size_t it = 0; it < iterations; ++it) {
    Labels next = kernels::nearest_rows(centers, x);
    std::vector<std::size_t> count(k, 0);
    for (auto l : next) ++count[l];
    // Refill an empty cluster with the point farthest from its center.
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] != 0) continue;
      std::size_t far = n;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (count[next[i]] < 2) continue;
        const double d = squared_l2_distance(x.row(i), centers.row(next[i]));
        if (d > best) {
          best = d;
          far = i;
        }
      }
      --count[next[far]];
      next[far] = c;
      count[c] = 1;
    }
    if (next == labels) break;
    labels = std::move(next);
    centers = Matrix(k, x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) centers(labels[i], j) += x(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < x.cols(); ++j) centers(c, j) /= static_cast<double>(count[c]);
    }
  }
  return labels;
}

// Best-improvement single-node moves on the min-max cut objective.
Labels refine(const Matrix& w, Labels labels, std::size_t k) {
  const std::size_t n = w.rows();
  // link[i][c] = sum of w(i, j) over j in cluster c
  Matrix link(n, k);
  std::vector<double> within(k, 0.0), volume(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++count[labels[i]];
    for (std::size_t j = 0; j < n; ++j) {
      link(i, labels[j]) += w(i, j);
      volume[labels[i]] += w(i, j);
      if (labels[i] == labels[j]) within[labels[i]] += w(i, j);
    }
  }
  auto term = [](double vol, double win) { return win > 0.0 ? (vol - win) / win : std::numeric_limits<double>::infinity(); };

  for (std::size_t pass = 0; pass < 10 * n * k + 10; ++pass) {
    double best_delta = -1e-12;
    std::size_t best_i = n, best_c = k;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = labels[i];
      if (count[a] < 2) continue;
      double deg = 0.0;
      for (std::size_t c = 0; c < k; ++c) deg += link(i, c);
      const double self = w(i, i);
      const double win_a = within[a] - 2.0 * link(i, a) + self;
      const double vol_a = volume[a] - deg;
      const double before_a = term(volume[a], within[a]);
      const double after_a = term(vol_a, win_a);
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double win_b = within[b] + 2.0 * link(i, b) + self;
        const double vol_b = volume[b] + deg;
        const double delta = after_a + term(vol_b, win_b) - before_a - term(volume[b], within[b]);
        if (delta < best_delta) {
          best_delta = delta;
          best_i = i;
          best_c = b;
        }
      }
    }
    if (best_i == n) break;
    const std::size_t a = labels[best_i], b = best_c;
    double deg = 0.0;
    for (std::size_t c = 0; c < k; ++c) deg += link(best_i, c);
    within[a] += -2.0 * link(best_i, a) + w(best_i, best_i);
    within[b] += 2.0 * link(best_i, b) + w(best_i, best_i);
    volume[a] -= deg;
    volume[b] += deg;
    --count[a];
    ++count[b];
    labels[best_i] = b;
    for (std::size_t j = 0; j < n; ++j) {
      link(j, a) -= w(j, best_i);
      link(j, b) += w(j, best_i);
    }
  }
  return labels;
}

Labels partition_connected(const Matrix& w, std::size_t k, std::size_t iterations) {
  const std::size_t n = w.rows();
  if (k == 1) return Labels(n, 0);
  if (k == n) {
    Labels l(n);
    std::iota(l.begin(), l.end(), 0);
    return l;
  }
  Eigen::MatrixXd lap(n, n);
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += w(i, j);
    inv_sqrt[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      lap(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * w(i, j) * inv_sqrt[j];
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::numeric, "eigendecomposition did not converge");
  Matrix embed(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      embed(i, c) = solver.eigenvectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      norm += embed(i, c) * embed(i, c);
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (std::size_t c = 0; c < k; ++c) embed(i, c) /= norm;
    }
  }
  return refine(w, kmeans(embed, k, iterations), k);
}

Matrix submatrix(const Matrix& w, const Labels& idx) {
  Matrix out(idx.size(), idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = 0; b < idx.size(); ++b) out(a, b) = w(idx[a], idx[b]);
  }
  return out;
}

}  // namespace

ContentGraph build_affinity(const std::vector<ContentVector>& contents) {
  if (contents.size() < 2) throw Error(ErrorKind::invalid_argument, "affinity graph needs at least two nodes");
  const std::size_t e = contents.front().dim();
  if (e == 0) throw Error(ErrorKind::invalid_argument, "content vectors are empty");
  Matrix nodes(contents.size(), e);
  for (std::size_t i = 0; i < contents.size(); ++i) {
    if (contents[i].dim() != e) throw Error(ErrorKind::dimension_mismatch, "content vectors differ in width");
    std::copy(contents[i].values.begin(), contents[i].values.end(), nodes.row(i).begin());
  }
  if (!nodes.all_finite()) throw Error(ErrorKind::numeric, "content vectors have non-finite entries");
  Matrix w = kernels::affinity(nodes);
  return ContentGraph{std::move(w), std::move(nodes)};
}

ContentGraph graph_from_weights(Matrix weights) {
  if (weights.rows() != weights.cols() || weights.rows() < 2) {
    throw Error(ErrorKind::invalid_argument, "weight matrix must be square with n >= 2");
  }
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      const double v = weights(i, j);
      if (!std::isfinite(v) || v < 0.0) throw Error(ErrorKind::invalid_argument, "weights must be finite and >= 0");
      if (v != weights(j, i)) throw Error(ErrorKind::invalid_argument, "weight matrix is not symmetric");
    }
  }
  return ContentGraph{std::move(weights), Matrix()};
}

double minmax_cut_objective(const Matrix& w, const Labels& labels, std::size_t clusters) {
  if (labels.size() != w.rows()) throw Error(ErrorKind::dimension_mismatch, "label count != node count");
  std::vector<double> cut(clusters, 0.0), within(clusters, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= clusters) throw Error(ErrorKind::invalid_argument, "label out of range");
    for (std::size_t j = 0; j < labels.size(); ++j) {
      (labels[i] == labels[j] ? within : cut)[labels[i]] += w(i, j);
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < clusters; ++c) {
    total += within[c] > 0.0 ? cut[c] / within[c] : std::numeric_limits<double>::infinity();
  }
  return total;
}

ClusterAssignment minmax_cut_partition(const ContentGraph& graph, std::size_t clusters,
                                       const PartitionOptions& options) {
  const Matrix& w = graph.weights;
  const std::size_t n = w.rows();
  if (n == 0 || w.cols() != n) throw Error(ErrorKind::invalid_argument, "graph has no nodes");
  if (clusters == 0 || clusters > n) {
    throw Error(ErrorKind::invalid_argument,
                "cluster count " + std::to_string(clusters) + " must be in [1, " + std::to_string(n) + "]");
  }
  if ((clusters == 1 || clusters == n) && !options.allow_degenerate) {
    throw Error(ErrorKind::invalid_argument, "L = 1 or L = n needs the degenerate-partition flag");
  }

  const auto comps = connected_components(w);
  Labels labels(n, 0);
  if (comps.size() == 1) {
    labels = partition_connected(w, clusters, options.kmeans_iterations);
  } else {
    // One cluster per component, merging the smallest components when there
    // are too many and splitting the largest per-cluster ones when too few.
    std::vector<std::size_t> share(comps.size(), 1);
    std::vector<std::size_t> owner(comps.size());
    std::iota(owner.begin(), owner.end(), 0);
    std::size_t groups = comps.size();
    if (groups > clusters) {
      std::vector<std::size_t> order(comps.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return comps[a].size() > comps[b].size(); });
      for (std::size_t r = clusters; r < order.size(); ++r) owner[order[r]] = order[clusters - 1];
      groups = clusters;
    }
    for (std::size_t extra = clusters - groups; extra > 0; --extra) {
      std::size_t pick = comps.size();
      double best = 0.0;
      for (std::size_t c = 0; c < comps.size(); ++c) {
        if (owner[c] != c || share[c] >= comps[c].size()) continue;
        const double ratio = static_cast<double>(comps[c].size()) / static_cast<double>(share[c]);
        if (ratio > best) {
          best = ratio;
          pick = c;
        }
      }
      ++share[pick];
    }
    std::size_t base = 0;
    std::vector<std::size_t> offset(comps.size(), 0);
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (owner[c] != c) continue;
      offset[c] = base;
      const Labels local = partition_connected(submatrix(w, comps[c]), share[c], options.kmeans_iterations);
      for (std::size_t a = 0; a < comps[c].size(); ++a) labels[comps[c][a]] = base + local[a];
      base += share[c];
    }
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (owner[c] != c) {
        for (auto i : comps[c]) labels[i] = offset[owner[c]];
      }
    }
  }

  ClusterAssignment out;
  out.labels = canonicalize(labels, clusters);
  out.clusters = clusters;
  out.components = comps.size();
  out.objective = minmax_cut_objective(w, out.labels, clusters);
  if (graph.nodes.rows() == n) {
    out.centroids.assign(clusters, ContentVector{std::vector<double>(graph.nodes.cols(), 0.0)});
    std::vector<std::size_t> count(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[out.labels[i]];
      auto& c = out.centroids[out.labels[i]].values;
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += graph.nodes(i, j);
    }
    for (std::size_t k = 0; k < clusters; ++k) {
      for (double& v : out.centroids[k].values) v /= static_cast<double>(count[k]);
    }
  }
  return out;
}

std::size_t default_cluster_count(std::size_t n) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n) / 10.0))));
}

ClusterAssignment cluster_contents(const Backbone& model, const StyleCorpus& corpus, std::size_t clusters,
                                   const PartitionOptions& options) {
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "cannot cluster an empty corpus");
  std::vector<ContentVector> contents;
  contents.reserve(corpus.size());
  for (const auto& p : corpus.pairs) contents.push_back(model.encode_content(p.source));
  if (contents.size() == 1) {
    if (clusters != 1) throw Error(ErrorKind::invalid_argument, "a single sentence admits only one cluster");
    return ClusterAssignment{{0}, 1, {contents.front()}, 0.0, 1};
  }
  return minmax_cut_partition(build_affinity(contents), clusters, options);
}

void export_assignment_jsonl(const ClusterAssignment& assignment, const StyleCorpus& corpus,
                             const std::filesystem::path& path) {
  if (assignment.labels.size() != corpus.size()) {
    throw Error(ErrorKind::dimension_mismatch, "assignment does not match corpus size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::ordered_json j;
    j["pair_index"] = i;
    j["cluster_index"] = assignment.labels[i];
    j["source"] = detokenize(corpus.pairs[i].source);
    out << j.dump() << '\n';
  }
}

}  // namespace settp
