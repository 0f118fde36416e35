#pragma once

// Evaluation: multi-step latent rollouts, ranking metrics (hits at k, mean
// reciprocal rank) against reference encodings, and transition-graph export.
//
// Observations are encoded once; rollouts stay in latent space. All ranking
// distances are squared Euclidean over flattened slot vectors, accumulated in
// double so results match a double-precision oracle bit for bit. Ties rank
// optimistically (strictly closer references only).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cswm/model.hpp"

namespace cswm {

struct RankingResult {
  int64_t steps = 0;
  std::vector<int64_t> ranks;      // one per query, 1-based
  double mrr = 0.0;                // mean of 1/rank
  std::map<int64_t, double> hits;  // k -> fraction of ranks <= k
};

namespace detail {

inline double sq_dist(const float* a, const float* b, int64_t f) {
  double acc = 0.0;
  for (int64_t j = 0; j < f; ++j) {
    double d = static_cast<double>(a[j]) - b[j];
    acc += d * d;
  }
  return acc;
}

// 1 + number of references strictly closer to pred than truth is.
inline int64_t rank_among(const float* pred, const float* truth,
                          const float* refs, int64_t n_refs, int64_t f) {
  double dt = sq_dist(pred, truth, f);
  int64_t closer = 0;
  for (int64_t r = 0; r < n_refs; ++r)
    if (sq_dist(pred, refs + r * f, f) < dt) ++closer;
  return 1 + closer;
}

}  // namespace detail

// predicted and true_encoding are flat (F,) vectors; references is (N, F)
// and is expected to contain the true encoding.
inline int64_t rank_prediction(const Tensor& predicted, const Tensor& true_encoding,
                               const Tensor& references) {
  CSWM_CHECK(references.defined() && references.ndim() == 2 && references.dim(0) > 0,
             "rank_prediction: reference set must be nonempty");
  int64_t f = references.dim(1);
  CSWM_CHECK(predicted.numel() == f && true_encoding.numel() == f,
             "rank_prediction: dimension mismatch, references are ", f, "-dim");
  return detail::rank_among(predicted.data(), true_encoding.data(),
                            references.data(), references.dim(0), f);
}

// Latents of every frame in the buffer, shape (episodes*(steps+1), S, D),
// row index e*(steps+1)+s. Batch-norm runs in inference mode.
inline Tensor encode_buffer(WorldModel& model, const ExperienceBuffer& buf,
                            int64_t batch_size = 256) {
  CSWM_CHECK(buf.env.kind == model.cfg.env, "encode_buffer: buffer env '",
             to_string(buf.env.kind), "' does not match model env '",
             to_string(model.cfg.env), "'");
  int64_t total = buf.episodes * (buf.steps + 1);
  int64_t fs = buf.frame_size();
  int64_t s = model.cfg.slot_count(), d = model.cfg.slot_dim();
  Tensor out = Tensor::zeros({total, s, d});
  for (int64_t start = 0; start < total; start += batch_size) {
    int64_t count = std::min(batch_size, total - start);
    Tensor obs = Tensor::zeros({count, buf.env.obs_channels(), GridSpec::image_px,
                                GridSpec::image_px});
    std::memcpy(obs.data(), buf.frames.data() + start * fs,
                static_cast<size_t>(count * fs) * sizeof(float));
    Tensor z = model.encode(nullptr, obs, false);
    std::memcpy(out.data() + start * s * d, z.data(),
                static_cast<size_t>(count * s * d) * sizeof(float));
  }
  return out;
}

// Encode the starting observations once, then apply the transition n times in
// latent space. actions[i] is the step-i action tensor (undefined for physics).
inline Tensor rollout(WorldModel& model, const Tensor& obs_start,
                      const std::vector<Tensor>& actions) {
  CSWM_CHECK(!actions.empty(), "rollout: need at least one step");
  Tensor z = model.encode(nullptr, obs_start, false);
  for (const Tensor& a : actions) z = model.predict_next(nullptr, z, a);
  return z;
}

// Rank n-step latent rollouts against the encodings of all n-step-target
// observations in the buffer (one global reference set per n). Deterministic:
// no sampling anywhere in the metric path.
inline std::vector<RankingResult> evaluate(WorldModel& model,
                                           const ExperienceBuffer& buf,
                                           const std::vector<int64_t>& steps = {1, 5, 10},
                                           const std::vector<int64_t>& ks = {1}) {
  CSWM_CHECK(!steps.empty(), "evaluate: need at least one step count");
  for (int64_t n : steps) {
    CSWM_CHECK(n >= 1, "evaluate: step counts must be positive");
    CSWM_CHECK(n <= buf.steps, "evaluate: ", n, "-step rollouts need episodes with at least ",
               n, " transitions, buffer has ", buf.steps);
  }
  for (int64_t k : ks) CSWM_CHECK(k >= 1, "evaluate: hits@k needs k >= 1");

  Tensor all_z = encode_buffer(model, buf);
  int64_t s = model.cfg.slot_count(), d = model.cfg.slot_dim(), f = s * d;
  int64_t frames_per_ep = buf.steps + 1;

  std::vector<RankingResult> results;
  for (int64_t n : steps) {
    int64_t starts_per_ep = buf.steps - n + 1;
    int64_t q_total = buf.episodes * starts_per_ep;

    // queries in (episode, start) order; the reference set is exactly the
    // per-query target encodings
    Tensor pred = Tensor::zeros({q_total, s, d});
    Tensor refs = Tensor::zeros({q_total, f});
    for (int64_t e = 0; e < buf.episodes; ++e)
      for (int64_t t = 0; t < starts_per_ep; ++t) {
        int64_t q = e * starts_per_ep + t;
        std::memcpy(pred.data() + q * f, all_z.data() + (e * frames_per_ep + t) * f,
                    static_cast<size_t>(f) * sizeof(float));
        std::memcpy(refs.data() + q * f,
                    all_z.data() + (e * frames_per_ep + t + n) * f,
                    static_cast<size_t>(f) * sizeof(float));
      }

    for (int64_t i = 0; i < n; ++i) {
      Tensor a;
      if (buf.action_size() > 0) {
        a = Tensor::zeros({q_total, GridSpec::objects, 4});
        for (int64_t e = 0; e < buf.episodes; ++e)
          for (int64_t t = 0; t < starts_per_ep; ++t) {
            int64_t q = e * starts_per_ep + t;
            const uint8_t* row = buf.action_at(e * buf.steps + t + i);
            for (int64_t j = 0; j < buf.action_size(); ++j)
              a.data()[q * buf.action_size() + j] = row[j];
          }
      }
      pred = model.predict_next(nullptr, pred, a);
    }

    RankingResult r;
    r.steps = n;
    r.ranks.resize(static_cast<size_t>(q_total));
    double inv_sum = 0.0;
    for (int64_t q = 0; q < q_total; ++q) {
      int64_t rank = detail::rank_among(pred.data() + q * f, refs.data() + q * f,
                                        refs.data(), q_total, f);
      r.ranks[static_cast<size_t>(q)] = rank;
      inv_sum += 1.0 / static_cast<double>(rank);
    }
    r.mrr = inv_sum / static_cast<double>(q_total);
    for (int64_t k : ks) {
      int64_t within = 0;
      for (int64_t rank : r.ranks)
        if (rank <= k) ++within;
      r.hits[k] = static_cast<double>(within) / static_cast<double>(q_total);
    }
    results.push_back(std::move(r));
  }
  return results;
}

// ---- transition graph export ----

struct GraphNode {
  int64_t id = 0, episode = 0, t = 0;
  std::vector<float> latent;  // chosen slot's latent, or the full state
  double x = 0.0, y = 0.0;    // 2-d plot coordinates
};

struct GraphEdge {
  int64_t src = 0, dst = 0;
  std::string action;  // empty when the env has no action encoding
  std::string kind;    // "ground_truth" or "predicted"
};

struct TransitionGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is row-major
// n x n and is destroyed; eigenvectors end up as columns of v.
inline void jacobi_eig(std::vector<double>& a, int64_t n, std::vector<double>& v) {
  v.assign(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int64_t i = 0; i < n; ++i) {
          double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (int64_t i = 0; i < n; ++i) {
          double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (int64_t i = 0; i < n; ++i) {
          double vip = v[i * n + p], viq = v[i * n + q];
          v[i * n + p] = c * vip - s * viq;
          v[i * n + q] = s * vip + c * viq;
        }
      }
  }
}

// Top-2 principal directions of rows(N x f), column-major pair (f x 2).
inline std::vector<double> pca_top2(const std::vector<double>& rows, int64_t n,
                                    int64_t f, std::vector<double>& mean_out) {
  mean_out.assign(static_cast<size_t>(f), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) mean_out[j] += rows[i * f + j];
  for (int64_t j = 0; j < f; ++j) mean_out[j] /= static_cast<double>(n);
  std::vector<double> cov(static_cast<size_t>(f * f), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) {
      double dj = rows[i * f + j] - mean_out[j];
      for (int64_t k = j; k < f; ++k)
        cov[j * f + k] += dj * (rows[i * f + k] - mean_out[k]);
    }
  for (int64_t j = 0; j < f; ++j)
    for (int64_t k = 0; k < j; ++k) cov[j * f + k] = cov[k * f + j];
  for (double& c : cov) c /= static_cast<double>(n);

  std::vector<double> vecs;
  jacobi_eig(cov, f, vecs);
  // cov now holds eigenvalues on its diagonal
  std::vector<int64_t> idx(static_cast<size_t>(f));
  for (int64_t i = 0; i < f; ++i) idx[static_cast<size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return cov[a * f + a] > cov[b * f + b];
  });
  std::vector<double> proj(static_cast<size_t>(f * 2));
  for (int64_t j = 0; j < f; ++j) {
    proj[j * 2 + 0] = vecs[j * f + idx[0]];
    proj[j * 2 + 1] = vecs[j * f + idx[1]];
  }
  return proj;
}

inline std::string action_label(const uint8_t* row, int64_t k_objects) {
  static const char* dirs[4] = {"north", "south", "east", "west"};
  std::string label;
  for (int64_t k = 0; k < k_objects; ++k)
    for (int64_t d = 0; d < 4; ++d)
      if (row[k * 4 + d]) {
        if (!label.empty()) label += "+";
        label += "obj" + std::to_string(k) + ":" + dirs[d];
      }
  return label.empty() ? "noop" : label;
}

}  // namespace detail

// One node per encoded observation; each recorded transition contributes a
// ground-truth edge and a predicted edge between the same consecutive nodes.
// slot in [0, K) plots that slot's latent; slot -1 plots the full state.
// Coordinates are the latent directly when 2-d, else its top-2 principal
// components (fit over the exported latents).
inline TransitionGraph build_transition_graph(WorldModel& model,
                                              const ExperienceBuffer& buf,
                                              int64_t slot = -1) {
  int64_t s = model.cfg.slot_count(), d = model.cfg.slot_dim();
  CSWM_CHECK(slot >= -1 && slot < s, "graph: slot ", slot, " out of range for ",
             s, " slots");
  Tensor all_z = encode_buffer(model, buf);
  int64_t frames_per_ep = buf.steps + 1;
  int64_t total = buf.episodes * frames_per_ep;
  int64_t f = slot < 0 ? s * d : d;

  TransitionGraph g;
  g.nodes.resize(static_cast<size_t>(total));
  std::vector<double> rows(static_cast<size_t>(total * f));
  for (int64_t e = 0; e < buf.episodes; ++e)
    for (int64_t t = 0; t < frames_per_ep; ++t) {
      int64_t id = e * frames_per_ep + t;
      const float* z = all_z.data() + id * s * d + (slot < 0 ? 0 : slot * d);
      GraphNode& node = g.nodes[static_cast<size_t>(id)];
      node.id = id;
      node.episode = e;
      node.t = t;
      node.latent.assign(z, z + f);
      for (int64_t j = 0; j < f; ++j) rows[id * f + j] = z[j];
    }

  if (f == 2) {
    for (GraphNode& node : g.nodes) {
      node.x = node.latent[0];
      node.y = node.latent[1];
    }
  } else {
    std::vector<double> mean;
    std::vector<double> proj = detail::pca_top2(rows, total, f, mean);
    for (GraphNode& node : g.nodes) {
      double x = 0.0, y = 0.0;
      for (int64_t j = 0; j < f; ++j) {
        double c = node.latent[static_cast<size_t>(j)] - mean[j];
        x += c * proj[j * 2 + 0];
        y += c * proj[j * 2 + 1];
      }
      node.x = x;
      node.y = y;
    }
  }

  for (int64_t e = 0; e < buf.episodes; ++e)
    for (int64_t t = 0; t < buf.steps; ++t) {
      int64_t src = e * frames_per_ep + t, dst = src + 1;
      std::string label;
      if (buf.action_size() > 0)
        label = detail::action_label(buf.action_at(e * buf.steps + t),
                                     GridSpec::objects);
      g.edges.push_back({src, dst, label, "ground_truth"});
      g.edges.push_back({src, dst, label, "predicted"});
    }
  return g;
}

inline void write_graph_files(const TransitionGraph& g, const std::string& prefix) {
  Json j;
  j["nodes"] = Json::array();
  for (const GraphNode& n : g.nodes)
    j["nodes"].push_back({{"id", n.id},
                          {"episode", n.episode},
                          {"t", n.t},
                          {"coords", {n.x, n.y}},
                          {"latent", n.latent}});
  j["edges"] = Json::array();
  for (const GraphEdge& e : g.edges)
    j["edges"].push_back(
        {{"src", e.src}, {"dst", e.dst}, {"action", e.action}, {"kind", e.kind}});
  const std::string json_path = prefix + ".json";
  std::ofstream jf(json_path, std::ios::binary);
  if (!jf.good()) throw FormatError("cannot write '" + json_path + "'");
  jf << j.dump(1) << "\n";
  if (!jf.good()) throw FormatError("failed writing '" + json_path + "'");
  jf.close();

  const std::string dot_path = prefix + ".dot";
  std::ofstream df(dot_path, std::ios::binary);
  if (!df.good()) throw FormatError("cannot write '" + dot_path + "'");
  df << "digraph transitions {\n  node [shape=point width=0.05];\n";
  for (const GraphNode& n : g.nodes)
    df << "  n" << n.id << " [pos=\"" << n.x << "," << n.y << "!\"];\n";
  for (const GraphEdge& e : g.edges) {
    df << "  n" << e.src << " -> n" << e.dst << " [kind=\"" << e.kind << "\"";
    if (e.kind == "predicted") df << " style=dashed color=crimson";
    if (!e.action.empty()) df << " label=\"" << e.action << "\"";
    df << "];\n";
  }
  df << "}\n";
  if (!df.good()) throw FormatError("failed writing '" + dot_path + "'");
}

inline TransitionGraph export_graph(WorldModel& model, const ExperienceBuffer& buf,
                                    int64_t slot, const std::string& prefix) {
  TransitionGraph g = build_transition_graph(model, buf, slot);
  write_graph_files(g, prefix);
  return g;
}

}  // namespace cswm
