#pragma once

// World model networks: object extractor (conv), shared per-object encoder
// (MLP), relational transition model (message passing over object slots), and
// the contrastive hinge losses over latent energies.
//
// Slot layout convention: extractor channel k*F+f is feature map f of object
// slot k. The structureless variant keeps the extractor unchanged and folds
// all maps into a single wide slot downstream.

#include <string>
#include <vector>

#include "cswm/checkpoint.hpp"
#include "cswm/config.hpp"
#include "cswm/data.hpp"
#include "cswm/nn.hpp"

namespace cswm {

struct ObjectExtractor {
  Conv2d c1, c2;
  BatchNorm2d bn;
  EnvKind env = EnvKind::shapes2d;

  static ObjectExtractor create(Rng& rng, const ModelConfig& cfg) {
    ObjectExtractor ex;
    ex.env = cfg.env;
    int64_t maps = cfg.extractor_maps;
    int64_t out_ch = cfg.num_objects * cfg.features_per_object;
    if (cfg.env == EnvKind::shapes2d) {
      // one 10x10 cell per output position
      ex.c1 = Conv2d::create(rng, 3, maps, 10, 10, 0);
      ex.c2 = Conv2d::create(rng, maps, out_ch, 1, 1, 0);
    } else {
      ex.c1 = Conv2d::create(rng, 6, maps, 9, 1, 4);
      ex.c2 = Conv2d::create(rng, maps, out_ch, 5, 5, 0);
    }
    ex.bn = BatchNorm2d::create(maps);
    return ex;
  }

  // obs (N, C, 50, 50) -> masks (N, K*F, M, M), values in (0,1)
  Tensor forward(Tape* tape, const Tensor& obs, bool training) {
    CSWM_CHECK(obs.ndim() == 4, "extractor: obs must be 4-d, got ",
               shape_str(obs.shape()));
    int64_t want_c = env == EnvKind::shapes2d ? 3 : 6;
    CSWM_CHECK(obs.dim(1) == want_c && obs.dim(2) == 50 && obs.dim(3) == 50,
               "extractor: obs shape ", shape_str(obs.shape()), ", want (N,",
               want_c, ",50,50)");
    Tensor h = bn.forward(tape, c1.forward(tape, obs), training);
    h = env == EnvKind::shapes2d ? relu(tape, h) : leaky_relu(tape, h, 0.01f);
    return sigmoid(tape, c2.forward(tape, h));
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    c1.visit_params(prefix + ".c1", f);
    bn.visit_params(prefix + ".bn", f);
    c2.visit_params(prefix + ".c2", f);
  }
  void visit_buffers(const std::string& prefix, const TensorVisitor& f) {
    bn.visit_buffers(prefix + ".bn", f);
  }
};

struct ObjectEncoder {
  Mlp3 mlp;  // shared across slots
  int64_t slots = 0, in_dim = 0, out_dim = 0;

  static ObjectEncoder create(Rng& rng, const ModelConfig& cfg) {
    ObjectEncoder enc;
    enc.slots = cfg.slot_count();
    enc.in_dim = cfg.encoder_input_dim();
    enc.out_dim = cfg.slot_dim();
    enc.mlp = Mlp3::create(rng, enc.in_dim, cfg.hidden, enc.out_dim);
    return enc;
  }

  // masks (N, K*F, M, M) -> latents (N, S, D); every slot goes through the
  // same weights, so duplicated masks give duplicated latents.
  Tensor forward(Tape* tape, const Tensor& masks) const {
    CSWM_CHECK(masks.ndim() == 4, "encoder: masks must be 4-d");
    int64_t n = masks.dim(0);
    CSWM_CHECK(masks.numel() == n * slots * in_dim, "encoder: mask shape ",
               shape_str(masks.shape()), " does not split into ", slots,
               " slots of ", in_dim);
    Tensor flat = masks.view({n * slots, in_dim});
    Tensor z = mlp.forward(tape, flat);
    return z.view({n, slots, out_dim});
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    mlp.visit_params(prefix + ".mlp", f);
  }
};

// Transition over factored latents. The full model runs one round of message
// passing: an edge MLP over all ordered slot pairs (i, j), i != j, summed at
// the receiving slot, then a node MLP over [z_j, a_j, sum]. Variants without
// edges drop the sum input entirely (narrower node MLP, not zero padding).
struct RelationalTransition {
  Mlp3 edge, node;
  bool use_edges = true;
  int64_t slots = 0, dim = 0, action_dim = 0;

  static RelationalTransition create(Rng& rng, const ModelConfig& cfg) {
    RelationalTransition t;
    t.slots = cfg.slot_count();
    t.dim = cfg.slot_dim();
    t.action_dim = cfg.action_dim();
    t.use_edges = cfg.variant == Variant::cswm;
    if (t.use_edges) t.edge = Mlp3::create(rng, 2 * t.dim, cfg.hidden, t.dim);
    int64_t node_in = t.dim + t.action_dim + (t.use_edges ? t.dim : 0);
    t.node = Mlp3::create(rng, node_in, cfg.hidden, t.dim);
    return t;
  }

  // z (N, S, D), actions (N, S, A) or undefined when A == 0 -> delta (N, S, D)
  Tensor forward(Tape* tape, const Tensor& z, const Tensor& actions) const {
    CSWM_CHECK(z.ndim() == 3 && z.dim(1) == slots && z.dim(2) == dim,
               "transition: latent shape ", shape_str(z.shape()), ", want (N,",
               slots, ",", dim, ")");
    int64_t n = z.dim(0);
    Tensor zf = z.view({n * slots, dim});
    std::vector<Tensor> parts;
    parts.push_back(zf);
    if (action_dim > 0) {
      CSWM_CHECK(actions.defined(), "transition: actions required for this env");
      CSWM_CHECK(actions.numel() == n * slots * action_dim,
                 "transition: action shape ", shape_str(actions.shape()),
                 " does not split into ", slots, " slots of ", action_dim);
      parts.push_back(actions.view({n * slots, action_dim}));
    }
    if (use_edges) {
      if (slots > 1) {
        std::vector<int64_t> src, dst;
        src.reserve(n * slots * (slots - 1));
        dst.reserve(src.capacity());
        for (int64_t b = 0; b < n; ++b)
          for (int64_t j = 0; j < slots; ++j)
            for (int64_t i = 0; i < slots; ++i)
              if (i != j) {
                src.push_back(b * slots + i);
                dst.push_back(b * slots + j);
              }
        Tensor edge_in = concat(
            tape, {gather_rows(tape, zf, src), gather_rows(tape, zf, dst)}, 1);
        Tensor messages = edge.forward(tape, edge_in);
        parts.push_back(scatter_sum_rows(tape, messages, dst, n * slots));
      } else {
        // single slot: empty pair set, the aggregate input is exactly zero
        parts.push_back(Tensor::zeros({n * slots, dim}));
      }
    }
    Tensor delta = node.forward(tape, concat(tape, parts, 1));
    return delta.view({n, slots, dim});
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    if (use_edges) edge.visit_params(prefix + ".edge", f);
    node.visit_params(prefix + ".node", f);
  }
};

// Per-sample energy between a predicted and a target factored latent:
// mean over slots of 0.5/sigma^2 times the squared slot distance.
// pred, target (N, S, D) -> (N,)
inline Tensor energy_from_prediction(Tape* tape, const Tensor& pred,
                                     const Tensor& target, float dist_scale) {
  CSWM_CHECK(pred.ndim() == 3 && pred.shape() == target.shape(),
             "energy: latent shapes ", shape_str(pred.shape()), " vs ",
             shape_str(target.shape()));
  int64_t n = pred.dim(0), s = pred.dim(1), d = pred.dim(2);
  Tensor diff = sub(tape, pred.view({n, s * d}), target.view({n, s * d}));
  Tensor per_sample = sum_axis(tape, mul(tape, diff, diff), 1);
  return scale(tape, per_sample, dist_scale / static_cast<float>(s));
}

// h, h_neg per-sample (N,) -> scalar loss.
// negative_only: mean of h + max(0, margin - h_neg)
// full: mean of max(0, margin + h - h_neg)
inline Tensor hinge_loss(Tape* tape, const Tensor& h, const Tensor& h_neg,
                         float margin, Hinge kind) {
  CSWM_CHECK(h.shape() == h_neg.shape() && h.ndim() == 1,
             "hinge_loss: energies must be matching vectors");
  if (kind == Hinge::negative_only) {
    Tensor hinge = relu(tape, affine_scalar(tape, h_neg, -1.0f, margin));
    return mean_all(tape, add(tape, h, hinge));
  }
  return mean_all(
      tape, relu(tape, affine_scalar(tape, sub(tape, h, h_neg), 1.0f, margin)));
}

struct LossTerms {
  Tensor loss;    // scalar
  Tensor h;       // per-sample positive energy (N,)
  Tensor h_neg;   // per-sample negative energy (N,)
};

struct WorldModel {
  ModelConfig cfg;
  ObjectExtractor extractor;
  ObjectEncoder encoder;
  RelationalTransition transition;

  static WorldModel create(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    WorldModel m;
    m.cfg = cfg;
    Rng master(seed);
    Rng r_ex = master.derive(1), r_enc = master.derive(2), r_tr = master.derive(3);
    m.extractor = ObjectExtractor::create(r_ex, cfg);
    m.encoder = ObjectEncoder::create(r_enc, cfg);
    m.transition = RelationalTransition::create(r_tr, cfg);
    return m;
  }

  Tensor extract(Tape* tape, const Tensor& obs, bool training) {
    return extractor.forward(tape, obs, training);
  }

  // obs -> (N, S, D)
  Tensor encode(Tape* tape, const Tensor& obs, bool training) {
    return encoder.forward(tape, extract(tape, obs, training));
  }

  // Reshape recorded actions (N, K, 4) to the transition's slot layout. The
  // structureless variant sees one slot carrying the concatenated one-hots.
  Tensor prep_actions(const Tensor& actions) const {
    if (cfg.action_dim() == 0) return actions;
    CSWM_CHECK(actions.defined(), "model: actions required for this env");
    int64_t per = cfg.slot_count() * cfg.action_dim();
    CSWM_CHECK(actions.numel() % per == 0, "model: action tensor shape ",
               shape_str(actions.shape()), " does not split into slots of ",
               cfg.action_dim());
    return actions.view({actions.numel() / per, cfg.slot_count(), cfg.action_dim()});
  }

  Tensor transition_delta(Tape* tape, const Tensor& z, const Tensor& actions) const {
    return transition.forward(tape, z, prep_actions(actions));
  }

  Tensor predict_next(Tape* tape, const Tensor& z, const Tensor& actions) const {
    return add(tape, z, transition_delta(tape, z, actions));
  }

  // per-sample energies (N,)
  Tensor energy(Tape* tape, const Tensor& z, const Tensor& actions,
                const Tensor& z_next) const {
    return energy_from_prediction(tape, predict_next(tape, z, actions), z_next,
                                  cfg.energy_scale());
  }
  Tensor energy_negative(Tape* tape, const Tensor& z_neg, const Tensor& z_next) const {
    return energy_from_prediction(tape, z_neg, z_next, cfg.energy_scale());
  }

  // Contrastive loss over a sampled batch. Positives are encoded once;
  // negatives reuse those encodings through the batch's permutation, which
  // matches re-encoding the permuted observations exactly (same batch, same
  // normalization statistics).
  LossTerms contrastive_loss(Tape* tape, const Batch& batch, bool training = true) {
    Tensor z = encode(tape, batch.obs, training);
    Tensor z_next = encode(tape, batch.next_obs, training);
    int64_t n = z.dim(0), s = z.dim(1), d = z.dim(2);
    CSWM_CHECK(static_cast<int64_t>(batch.neg_perm.size()) == n,
               "loss: negative permutation size ", batch.neg_perm.size(),
               " for batch of ", n);
    std::vector<int64_t> rows(static_cast<size_t>(n * s));
    for (int64_t b = 0; b < n; ++b)
      for (int64_t k = 0; k < s; ++k)
        rows[static_cast<size_t>(b * s + k)] = batch.neg_perm[static_cast<size_t>(b)] * s + k;
    Tensor z_neg = gather_rows(tape, z.view({n * s, d}), std::move(rows)).view({n, s, d});

    LossTerms out;
    out.h = energy(tape, z, batch.actions, z_next);
    out.h_neg = energy_negative(tape, z_neg, z_next);
    out.loss = hinge_loss(tape, out.h, out.h_neg, cfg.margin, cfg.hinge);
    return out;
  }

  void visit_params(const TensorVisitor& f) {
    extractor.visit_params("extractor", f);
    encoder.visit_params("encoder", f);
    transition.visit_params("transition", f);
  }
  void visit_buffers(const TensorVisitor& f) {
    extractor.visit_buffers("extractor", f);
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    visit_params([&](const std::string&, Tensor& t) { out.push_back(t); });
    return out;
  }

  void save(const std::string& path) {
    std::vector<NamedTensor> tensors;
    auto grab = [&](const std::string& name, Tensor& t) {
      tensors.push_back({name, t});
    };
    visit_params(grab);
    visit_buffers(grab);
    write_checkpoint(path, cfg.to_json(), tensors);
  }

  static WorldModel load(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    WorldModel m = create(ModelConfig::from_json(ckpt.model_config), 0);
    auto fill = [&](const std::string& name, Tensor& t) {
      const Tensor& src = ckpt.require(name);
      CSWM_CHECK(src.shape() == t.shape(), "checkpoint: tensor '", name,
                 "' has shape ", shape_str(src.shape()), ", model wants ",
                 shape_str(t.shape()));
      std::memcpy(t.data(), src.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    };
    m.visit_params(fill);
    m.visit_buffers(fill);
    return m;
  }
};

}  // namespace cswm
