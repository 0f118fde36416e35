#pragma once

// Contrastive training loop: full passes over the buffer in shuffled batch
// order, Adam updates, a per-epoch mean loss curve, and an optional
// checkpoint at the end. Everything downstream of the seed is deterministic,
// so identical seeds produce bit-identical checkpoints.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cswm/adam.hpp"
#include "cswm/model.hpp"

namespace cswm {

struct TrainResult {
  std::vector<double> loss_curve;  // per-sample mean loss, one entry per epoch
  int64_t batches_per_epoch = 0;
};

using EpochCallback = std::function<void(int64_t epoch, double mean_loss)>;
using BatchCallback =
    std::function<void(int64_t epoch, int64_t batch_index, const Batch&)>;

inline std::string param_norm_summary(WorldModel& model) {
  double total_sq = 0.0, worst = -1.0;
  std::string worst_name;
  model.visit_params([&](const std::string& name, Tensor& t) {
    double sq = 0.0;
    const float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
      sq += static_cast<double>(p[i]) * p[i];
    total_sq += sq;
    if (sq > worst) {
      worst = sq;
      worst_name = name;
    }
  });
  return detail::msg_cat("total param L2 ", std::sqrt(total_sq), ", largest ",
                         worst_name, " at ", std::sqrt(std::max(worst, 0.0)));
}

inline TrainResult train_model(WorldModel& model, const ExperienceBuffer& buffer,
                               const TrainConfig& tc,
                               const std::string& checkpoint_path = "",
                               const EpochCallback& on_epoch = {},
                               const BatchCallback& on_batch = {}) {
  tc.validate();
  CSWM_CHECK(buffer.split == "train", "training expects a buffer tagged 'train', got '",
             buffer.split, "'");
  CSWM_CHECK(buffer.env.kind == model.cfg.env, "buffer env does not match model env");
  int64_t n = buffer.transition_count();
  CSWM_CHECK(tc.batch_size <= n, "batch size ", tc.batch_size, " exceeds the ",
             n, " transitions in the buffer");

  Adam opt(AdamHyper{tc.lr, 0.9f, 0.999f, 1e-8f});
  for (Tensor& p : model.parameters()) opt.add_param(p);

  Rng rng(tc.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  TrainResult result;
  result.batches_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (int64_t start = 0, bi = 0; start < n; start += tc.batch_size, ++bi) {
      int64_t count = std::min(tc.batch_size, n - start);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
      Batch batch = make_batch(buffer, std::move(idx), rng);
      if (on_batch) on_batch(epoch, bi, batch);
      try {
        Tape tape;
        LossTerms terms = model.contrastive_loss(&tape, batch, true);
        loss_sum += static_cast<double>(terms.loss.data()[0]) * count;
        opt.zero_grad();
        tape.backward(terms.loss);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError(detail::msg_cat("training aborted at epoch ", epoch,
                                           ", batch ", bi, ": ", e.what(), "; ",
                                           param_norm_summary(model)));
      }
    }
    double mean_loss = loss_sum / static_cast<double>(n);
    result.loss_curve.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }

  if (!checkpoint_path.empty()) model.save(checkpoint_path);
  return result;
}

}  // namespace cswm
