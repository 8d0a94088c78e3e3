#include "tonel/nato_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"
#include "tonel/rng.hpp"

namespace tonel {
namespace {

int argmax(std::span<const float> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

struct EpochStats {
  double loss = 0.0;
  double acc = 0.0;
};

// quantized, noiseless forward over a fixed index set (the query-time path)
EpochStats evaluate_split(const TonelModel& model, const EmbeddingSet& set,
                          const std::vector<int>& labels,
                          const std::vector<uint32_t>& idx,
                          const TrainConfig& cfg) {
  EpochStats stats;
  if (idx.empty()) return stats;
  const std::size_t d_out = model.cfg.d_out;
  std::vector<double> losses(idx.size());
  std::vector<uint8_t> hits(idx.size());
  parallel_for(idx.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const uint32_t row = idx[i];
      auto z = project(model, set.row(row));
      std::vector<float> z_pred;
      if (cfg.surrogate) {
        z_pred = std::move(z);
      } else {
        z_pred = fake_quantize(std::span<const float>(z.data(), d_out), cfg.quant)
                     .values;
      }
      const auto logits = predict_logits(model, z_pred);
      const auto [loss, dlogits] = ce_loss_and_grad(logits, labels[row]);
      losses[i] = loss;
      hits[i] = argmax(logits) == labels[row];
    }
  });
  for (std::size_t i = 0; i < idx.size(); ++i) {
    stats.loss += losses[i];
    stats.acc += hits[i];
  }
  stats.loss /= static_cast<double>(idx.size());
  stats.acc /= static_cast<double>(idx.size());
  return stats;
}

}  // namespace

std::pair<TonelModel, TrainReport> train(const LabeledSet& data,
                                         const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (data.set == nullptr) fail(ErrorCode::kBadConfig, "train: no embedding set");
  const EmbeddingSet& set = *data.set;
  const std::size_t n = set.count;
  if (n == 0) fail(ErrorCode::kBadConfig, "train: empty embedding set");
  if (cfg.validation_fraction < 0.0f || cfg.validation_fraction > 0.5f)
    fail(ErrorCode::kBadConfig, "validation_fraction must be in [0, 0.5]");
  if (cfg.batch_size < 1 || cfg.epochs < 0)
    fail(ErrorCode::kBadConfig, "batch_size must be >= 1 and epochs >= 0");

  // resolve labels of the configured source
  const bool pseudo = cfg.label_source == LabelSource::kPseudo;
  const auto& source = pseudo ? data.pseudo_labels : data.true_labels;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!source[i])
      fail(ErrorCode::kMissingLabels,
           std::string("document ") + std::to_string(i) + " has no " +
               (pseudo ? "pseudo" : "true") + " label");
    labels[i] = *source[i];
  }
  const int classes = pseudo ? data.pseudo_classes : data.true_classes;
  if (classes < 2)
    fail(ErrorCode::kBadConfig, "training needs at least 2 classes, got " +
                                    std::to_string(classes));

  ModelConfig mc;
  mc.d_in = static_cast<int>(set.dim);
  mc.d_out = cfg.d_out;
  mc.classes = classes;
  mc.arch = cfg.arch;
  mc.hidden = cfg.hidden;
  TonelModel model = init_model(mc, cfg.seed);

  // deterministic train/validation split
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), uint32_t{0});
  {
    RngStream rng(cfg.seed, RngContext::kSplit);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng.next_below(static_cast<uint32_t>(i));
      std::swap(order[i - 1], order[j]);
    }
  }
  const std::size_t val_count = static_cast<std::size_t>(
      std::llround(static_cast<double>(cfg.validation_fraction) *
                   static_cast<double>(n)));
  std::vector<uint32_t> val_idx(order.begin(), order.begin() + val_count);
  std::vector<uint32_t> train_idx(order.begin() + val_count, order.end());
  if (train_idx.empty()) fail(ErrorCode::kBadConfig, "train split is empty");

  NoiseConfig noise;
  noise.profile = cfg.device_profile ? *cfg.device_profile
                                     : profile_by_name(cfg.device);
  noise.sigma_scale = cfg.sigma_scale;
  noise.seed = cfg.seed;

  TrainReport report;
  TonelModel best = model;
  const std::size_t d_in = set.dim;
  const std::size_t d_out = model.cfg.d_out;

  std::vector<float> batch_x;
  std::vector<uint32_t> batch_rows;
  ForwardCache cache;
  OptimizerState opt = make_optimizer(model, cfg.optimizer);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // fresh pass order each epoch
    RngStream shuffle(cfg.seed, RngContext::kShuffle,
                      static_cast<uint32_t>(epoch));
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      const std::size_t j = shuffle.next_below(static_cast<uint32_t>(i));
      std::swap(train_idx[i - 1], train_idx[j]);
    }

    double epoch_loss = 0.0;
    std::size_t epoch_hits = 0;
    for (std::size_t begin = 0; begin < train_idx.size();
         begin += cfg.batch_size) {
      const std::size_t end =
          std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t batch = end - begin;
      batch_rows.assign(train_idx.begin() + begin, train_idx.begin() + end);
      batch_x.resize(batch * d_in);
      for (std::size_t s = 0; s < batch; ++s) {
        const auto row = set.row(batch_rows[s]);
        std::copy(row.begin(), row.end(), batch_x.begin() + s * d_in);
      }

      project_batch(model, batch_x.data(), batch, cache);
      cache.z_pred.resize(batch * d_out);
      cache.pass.resize(batch * d_out);
      if (cfg.surrogate) {
        std::copy(cache.z.begin(), cache.z.end(), cache.z_pred.begin());
        std::fill(cache.pass.begin(), cache.pass.end(), uint8_t{1});
      } else {
        parallel_for(batch, [&](std::size_t s0, std::size_t s1) {
          for (std::size_t s = s0; s < s1; ++s) {
            const std::span<const float> z(cache.z.data() + s * d_out, d_out);
            const auto fq = fake_quantize(z, cfg.quant);
            std::vector<float> z_noisy;
            if (cfg.sigma_scale > 0.0f) {
              // noise is a pure function of (seed, epoch, dataset row)
              RngStream rng(cfg.seed, RngContext::kTrainNoise, batch_rows[s],
                            static_cast<uint32_t>(epoch));
              z_noisy = training_noise(fq.values, fq.quantized, noise, rng);
            } else {
              z_noisy = fq.values;
            }
            std::copy(z_noisy.begin(), z_noisy.end(),
                      cache.z_pred.begin() + s * d_out);
            std::copy(fq.pass.begin(), fq.pass.end(),
                      cache.pass.begin() + s * d_out);
          }
        });
      }

      const auto logits = predict_batch(model, cache);
      std::vector<float> dlogits(batch * model.cfg.classes);
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < batch; ++s) {
        const std::span<const float> ls(logits.data() + s * model.cfg.classes,
                                        model.cfg.classes);
        const int label = labels[batch_rows[s]];
        auto [loss, dl] = ce_loss_and_grad(ls, label);
        batch_loss += loss;
        epoch_hits += argmax(ls) == label;
        std::copy(dl.begin(), dl.end(),
                  dlogits.begin() + s * model.cfg.classes);
      }
      batch_loss /= static_cast<double>(batch);
      if (!std::isfinite(batch_loss))
        fail(ErrorCode::kDivergedTraining,
             "training diverged (non-finite loss) at epoch " +
                 std::to_string(epoch) + ", batch " +
                 std::to_string(begin / cfg.batch_size));
      epoch_loss += batch_loss * static_cast<double>(batch);

      const GradientBundle grads = backward(model, cache, dlogits);
      optimizer_step(model, grads, opt);
    }
    if (!all_finite(model))
      fail(ErrorCode::kDivergedTraining,
           "training diverged (non-finite parameters) after epoch " +
               std::to_string(epoch));

    report.train_loss.push_back(epoch_loss / static_cast<double>(train_idx.size()));
    report.train_acc.push_back(static_cast<double>(epoch_hits) /
                               static_cast<double>(train_idx.size()));
    if (!val_idx.empty()) {
      const EpochStats val = evaluate_split(model, set, labels, val_idx, cfg);
      report.val_loss.push_back(val.loss);
      report.val_acc.push_back(val.acc);
      if (report.best_epoch < 0 || val.acc > report.best_val_acc) {
        report.best_epoch = epoch;
        report.best_val_acc = val.acc;
        best = model;
      }
    }
    report.epochs_run = epoch + 1;
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (val_idx.empty() || report.best_epoch < 0) return {std::move(model), report};
  return {std::move(best), report};
}

std::vector<CimVector> embed_corpus(const TonelModel& m, const EmbeddingSet& set,
                                    const QuantConfig& cfg) {
  ModelProjector projector(m);
  return quantize_corpus(projector, set, cfg);
}

}  // namespace tonel
