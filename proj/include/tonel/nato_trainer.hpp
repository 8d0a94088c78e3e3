#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tonel/cim_noise.hpp"
#include "tonel/embedding_store.hpp"
#include "tonel/model_core.hpp"
#include "tonel/projector.hpp"
#include "tonel/quantizer.hpp"

namespace tonel {

enum class LabelSource { kPseudo, kTrue };

struct TrainConfig {
  LabelSource label_source = LabelSource::kPseudo;
  std::string device = "Device-2";
  // resolved profile; when unset the trainer looks the name up itself
  std::optional<DeviceProfile> device_profile;
  float sigma_scale = 1.0f;   // training noise magnitude; 0 disables noise
  int epochs = 30;
  int batch_size = 64;
  OptimizerConfig optimizer{};
  uint64_t seed = 0;
  float validation_fraction = 0.1f;  // [0, 0.5]
  QuantConfig quant{};
  bool surrogate = false;  // skip quantization + noise (diagnostic mode)
  int d_out = 64;
  ProjectionArch arch = ProjectionArch::kAffine;
  int hidden = 128;
};

struct TrainReport {
  std::vector<double> train_loss, train_acc;  // per epoch
  std::vector<double> val_loss, val_acc;      // per epoch (empty when no split)
  int epochs_run = 0;
  int best_epoch = -1;  // -1 when no validation split (final model returned)
  double best_val_acc = 0.0;
  double wall_clock_seconds = 0.0;  // never serialized into artifacts
  std::string checkpoint_path;      // filled by callers that persist the model
};

// Per batch: project -> fake-quantize -> add CiM training noise (fresh draw
// each batch, a pure function of (seed, epoch, sample row)) -> predict ->
// cross-entropy -> straight-through backward -> optimizer step. Returns the
// checkpoint with the best validation label accuracy (quantized, noiseless
// validation forward; earliest epoch wins ties).
std::pair<TonelModel, TrainReport> train(const LabeledSet& data,
                                         const TrainConfig& cfg);

// Projects and quantizes every document row; order matches input ids.
std::vector<CimVector> embed_corpus(const TonelModel& m, const EmbeddingSet& set,
                                    const QuantConfig& cfg = {});

struct ModelProjector final : Projector {
  explicit ModelProjector(const TonelModel& m) : model(&m) {}
  std::size_t input_dim() const override { return model->cfg.d_in; }
  std::size_t output_dim() const override { return model->cfg.d_out; }
  std::vector<float> operator()(std::span<const float> x) const override {
    return project(*model, x);
  }
  const TonelModel* model;
};

}  // namespace tonel
