#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tonel {

enum class ProjectionArch : uint32_t { kAffine = 0, kMlp = 1 };

struct ModelConfig {
  int d_in = 384;
  int d_out = 64;  // crossbar row count
  int classes = 2;
  ProjectionArch arch = ProjectionArch::kAffine;
  int hidden = 128;  // MLP variant only
};

// Projection + task predictor. Weight matrices are row-major [in][out];
// project(x) = w_proj^T x + b_proj, predict(z) = w_pred^T z + b_pred.
struct TonelModel {
  ModelConfig cfg;
  std::vector<float> w_proj;   // affine: d_in x d_out; MLP: d_in x hidden
  std::vector<float> b_proj;   // affine: d_out; MLP: hidden
  std::vector<float> w_proj2;  // MLP only: hidden x d_out
  std::vector<float> b_proj2;  // MLP only: d_out
  std::vector<float> w_pred;   // d_out x classes
  std::vector<float> b_pred;   // classes
};

// Scaled uniform init (sqrt(6/(fan_in+fan_out))), biases zero, seeded.
TonelModel init_model(const ModelConfig& cfg, uint64_t seed);

bool all_finite(const TonelModel& m);

std::vector<float> project(const TonelModel& m, std::span<const float> x);
std::vector<float> predict_logits(const TonelModel& m, std::span<const float> z);

// Numerically safe softmax cross-entropy for one sample:
// loss = -log softmax(logits)[label], dlogits = softmax(logits) - onehot(label).
std::pair<double, std::vector<float>> ce_loss_and_grad(
    std::span<const float> logits, int label);

// Forward activations cached for one mini-batch (all row-major batch x dim).
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<float> x;          // batch x d_in
  std::vector<float> hidden;     // batch x hidden, post-ReLU (MLP only)
  std::vector<uint8_t> relu_mask;
  std::vector<float> z;          // batch x d_out, projection output
  std::vector<float> z_pred;     // batch x d_out, predictor input (quant+noise)
  std::vector<uint8_t> pass;     // batch x d_out, straight-through mask
};

// Fills cache.x/hidden/z for the batch; z_pred and pass are the caller's
// (quantize + noise, or a plain copy with an all-ones mask).
void project_batch(const TonelModel& m, const float* x, std::size_t batch,
                   ForwardCache& cache);

// logits (batch x classes) from cache.z_pred.
std::vector<float> predict_batch(const TonelModel& m, const ForwardCache& cache);

// Batch-mean gradients, same shapes as the model tensors.
struct GradientBundle {
  std::vector<float> w_proj, b_proj, w_proj2, b_proj2, w_pred, b_pred;
};

// Chain rule through predictor -> noise add (constant) -> straight-through
// quantizer mask -> projection. dlogits is batch x classes, batch-mean
// convention. Throws kStaleCache when the cache shapes do not match m.
GradientBundle backward(const TonelModel& m, const ForwardCache& cache,
                        std::span<const float> dlogits);

enum class OptAlgo : uint32_t { kSgdMomentum = 0, kAdam = 1 };

struct OptimizerConfig {
  OptAlgo algo = OptAlgo::kAdam;
  float lr = 1e-3f;
  float momentum = 0.9f;                            // SGD
  float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;  // Adam
};

struct OptimizerState {
  OptimizerConfig cfg;
  long step = 0;
  std::vector<std::vector<float>> m1;  // momentum / first moment
  std::vector<std::vector<float>> m2;  // second moment (Adam)
};

OptimizerState make_optimizer(const TonelModel& m, const OptimizerConfig& cfg);
void optimizer_step(TonelModel& m, const GradientBundle& grads,
                    OptimizerState& state);

// "TMDL" checkpoint: header (d_in, d_out, classes, arch, hidden) + float32 LE
// tensors; write/read round-trips bit-exactly.
void save_model(const TonelModel& m, const std::string& path);
TonelModel load_model(const std::string& path);

}  // namespace tonel
