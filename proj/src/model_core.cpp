#include "tonel/model_core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tonel/error.hpp"
#include "tonel/parallel.hpp"
#include "tonel/rng.hpp"

namespace tonel {
namespace {

std::size_t proj_out(const ModelConfig& cfg) {
  return cfg.arch == ProjectionArch::kMlp ? static_cast<std::size_t>(cfg.hidden)
                                          : static_cast<std::size_t>(cfg.d_out);
}

void check_config(const ModelConfig& cfg) {
  if (cfg.d_in < 1 || cfg.d_out < 1 || cfg.classes < 1)
    fail(ErrorCode::kBadConfig, "model dimensions must be positive");
  if (cfg.arch == ProjectionArch::kMlp && cfg.hidden < 1)
    fail(ErrorCode::kBadConfig, "MLP hidden width must be positive");
}

void glorot_fill(std::vector<float>& w, std::size_t fan_in, std::size_t fan_out,
                 uint64_t seed, uint32_t tensor_index) {
  RngStream rng(seed, RngContext::kModelInit, tensor_index);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w)
    x = static_cast<float>((2.0 * rng.next_double() - 1.0) * a);
}

// y[batch x out] = x[batch x in] * w[in x out] + b
void affine_batch(const float* x, std::size_t batch, std::size_t in,
                  std::size_t out, const float* w, const float* b, float* y) {
  parallel_for(batch, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      const float* xs = x + s * in;
      float* ys = y + s * out;
      std::memcpy(ys, b, out * sizeof(float));
      for (std::size_t i = 0; i < in; ++i) {
        const float xi = xs[i];
        const float* wi = w + i * out;
        for (std::size_t j = 0; j < out; ++j) ys[j] += xi * wi[j];
      }
    }
  });
}

// dw[in x out] = x^T[in x batch] * dy[batch x out] / batch (mean convention)
void weight_grad(const float* x, const float* dy, std::size_t batch,
                 std::size_t in, std::size_t out, float* dw) {
  const float inv = 1.0f / static_cast<float>(batch);
  parallel_for(in, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      float* dwi = dw + i * out;
      std::fill(dwi, dwi + out, 0.0f);
      for (std::size_t s = 0; s < batch; ++s) {
        const float xi = x[s * in + i];
        const float* dys = dy + s * out;
        for (std::size_t j = 0; j < out; ++j) dwi[j] += xi * dys[j];
      }
      for (std::size_t j = 0; j < out; ++j) dwi[j] *= inv;
    }
  });
}

void bias_grad(const float* dy, std::size_t batch, std::size_t out, float* db) {
  const float inv = 1.0f / static_cast<float>(batch);
  for (std::size_t j = 0; j < out; ++j) db[j] = 0.0f;
  for (std::size_t s = 0; s < batch; ++s) {
    const float* dys = dy + s * out;
    for (std::size_t j = 0; j < out; ++j) db[j] += dys[j];
  }
  for (std::size_t j = 0; j < out; ++j) db[j] *= inv;
}

// dx[batch x in] = dy[batch x out] * w^T[out x in]
void input_grad(const float* dy, const float* w, std::size_t batch,
                std::size_t in, std::size_t out, float* dx) {
  parallel_for(batch, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      const float* dys = dy + s * out;
      float* dxs = dx + s * in;
      for (std::size_t i = 0; i < in; ++i) {
        const float* wi = w + i * out;
        float acc = 0.0f;
        for (std::size_t j = 0; j < out; ++j) acc += wi[j] * dys[j];
        dxs[i] = acc;
      }
    }
  });
}

std::vector<const std::vector<float>*> tensor_list(const TonelModel& m) {
  if (m.cfg.arch == ProjectionArch::kMlp)
    return {&m.w_proj, &m.b_proj, &m.w_proj2, &m.b_proj2, &m.w_pred, &m.b_pred};
  return {&m.w_proj, &m.b_proj, &m.w_pred, &m.b_pred};
}

std::vector<std::vector<float>*> tensor_list(TonelModel& m) {
  if (m.cfg.arch == ProjectionArch::kMlp)
    return {&m.w_proj, &m.b_proj, &m.w_proj2, &m.b_proj2, &m.w_pred, &m.b_pred};
  return {&m.w_proj, &m.b_proj, &m.w_pred, &m.b_pred};
}

std::vector<const std::vector<float>*> tensor_list(const GradientBundle& g,
                                                   ProjectionArch arch) {
  if (arch == ProjectionArch::kMlp)
    return {&g.w_proj, &g.b_proj, &g.w_proj2, &g.b_proj2, &g.w_pred, &g.b_pred};
  return {&g.w_proj, &g.b_proj, &g.w_pred, &g.b_pred};
}

}  // namespace

TonelModel init_model(const ModelConfig& cfg, uint64_t seed) {
  check_config(cfg);
  TonelModel m;
  m.cfg = cfg;
  const std::size_t d_in = cfg.d_in, d_out = cfg.d_out, c = cfg.classes;
  const std::size_t p_out = proj_out(cfg);
  m.w_proj.resize(d_in * p_out);
  m.b_proj.assign(p_out, 0.0f);
  glorot_fill(m.w_proj, d_in, p_out, seed, 0);
  if (cfg.arch == ProjectionArch::kMlp) {
    m.w_proj2.resize(static_cast<std::size_t>(cfg.hidden) * d_out);
    m.b_proj2.assign(d_out, 0.0f);
    glorot_fill(m.w_proj2, cfg.hidden, d_out, seed, 1);
  }
  m.w_pred.resize(d_out * c);
  m.b_pred.assign(c, 0.0f);
  glorot_fill(m.w_pred, d_out, c, seed, 2);
  return m;
}

bool all_finite(const TonelModel& m) {
  for (const auto* t : tensor_list(m))
    for (const float x : *t)
      if (!std::isfinite(x)) return false;
  return true;
}

std::vector<float> project(const TonelModel& m, std::span<const float> x) {
  if (x.size() != static_cast<std::size_t>(m.cfg.d_in))
    fail(ErrorCode::kShapeMismatch,
         "project: input has length " + std::to_string(x.size()) + ", expected " +
             std::to_string(m.cfg.d_in));
  ForwardCache cache;
  project_batch(m, x.data(), 1, cache);
  return cache.z;
}

std::vector<float> predict_logits(const TonelModel& m, std::span<const float> z) {
  if (z.size() != static_cast<std::size_t>(m.cfg.d_out))
    fail(ErrorCode::kShapeMismatch,
         "predict_logits: input has length " + std::to_string(z.size()) +
             ", expected " + std::to_string(m.cfg.d_out));
  std::vector<float> logits(m.cfg.classes);
  affine_batch(z.data(), 1, m.cfg.d_out, m.cfg.classes, m.w_pred.data(),
               m.b_pred.data(), logits.data());
  return logits;
}

std::pair<double, std::vector<float>> ce_loss_and_grad(
    std::span<const float> logits, int label) {
  const std::size_t c = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= c)
    fail(ErrorCode::kBadLabel,
         "label " + std::to_string(label) + " out of range for " +
             std::to_string(c) + " classes");
  double maxv = -HUGE_VAL;
  for (const float l : logits) {
    if (!std::isfinite(l)) fail(ErrorCode::kNonFiniteInput, "non-finite logit");
    maxv = std::max(maxv, static_cast<double>(l));
  }
  double sum = 0.0;
  for (const float l : logits) sum += std::exp(static_cast<double>(l) - maxv);
  const double log_z = maxv + std::log(sum);
  const double loss = log_z - static_cast<double>(logits[label]);
  std::vector<float> dlogits(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double p = std::exp(static_cast<double>(logits[i]) - log_z);
    dlogits[i] = static_cast<float>(p - (static_cast<std::size_t>(label) == i));
  }
  return {loss, std::move(dlogits)};
}

void project_batch(const TonelModel& m, const float* x, std::size_t batch,
                   ForwardCache& cache) {
  const std::size_t d_in = m.cfg.d_in, d_out = m.cfg.d_out;
  cache.batch = batch;
  cache.x.assign(x, x + batch * d_in);
  cache.z.resize(batch * d_out);
  if (m.cfg.arch == ProjectionArch::kAffine) {
    cache.hidden.clear();
    cache.relu_mask.clear();
    affine_batch(x, batch, d_in, d_out, m.w_proj.data(), m.b_proj.data(),
                 cache.z.data());
    return;
  }
  const std::size_t h = m.cfg.hidden;
  cache.hidden.resize(batch * h);
  cache.relu_mask.resize(batch * h);
  affine_batch(x, batch, d_in, h, m.w_proj.data(), m.b_proj.data(),
               cache.hidden.data());
  for (std::size_t i = 0; i < cache.hidden.size(); ++i) {
    const bool pos = cache.hidden[i] > 0.0f;
    cache.relu_mask[i] = pos;
    if (!pos) cache.hidden[i] = 0.0f;
  }
  affine_batch(cache.hidden.data(), batch, h, d_out, m.w_proj2.data(),
               m.b_proj2.data(), cache.z.data());
}

std::vector<float> predict_batch(const TonelModel& m, const ForwardCache& cache) {
  const std::size_t d_out = m.cfg.d_out, c = m.cfg.classes;
  if (cache.z_pred.size() != cache.batch * d_out)
    fail(ErrorCode::kStaleCache, "predict_batch: cache.z_pred shape mismatch");
  std::vector<float> logits(cache.batch * c);
  affine_batch(cache.z_pred.data(), cache.batch, d_out, c, m.w_pred.data(),
               m.b_pred.data(), logits.data());
  return logits;
}

GradientBundle backward(const TonelModel& m, const ForwardCache& cache,
                        std::span<const float> dlogits) {
  const std::size_t batch = cache.batch;
  const std::size_t d_in = m.cfg.d_in, d_out = m.cfg.d_out, c = m.cfg.classes;
  if (batch == 0 || cache.x.size() != batch * d_in ||
      cache.z.size() != batch * d_out || cache.z_pred.size() != batch * d_out ||
      cache.pass.size() != batch * d_out)
    fail(ErrorCode::kStaleCache, "backward: cache does not match this model");
  if (dlogits.size() != batch * c)
    fail(ErrorCode::kShapeMismatch, "backward: dlogits shape mismatch");
  if (m.cfg.arch == ProjectionArch::kMlp &&
      (cache.hidden.size() != batch * static_cast<std::size_t>(m.cfg.hidden) ||
       cache.relu_mask.size() != cache.hidden.size()))
    fail(ErrorCode::kStaleCache, "backward: MLP cache missing hidden activations");

  GradientBundle g;
  g.w_pred.resize(d_out * c);
  g.b_pred.resize(c);
  weight_grad(cache.z_pred.data(), dlogits.data(), batch, d_out, c,
              g.w_pred.data());
  bias_grad(dlogits.data(), batch, c, g.b_pred.data());

  // back through the predictor, the additive noise (identity), the STE mask
  std::vector<float> dz(batch * d_out);
  input_grad(dlogits.data(), m.w_pred.data(), batch, d_out, c, dz.data());
  for (std::size_t i = 0; i < dz.size(); ++i)
    if (!cache.pass[i]) dz[i] = 0.0f;

  if (m.cfg.arch == ProjectionArch::kAffine) {
    g.w_proj.resize(d_in * d_out);
    g.b_proj.resize(d_out);
    weight_grad(cache.x.data(), dz.data(), batch, d_in, d_out, g.w_proj.data());
    bias_grad(dz.data(), batch, d_out, g.b_proj.data());
    return g;
  }

  const std::size_t h = m.cfg.hidden;
  g.w_proj2.resize(h * d_out);
  g.b_proj2.resize(d_out);
  weight_grad(cache.hidden.data(), dz.data(), batch, h, d_out, g.w_proj2.data());
  bias_grad(dz.data(), batch, d_out, g.b_proj2.data());
  std::vector<float> dh(batch * h);
  input_grad(dz.data(), m.w_proj2.data(), batch, h, d_out, dh.data());
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (!cache.relu_mask[i]) dh[i] = 0.0f;
  g.w_proj.resize(d_in * h);
  g.b_proj.resize(h);
  weight_grad(cache.x.data(), dh.data(), batch, d_in, h, g.w_proj.data());
  bias_grad(dh.data(), batch, h, g.b_proj.data());
  return g;
}

OptimizerState make_optimizer(const TonelModel& m, const OptimizerConfig& cfg) {
  OptimizerState s;
  s.cfg = cfg;
  for (const auto* t : tensor_list(m)) {
    s.m1.emplace_back(t->size(), 0.0f);
    s.m2.emplace_back(t->size(), 0.0f);
  }
  return s;
}

void optimizer_step(TonelModel& m, const GradientBundle& grads,
                    OptimizerState& state) {
  auto params = tensor_list(m);
  auto gs = tensor_list(grads, m.cfg.arch);
  if (params.size() != state.m1.size())
    fail(ErrorCode::kShapeMismatch, "optimizer state does not match model");
  for (std::size_t t = 0; t < params.size(); ++t)
    if (params[t]->size() != gs[t]->size())
      fail(ErrorCode::kShapeMismatch, "gradient tensor shape mismatch");

  state.step += 1;
  const OptimizerConfig& cfg = state.cfg;
  if (cfg.algo == OptAlgo::kSgdMomentum) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& p = *params[t];
      const auto& g = *gs[t];
      auto& v = state.m1[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        p[i] -= cfg.lr * v[i];
      }
    }
    return;
  }
  const double b1t = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.step);
  const double b2t = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.step);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    const auto& g = *gs[t];
    auto& m1 = state.m1[t];
    auto& m2 = state.m2[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0f - cfg.beta1) * g[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0f - cfg.beta2) * g[i] * g[i];
      const double mhat = m1[i] / b1t;
      const double vhat = m2[i] / b2t;
      p[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

namespace {

constexpr uint32_t kModelVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail(ErrorCode::kTruncatedPayload, path + ": truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_model(const TonelModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "model: cannot create " + path);
  out.write("TMDL", 4);
  write_u32(out, kModelVersion);
  write_u32(out, static_cast<uint32_t>(m.cfg.d_in));
  write_u32(out, static_cast<uint32_t>(m.cfg.d_out));
  write_u32(out, static_cast<uint32_t>(m.cfg.classes));
  write_u32(out, static_cast<uint32_t>(m.cfg.arch));
  write_u32(out, static_cast<uint32_t>(m.cfg.hidden));
  for (const auto* t : tensor_list(m))
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * 4));
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "model: write failed for " + path);
}

TonelModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "model: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TMDL", 4) != 0)
    fail(ErrorCode::kBadMagic, path + ": bad model magic");
  if (read_u32(in, path) != kModelVersion)
    fail(ErrorCode::kUnsupportedVersion, path + ": unsupported model version");
  ModelConfig cfg;
  cfg.d_in = static_cast<int>(read_u32(in, path));
  cfg.d_out = static_cast<int>(read_u32(in, path));
  cfg.classes = static_cast<int>(read_u32(in, path));
  const uint32_t arch = read_u32(in, path);
  if (arch > 1) fail(ErrorCode::kBadConfig, path + ": unknown arch flag");
  cfg.arch = static_cast<ProjectionArch>(arch);
  cfg.hidden = static_cast<int>(read_u32(in, path));
  check_config(cfg);

  TonelModel m;
  m.cfg = cfg;
  const std::size_t p_out = proj_out(cfg);
  m.w_proj.resize(static_cast<std::size_t>(cfg.d_in) * p_out);
  m.b_proj.resize(p_out);
  if (cfg.arch == ProjectionArch::kMlp) {
    m.w_proj2.resize(static_cast<std::size_t>(cfg.hidden) * cfg.d_out);
    m.b_proj2.resize(cfg.d_out);
  }
  m.w_pred.resize(static_cast<std::size_t>(cfg.d_out) * cfg.classes);
  m.b_pred.resize(cfg.classes);
  for (auto* t : tensor_list(m)) {
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->size() * 4));
    if (!in) fail(ErrorCode::kTruncatedPayload, path + ": truncated tensor data");
  }
  if (!all_finite(m))
    fail(ErrorCode::kNonFiniteValue, path + ": checkpoint contains non-finite values");
  return m;
}

}  // namespace tonel
