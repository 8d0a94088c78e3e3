#include "tonel/embedding_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "json.hpp"

#include "tonel/error.hpp"

namespace tonel {
namespace {

constexpr uint32_t kFormatVersion = 1;
constexpr std::size_t kMaxIdBytes = 1u << 20;  // sanity cap per id

class Reader {
 public:
  Reader(const std::string& path, const char* what) : path_(path), what_(what) {
    in_.open(path, std::ios::binary);
    if (!in_) fail(ErrorCode::kIoFailure, std::string(what) + ": cannot open " + path);
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0, std::ios::beg);
  }

  void bytes(void* dst, std::size_t n, const char* field) {
    if (offset_ + n > size_)
      fail(ErrorCode::kTruncatedPayload,
           std::string(what_) + " " + path_ + ": truncated reading " + field +
               " at byte offset " + std::to_string(offset_) + " (file size " +
               std::to_string(size_) + ")");
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_)
      fail(ErrorCode::kIoFailure, std::string(what_) + ": read error in " + path_);
    offset_ += n;
  }

  uint32_t u32(const char* field) {
    unsigned char b[4];
    bytes(b, 4, field);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }

  uint64_t u64(const char* field) {
    const uint64_t lo = u32(field);
    const uint64_t hi = u32(field);
    return lo | (hi << 32);
  }

  uint64_t remaining() const { return size_ - offset_; }
  uint64_t offset() const { return offset_; }

 private:
  std::string path_;
  const char* what_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t offset_ = 0;
};

class Writer {
 public:
  Writer(const std::string& path, const char* what) : path_(path) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_)
      fail(ErrorCode::kIoFailure, std::string(what) + ": cannot create " + path);
  }

  void bytes(const void* src, std::size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }

  void u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }

  void u64(uint64_t v) {
    u32(static_cast<uint32_t>(v));
    u32(static_cast<uint32_t>(v >> 32));
  }

  void close() {
    out_.flush();
    if (!out_) fail(ErrorCode::kIoFailure, "write failed for " + path_);
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

void check_magic(Reader& r, const char expected[4], const std::string& path) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, expected, 4) != 0)
    fail(ErrorCode::kBadMagic, path + ": bad magic, expected \"" +
                                   std::string(expected, 4) + "\"");
  const uint32_t version = r.u32("version");
  if (version != kFormatVersion)
    fail(ErrorCode::kUnsupportedVersion,
         path + ": unsupported version " + std::to_string(version));
}

std::vector<std::string> read_ids(Reader& r, std::size_t count,
                                  const std::string& path) {
  std::vector<std::string> ids(count);
  for (std::size_t i = 0; i < count; ++i) {
    const uint32_t len = r.u32("id length");
    if (len > kMaxIdBytes || len > r.remaining())
      fail(ErrorCode::kTruncatedPayload,
           path + ": id " + std::to_string(i) + " claims " + std::to_string(len) +
               " bytes with " + std::to_string(r.remaining()) + " left");
    ids[i].resize(len);
    if (len > 0) r.bytes(ids[i].data(), len, "id bytes");
  }
  if (r.remaining() != 0)
    fail(ErrorCode::kTruncatedPayload,
         path + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return ids;
}

void write_ids(Writer& w, const std::vector<std::string>& ids) {
  for (const auto& id : ids) {
    w.u32(static_cast<uint32_t>(id.size()));
    w.bytes(id.data(), id.size());
  }
}

void check_ids_unique(const std::vector<std::string>& ids) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second)
      fail(ErrorCode::kIdMismatch,
           "duplicate id \"" + ids[i] + "\" at row " + std::to_string(i));
  }
}

}  // namespace

void validate(const EmbeddingSet& set) {
  if (set.dim == 0) fail(ErrorCode::kShapeMismatch, "embedding dim must be >= 1");
  if (set.data.size() != set.count * set.dim)
    fail(ErrorCode::kShapeMismatch,
         "data size " + std::to_string(set.data.size()) + " != count*dim");
  if (set.ids.size() != set.count)
    fail(ErrorCode::kIdMismatch, "id count does not match row count");
  for (std::size_t i = 0; i < set.data.size(); ++i) {
    if (!std::isfinite(set.data[i]))
      fail(ErrorCode::kNonFiniteValue,
           "non-finite value at row " + std::to_string(i / set.dim) +
               ", component " + std::to_string(i % set.dim));
  }
  check_ids_unique(set.ids);
}

EmbeddingSet load_embeddings(const std::string& path) {
  Reader r(path, "embeddings");
  check_magic(r, "TEMB", path);
  EmbeddingSet set;
  set.count = r.u64("count");
  set.dim = r.u32("dim");
  if (set.dim == 0) fail(ErrorCode::kShapeMismatch, path + ": dim must be >= 1");
  // overflow-safe: a valid count can never exceed remaining / row bytes
  if (set.count > r.remaining() / (static_cast<uint64_t>(set.dim) * 4))
    fail(ErrorCode::kTruncatedPayload,
         path + ": header claims " + std::to_string(set.count) + " rows of " +
             std::to_string(set.dim) + " floats with only " +
             std::to_string(r.remaining()) + " bytes left at offset " +
             std::to_string(r.offset()));
  const uint64_t payload = static_cast<uint64_t>(set.count) * set.dim * 4;
  set.data.resize(set.count * set.dim);
  if (payload > 0) r.bytes(set.data.data(), payload, "float payload");
  for (std::size_t i = 0; i < set.data.size(); ++i) {
    if (!std::isfinite(set.data[i]))
      fail(ErrorCode::kNonFiniteValue,
           path + ": non-finite value at row " + std::to_string(i / set.dim) +
               ", component " + std::to_string(i % set.dim));
  }
  set.ids = read_ids(r, set.count, path);
  check_ids_unique(set.ids);
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  validate(set);
  Writer w(path, "embeddings");
  w.bytes("TEMB", 4);
  w.u32(kFormatVersion);
  w.u64(set.count);
  w.u32(static_cast<uint32_t>(set.dim));
  w.bytes(set.data.data(), set.data.size() * 4);
  write_ids(w, set.ids);
  w.close();
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "manifest: cannot open " + path);
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kBadConfig,
           path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      fail(ErrorCode::kBadConfig,
           path + ":" + std::to_string(lineno) + ": entry needs a string id");
    ManifestEntry e;
    e.id = j["id"].get<std::string>();
    if (j.contains("text") && !j["text"].is_null())
      e.text = j["text"].get<std::string>();
    auto read_label = [&](const char* key) -> std::optional<int> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      const int v = j[key].get<int>();
      if (v < 0)
        fail(ErrorCode::kBadLabel, path + ":" + std::to_string(lineno) + ": " +
                                       key + " must be >= 0, got " +
                                       std::to_string(v));
      return v;
    };
    e.true_label = read_label("true_label");
    e.pseudo_label = read_label("pseudo_label");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "manifest: cannot create " + path);
  for (const auto& e : manifest.entries) {
    nlohmann::json j;
    j["id"] = e.id;
    if (e.text) j["text"] = *e.text;
    if (e.true_label) j["true_label"] = *e.true_label;
    if (e.pseudo_label) j["pseudo_label"] = *e.pseudo_label;
    out << j.dump() << "\n";
  }
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "manifest: write failed for " + path);
}

LabeledSet attach_labels(const EmbeddingSet& set, const Manifest& manifest) {
  if (manifest.entries.size() != set.count)
    fail(ErrorCode::kIdMismatch,
         "manifest has " + std::to_string(manifest.entries.size()) +
             " entries for " + std::to_string(set.count) + " embeddings");
  LabeledSet out;
  out.set = &set;
  out.true_labels.resize(set.count);
  out.pseudo_labels.resize(set.count);
  for (std::size_t i = 0; i < set.count; ++i) {
    const auto& e = manifest.entries[i];
    if (e.id != set.ids[i])
      fail(ErrorCode::kIdMismatch, "row " + std::to_string(i) + ": manifest id \"" +
                                       e.id + "\" != embedding id \"" +
                                       set.ids[i] + "\"");
    out.true_labels[i] = e.true_label;
    out.pseudo_labels[i] = e.pseudo_label;
    if (e.true_label) out.true_classes = std::max(out.true_classes, *e.true_label + 1);
    if (e.pseudo_label)
      out.pseudo_classes = std::max(out.pseudo_classes, *e.pseudo_label + 1);
  }
  return out;
}

QuantizedSet load_quantized(const std::string& path) {
  Reader r(path, "quantized set");
  check_magic(r, "TQ08", path);
  QuantizedSet set;
  set.count = r.u64("count");
  set.dim = r.u32("dim");
  if (set.dim == 0) fail(ErrorCode::kShapeMismatch, path + ": dim must be >= 1");
  // overflow-safe row bound: dim code bytes + 4 scale bytes per row
  if (set.count > r.remaining() / (static_cast<uint64_t>(set.dim) + 4))
    fail(ErrorCode::kTruncatedPayload, path + ": code/scale payload truncated");
  set.vectors.resize(set.count);
  for (auto& v : set.vectors) {
    v.codes.resize(set.dim);
    r.bytes(v.codes.data(), set.dim, "codes");
  }
  for (std::size_t i = 0; i < set.count; ++i) {
    float s;
    r.bytes(&s, 4, "scale");
    if (!std::isfinite(s) || s <= 0.0f)
      fail(ErrorCode::kNonFiniteValue,
           path + ": row " + std::to_string(i) + " scale must be finite and > 0");
    set.vectors[i].scale = s;
  }
  set.ids = read_ids(r, set.count, path);
  check_ids_unique(set.ids);
  return set;
}

void save_quantized(const QuantizedSet& set, const std::string& path) {
  if (set.vectors.size() != set.count || set.ids.size() != set.count)
    fail(ErrorCode::kShapeMismatch, "quantized set row/id count mismatch");
  for (const auto& v : set.vectors)
    if (v.codes.size() != set.dim)
      fail(ErrorCode::kShapeMismatch, "quantized row has wrong dimension");
  Writer w(path, "quantized set");
  w.bytes("TQ08", 4);
  w.u32(kFormatVersion);
  w.u64(set.count);
  w.u32(static_cast<uint32_t>(set.dim));
  for (const auto& v : set.vectors) w.bytes(v.codes.data(), v.codes.size());
  for (const auto& v : set.vectors) w.bytes(&v.scale, 4);
  write_ids(w, set.ids);
  w.close();
}

}  // namespace tonel
