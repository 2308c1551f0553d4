#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "../util/sha256.hpp"
#include "codepoison/error.hpp"
#include "codepoison/model.hpp"

// Layout, all integers little-endian:
//   magic "CPCKPT01" (8 bytes)
//   u32 version, u32 role
//   u64 vocab, u64 d_emb, u64 d_hidden, u64 layers
//   u64 payload size, 32-byte SHA-256 of the payload
// Payload, per tensor in Weights::tensors() order:
//   u64 rows, u64 cols, rows*cols float32 in row-major order.

namespace codepoison {
namespace {

constexpr std::array<char, 8> kMagic = {'C', 'P', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out += static_cast<char>((v >> (8 * k)) & 0xFF);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out += static_cast<char>((v >> (8 * k)) & 0xFF);
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::kFormatError, "checkpoint is truncated");
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t u64() { return little_endian(take(8)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(take(4))); }

  float f32() {
    const std::uint32_t bits = u32();
    float f = 0.0F;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  static std::uint64_t little_endian(std::string_view bytes) {
    std::uint64_t v = 0;
    for (std::size_t k = bytes.size(); k-- > 0;) v = (v << 8) | static_cast<unsigned char>(bytes[k]);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Seq2SeqParams& params, const std::filesystem::path& path) {
  std::string payload;
  for (const Eigen::MatrixXd* m : params.weights.tensors()) {
    put_u64(payload, static_cast<std::uint64_t>(m->rows()));
    put_u64(payload, static_cast<std::uint64_t>(m->cols()));
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) put_f32(payload, static_cast<float>((*m)(r, c)));
    }
  }
  detail::Sha256 sha;
  sha.update(payload);
  const auto digest = sha.bytes();

  std::string header(kMagic.begin(), kMagic.end());
  put_u32(header, kVersion);
  put_u32(header, static_cast<std::uint32_t>(params.role()));
  put_u64(header, params.dims().vocab);
  put_u64(header, params.dims().d_emb);
  put_u64(header, params.dims().d_hidden);
  put_u64(header, kLayers);
  put_u64(header, payload.size());
  header.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << header << payload;
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

Seq2SeqParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot read checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string data = buffer.str();
  Reader rd(data);
  if (rd.take(kMagic.size()) != std::string_view(kMagic.data(), kMagic.size())) {
    throw Error(ErrorCode::kFormatError, "not a checkpoint: " + path.string());
  }
  if (rd.u32() != kVersion) throw Error(ErrorCode::kFormatError, "unsupported checkpoint version");
  const std::uint32_t role_raw = rd.u32();
  if (role_raw > static_cast<std::uint32_t>(ModelRole::kLanguageModel)) {
    throw Error(ErrorCode::kFormatError, "unknown role in checkpoint");
  }
  ModelDims dims;
  dims.vocab = rd.u64();
  dims.d_emb = rd.u64();
  dims.d_hidden = rd.u64();
  if (rd.u64() != kLayers) throw Error(ErrorCode::kFormatError, "checkpoint layer count mismatch");
  const std::uint64_t payload_size = rd.u64();
  const std::string_view stored = rd.take(32);
  const std::string_view payload = rd.take(payload_size);
  if (!rd.done()) throw Error(ErrorCode::kFormatError, "trailing bytes after checkpoint payload");
  detail::Sha256 sha;
  sha.update(payload);
  const auto digest = sha.bytes();
  if (std::memcmp(digest.data(), stored.data(), digest.size()) != 0) {
    throw Error(ErrorCode::kDigestMismatch, "checkpoint payload digest mismatch: " + path.string());
  }

  const auto role = static_cast<ModelRole>(role_raw);
  Seq2SeqParams params = Seq2SeqParams::zeros(role, dims);
  Reader body(payload);
  for (Eigen::MatrixXd* m : params.weights.tensors()) {
    const auto rows = static_cast<Eigen::Index>(body.u64());
    const auto cols = static_cast<Eigen::Index>(body.u64());
    if (rows != m->rows() || cols != m->cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "checkpoint tensor shape disagrees with header dims");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) (*m)(r, c) = static_cast<double>(body.f32());
    }
  }
  if (!body.done()) throw Error(ErrorCode::kFormatError, "checkpoint payload has extra bytes");
  return params;
}

}  // namespace codepoison
