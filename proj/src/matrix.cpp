#include "settp/matrix.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "settp/error.hpp"

namespace settp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::missing_artifact: return "missing_artifact";
  }
  return "unknown";
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw Error(ErrorKind::dimension_mismatch, "ragged initializer for Matrix");
    }
    std::copy(row.begin(), row.end(), m.row(i++).begin());
  }
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> Matrix::row_mean() const {
  std::vector<double> out(cols_, 0.0);
  if (rows_ == 0) return out;
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto src = row(r);
    for (std::size_t c = 0; c < cols_; ++c) out[c] += src[c];
  }
  for (double& v : out) v /= static_cast<double>(rows_);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::dimension_mismatch, "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::dimension_mismatch, "distance: size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_l2_distance(a, b));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

namespace {

EVP_MD_CTX* ctx_of(void* p) { return static_cast<EVP_MD_CTX*>(p); }

std::string to_hex(const unsigned char* bytes, unsigned len) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[bytes[i] >> 4]);
    out.push_back(kHex[bytes[i] & 0xf]);
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  return to_hex(md, len);
}

Digest::Digest() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(ctx_of(ctx_), EVP_sha256(), nullptr);
}

Digest::~Digest() { EVP_MD_CTX_free(ctx_of(ctx_)); }

Digest& Digest::update(std::string_view text) {
  const std::uint64_t n = text.size();
  EVP_DigestUpdate(ctx_of(ctx_), &n, sizeof n);
  EVP_DigestUpdate(ctx_of(ctx_), text.data(), text.size());
  return *this;
}

Digest& Digest::update(std::span<const double> values) {
  const std::uint64_t n = values.size();
  EVP_DigestUpdate(ctx_of(ctx_), &n, sizeof n);
  EVP_DigestUpdate(ctx_of(ctx_), values.data(), values.size_bytes());
  return *this;
}

Digest& Digest::update(const Matrix& m) {
  const std::uint64_t shape[2] = {m.rows(), m.cols()};
  EVP_DigestUpdate(ctx_of(ctx_), shape, sizeof shape);
  return update(m.values());
}

std::string Digest::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx_of(ctx_), md, &len);
  EVP_DigestInit_ex(ctx_of(ctx_), EVP_sha256(), nullptr);
  return to_hex(md, len);
}

}  // namespace settp
