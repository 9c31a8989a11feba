#pragma once

// Self-describing binary container used for every persisted artifact.
//
// Layout (all integers and reals little-endian):
//   magic    8 bytes  "MAGICBDL"
//   version  u32
//   kind     u32      BundleKind
//   length   u64      payload byte count
//   crc32    u32      CRC-32 of the payload
//   payload  sections, each: u32 name length, name bytes, u64 size, bytes
//
// Reals are stored as raw IEEE-754 binary64, so round-trips are exact.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace magic {

inline constexpr std::uint32_t kBundleVersion = 1;

enum class BundleKind : std::uint32_t {
  kSceneSet = 1,
  kEvaluationSet = 2,
  kCorpus = 3,
  kVocabulary = 4,
  kModel = 5,
};

std::string_view to_string(BundleKind kind);

class BundleError : public std::runtime_error {
 public:
  enum class Code { kIo, kVersion, kChecksum, kKind, kFormat };
  BundleError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);
  void reals(const std::vector<double>& v);
  void matrix(const Eigen::MatrixXd& m);
  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : buf_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  std::vector<double> reals();
  Eigen::MatrixXd matrix();
  bool done() const { return pos_ == buf_.size(); }

 private:
  const char* take(std::size_t n);
  std::string_view buf_;
  std::size_t pos_ = 0;
};

struct Section {
  std::string name;
  std::string bytes;
};

std::uint32_t crc32_of(std::string_view bytes);

/// Serialises a bundle to memory (exposed for tests that tamper with bytes).
std::string encode_bundle(BundleKind kind, const std::vector<Section>& sections);
/// Validates header, version, kind and checksum before decoding any section.
std::vector<Section> decode_bundle(std::string_view bytes, BundleKind expected);

void write_bundle(const std::filesystem::path& path, BundleKind kind, const std::vector<Section>& sections);
std::vector<Section> read_bundle(const std::filesystem::path& path, BundleKind expected);

const Section& find_section(const std::vector<Section>& sections, std::string_view name);

}  // namespace magic
