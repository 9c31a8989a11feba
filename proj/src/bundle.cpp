#include "magic/bundle.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace magic {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'M', 'A', 'G', 'I', 'C', 'B', 'D', 'L'};
constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8 + 4;

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}
}  // namespace

std::string_view to_string(BundleKind kind) {
  switch (kind) {
    case BundleKind::kSceneSet: return "scene-set";
    case BundleKind::kEvaluationSet: return "evaluation-set";
    case BundleKind::kCorpus: return "corpus";
    case BundleKind::kVocabulary: return "vocabulary";
    case BundleKind::kModel: return "model";
  }
  return "unknown";
}

void ByteWriter::u32(std::uint32_t v) { put(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put(buf_, v); }
void ByteWriter::i64(std::int64_t v) { put(buf_, v); }
void ByteWriter::f64(double v) { put(buf_, v); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.append(s.data(), s.size());
}

void ByteWriter::reals(const std::vector<double>& v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void ByteWriter::matrix(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.size(); ++k) f64(m.data()[k]);
}

const char* ByteReader::take(std::size_t n) {
  if (n > buf_.size() - pos_) throw BundleError(BundleError::Code::kFormat, "bundle: truncated section data");
  const char* p = buf_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}
std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}
std::int64_t ByteReader::i64() {
  std::int64_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}
double ByteReader::f64() {
  double v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}

std::string ByteReader::str() {
  const std::uint64_t n = u64();
  const char* p = take(n);
  return std::string(p, n);
}

std::vector<double> ByteReader::reals() {
  const std::uint64_t n = u64();
  if (n > (buf_.size() - pos_) / 8) throw BundleError(BundleError::Code::kFormat, "bundle: bad vector length");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

Eigen::MatrixXd ByteReader::matrix() {
  const std::uint64_t r = u64();
  const std::uint64_t c = u64();
  if (r != 0 && c > (buf_.size() - pos_) / 8 / r)
    throw BundleError(BundleError::Code::kFormat, "bundle: bad matrix shape");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = f64();
  return m;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_bundle(BundleKind kind, const std::vector<Section>& sections) {
  std::string body;
  for (const Section& s : sections) {
    put(body, static_cast<std::uint32_t>(s.name.size()));
    body.append(s.name);
    put(body, static_cast<std::uint64_t>(s.bytes.size()));
    body.append(s.bytes);
  }
  std::string out;
  out.reserve(kHeaderSize + body.size());
  out.append(kMagic, 8);
  put(out, kBundleVersion);
  put(out, static_cast<std::uint32_t>(kind));
  put(out, static_cast<std::uint64_t>(body.size()));
  put(out, crc32_of(body));
  out.append(body);
  return out;
}

std::vector<Section> decode_bundle(std::string_view bytes, BundleKind expected) {
  using Code = BundleError::Code;
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw BundleError(Code::kFormat, "bundle: missing magic bytes");
  ByteReader header(bytes.substr(8, kHeaderSize - 8));
  const std::uint32_t version = header.u32();
  const std::uint32_t kind = header.u32();
  const std::uint64_t length = header.u64();
  const std::uint32_t crc = header.u32();
  if (version != kBundleVersion)
    throw BundleError(Code::kVersion, "bundle: unsupported version " + std::to_string(version));
  if (length != bytes.size() - kHeaderSize) throw BundleError(Code::kFormat, "bundle: payload length mismatch");
  const std::string_view body = bytes.substr(kHeaderSize);
  if (crc32_of(body) != crc) throw BundleError(Code::kChecksum, "bundle: checksum mismatch");
  if (kind != static_cast<std::uint32_t>(expected)) {
    throw BundleError(Code::kKind, "bundle: expected kind '" + std::string(to_string(expected)) + "', found '" +
                                       std::string(to_string(static_cast<BundleKind>(kind))) + "'");
  }
  std::vector<Section> sections;
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (n > body.size() - pos) throw BundleError(Code::kFormat, "bundle: truncated section header");
  };
  while (pos < body.size()) {
    Section s;
    need(4);
    std::uint32_t name_len;
    std::memcpy(&name_len, body.data() + pos, 4);
    pos += 4;
    need(name_len);
    s.name.assign(body.data() + pos, name_len);
    pos += name_len;
    need(8);
    std::uint64_t size;
    std::memcpy(&size, body.data() + pos, 8);
    pos += 8;
    need(size);
    s.bytes.assign(body.data() + pos, size);
    pos += size;
    sections.push_back(std::move(s));
  }
  return sections;
}

void write_bundle(const std::filesystem::path& path, BundleKind kind, const std::vector<Section>& sections) {
  const std::string bytes = encode_bundle(kind, sections);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw BundleError(BundleError::Code::kIo, "bundle: cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BundleError(BundleError::Code::kIo, "bundle: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw BundleError(BundleError::Code::kIo, "bundle: cannot move into place '" + path.string() + "'");
}

std::vector<Section> read_bundle(const std::filesystem::path& path, BundleKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(BundleError::Code::kIo, "bundle: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw BundleError(BundleError::Code::kIo, "bundle: read failed for '" + path.string() + "'");
  return decode_bundle(ss.str(), expected);
}

const Section& find_section(const std::vector<Section>& sections, std::string_view name) {
  for (const Section& s : sections)
    if (s.name == name) return s;
  throw BundleError(BundleError::Code::kFormat, "bundle: missing section '" + std::string(name) + "'");
}

}  // namespace magic
