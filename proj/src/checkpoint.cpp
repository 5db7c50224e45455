#include "propfly/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "propfly/errors.hpp"

namespace propfly {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'L', 'Y'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw TruncatedError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                           std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamStore& store) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store) {
    if (e.name.size() > 0xffff) throw IOError("tensor name too long: " + e.name.substr(0, 32) + "...");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    const auto& shape = e.tensor.shape();
    if (shape.size() > 0xff) throw IOError("tensor '" + e.name + "' has too many dims");
    out.push_back(static_cast<char>(shape.size()));
    for (std::size_t d : shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.push_back(static_cast<char>(e.role));
    for (double v : e.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamStore decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw MagicError("not a checkpoint: bad magic bytes");
  const auto version = in.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const auto count = in.le<std::uint32_t>("entry count");
  ParamStore store;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = in.le<std::uint16_t>("name length");
    std::string name(in.take(len, "name"));
    const auto rank = in.le<std::uint8_t>("rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = in.le<std::uint32_t>("dims");
    const auto role = in.le<std::uint8_t>("role");
    if (role > static_cast<std::uint8_t>(Role::kOptimizer))
      throw RoleError("tensor '" + name + "' has unknown role tag " + std::to_string(role));
    const std::size_t n = ad::numel(shape);
    if (n > in.remaining() / 8) throw TruncatedError("checkpoint truncated in payload of '" + name + "'");
    std::vector<double> values(n);
    for (double& v : values) v = std::bit_cast<double>(in.le<std::uint64_t>("payload"));
    store.add(std::move(name), ad::Tensor::from(std::move(shape), std::move(values)), static_cast<Role>(role));
  }
  if (in.remaining() != 0) throw CheckpointError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  return store;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes, bool overwrite) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IOError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), overwrite ? "wb" : "wbx"), &std::fclose);
  if (!f) {
    if (!overwrite && std::filesystem::exists(path))
      throw IOError(path.string() + " already exists (pass overwrite to replace it)");
    throw IOError("cannot write " + path.string());
  }
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) throw IOError("short write to " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, bool overwrite) {
  write_file(path, encode_checkpoint(store), overwrite);
}

ParamStore load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

ParamStore load_checkpoint(const std::filesystem::path& path, Role role) {
  const ParamStore all = load_checkpoint(path);
  ParamStore out = select_role(all, role);
  if (out.empty()) {
    std::string found;
    for (const auto& e : all) {
      const auto name = std::string(role_name(e.role));
      if (found.find(name) == std::string::npos) found += (found.empty() ? "" : ", ") + name;
    }
    throw RoleError(path.string() + " holds no " + std::string(role_name(role)) + " tensors (found: " +
                    (found.empty() ? "nothing" : found) + ")");
  }
  return out;
}

ParamStore select_role(const ParamStore& store, Role role) {
  ParamStore out;
  for (const auto& e : store)
    if (e.role == role) out.add(e.name, e.tensor, e.role);
  return out;
}

ParamStore merge_stores(const ParamStore& a, const ParamStore& b) {
  ParamStore out = a;
  for (const auto& e : b) out.add(e.name, e.tensor, e.role);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace propfly
