#include "reinlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

namespace {

static_assert(sizeof(float) == 4);

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw ContractError("tensor name too long: " + t.name);
    if (t.dims.size() > 0xff) throw ContractError("too many dimensions in " + t.name);
    std::size_t numel = 1;
    for (auto d : t.dims) numel *= d;
    if (numel != t.data.size()) throw ContractError("tensor " + t.name + " has inconsistent dims");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.component));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_le<std::uint32_t>(out, d);
    for (float v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(kMagic.size(), "magic") != kMagic) {
    throw ParseError(source + ": bad magic at byte offset 0");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  ckpt.tensors.reserve(std::min<std::size_t>(count, bytes.size() / 8));
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get<std::uint16_t>("name length");
    t.name = std::string(r.take(name_len, "name"));
    const auto tag = r.get<std::uint8_t>("component tag");
    if (tag > 2) r.fail("unknown component tag " + std::to_string(tag));
    t.component = static_cast<Component>(tag);
    const auto ndim = r.get<std::uint8_t>("ndim");
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.get<std::uint32_t>("dims"));
      numel *= t.dims.back();
      if (numel > bytes.size()) r.fail("tensor " + t.name + " larger than the file");
    }
    r.need(numel * 4, "tensor data");
    t.data.resize(numel);
    for (std::uint64_t k = 0; k < numel; ++k) {
      t.data[k] = std::bit_cast<float>(r.get<std::uint32_t>("tensor data"));
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(path.string() + ": write failed");
  }
  if (!metadata.is_null()) {
    std::ofstream meta(path.string() + ".json", std::ios::trunc);
    meta << metadata.dump(2) << "\n";
    if (!meta) throw Error(path.string() + ".json: write failed");
  }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  Checkpoint ckpt = parse(ss.str(), path.string());
  const std::filesystem::path meta_path = path.string() + ".json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta(meta_path);
    try {
      ckpt.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(meta_path.string() + ": " + e.what() + " at byte offset " +
                       std::to_string(e.byte));
    }
  }
  return ckpt;
}

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

Checkpoint Checkpoint::filter(Component component) const {
  Checkpoint out;
  out.metadata = metadata;
  for (const auto& t : tensors) {
    if (t.component == component) out.tensors.push_back(t);
  }
  return out;
}

std::size_t Checkpoint::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

REINLAB_NAMESPACE_END
