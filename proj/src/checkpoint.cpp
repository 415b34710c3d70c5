#include "cut/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cut::ckpt {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'U', 'T', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

std::uint64_t fnv(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U take(std::istream& is, const fs::path& path) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw InvalidCheckpoint("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor<float>& t) {
  CUT_REQUIRE(!has(name), InvalidArgument, "duplicate checkpoint tensor '" + name + "'");
  tensors_.emplace_back(name, t);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw InvalidCheckpoint("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::restore(const std::string& name, Tensor<float>& dst) const {
  const auto& t = get(name);
  CUT_REQUIRE(t.shape == dst.shape, InvalidCheckpoint,
              "checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) + ", expected " +
                  shape_str(dst.shape));
  dst.data = t.data;
}

void Checkpoint::save(const fs::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  auto table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  header["tensors"] = table;
  const std::string hs = header.dump();
  std::string payload;
  payload.reserve(offset);
  for (const auto& [name, t] : tensors_)
    payload.append(reinterpret_cast<const char*>(t.ptr()), t.data.size() * sizeof(float));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint64_t>(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    put<std::uint64_t>(os, payload.size());
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    put<std::uint64_t>(os, fnv(payload.data(), payload.size()));
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidCheckpoint("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw InvalidCheckpoint(path.string() + " is not a checkpoint file");
  const auto version = take<std::uint32_t>(is, path);
  if (version != kFormatVersion)
    throw InvalidCheckpoint("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = take<std::uint64_t>(is, path);
  if (hlen > (1ull << 30)) throw InvalidCheckpoint("corrupt checkpoint header in " + path.string());
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw InvalidCheckpoint("truncated checkpoint " + path.string());
  const auto plen = take<std::uint64_t>(is, path);
  std::string payload(plen, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(plen));
  if (!is) throw InvalidCheckpoint("truncated checkpoint " + path.string());
  const auto sum = take<std::uint64_t>(is, path);
  if (sum != fnv(payload.data(), payload.size()))
    throw InvalidCheckpoint("checksum mismatch in " + path.string());

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(hs);
    c.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      Tensor<float> t(e.at("shape").get<Shape>());
      const auto off = e.at("offset").get<std::uint64_t>();
      const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
      if (off + bytes > payload.size()) throw InvalidCheckpoint("tensor extends past payload");
      std::memcpy(t.ptr(), payload.data() + off, bytes);
      c.tensors_.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidCheckpoint("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace cut::ckpt
