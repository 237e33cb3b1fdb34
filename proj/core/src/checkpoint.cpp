#include "gessl/checkpoint.hpp"

#include <limits>

#include "binary_io.hpp"

namespace gessl {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'S', 'L'};

[[noreturn]] void fail(CheckpointErrorCode code, const std::string& origin, const std::string& what) {
  throw CheckpointError(code, origin + ": " + what);
}

}  // namespace

std::vector<char> encode_checkpoint(const ParameterSet& params) {
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(params.size());
  for (const NamedTensor& p : params.entries()) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("checkpoint: parameter name too long: " + p.name.substr(0, 32) + "...");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.put<std::uint64_t>(d);
    for (double v : p.value.values()) w.put<double>(v);
  }
  return w.bytes();
}

ParameterSet decode_checkpoint(const std::vector<char>& bytes, const std::string& origin) {
  detail::ByteReader r(bytes);
  if (!r.has(4) || r.get_string(4) != std::string_view(kMagic, 4)) {
    fail(CheckpointErrorCode::bad_magic, origin, "not a GSSL checkpoint (bad magic)");
  }
  if (!r.has(4)) fail(CheckpointErrorCode::truncated, origin, "truncated header");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(CheckpointErrorCode::bad_version, origin,
         "unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
             std::to_string(kCheckpointVersion) + ")");
  }
  if (!r.has(8)) fail(CheckpointErrorCode::truncated, origin, "truncated header");
  const auto count = r.get<std::uint64_t>();

  ParameterSet params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string at = "parameter " + std::to_string(i);
    if (!r.has(2)) fail(CheckpointErrorCode::truncated, origin, "truncated at " + at);
    const auto name_len = r.get<std::uint16_t>();
    if (!r.has(name_len + 1u)) fail(CheckpointErrorCode::truncated, origin, "truncated at " + at);
    std::string name = r.get_string(name_len);
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > 4) fail(CheckpointErrorCode::malformed, origin, at + " has rank " + std::to_string(rank));
    if (!r.has(8u * rank)) fail(CheckpointErrorCode::truncated, origin, "truncated at " + at);
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0) fail(CheckpointErrorCode::malformed, origin, at + " has a zero dimension");
      if (elements > r.remaining() / dim) fail(CheckpointErrorCode::truncated, origin, "truncated at " + at);
      elements *= dim;
      shape.push_back(static_cast<std::size_t>(dim));
    }
    if (!r.has(elements * 8)) fail(CheckpointErrorCode::truncated, origin, "truncated data of " + name);
    std::vector<double> values(static_cast<std::size_t>(elements));
    for (double& v : values) v = r.get<double>();
    try {
      params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    } catch (const std::exception& e) {
      fail(CheckpointErrorCode::malformed, origin, e.what());
    }
  }
  if (r.remaining() != 0) fail(CheckpointErrorCode::malformed, origin, "trailing bytes after the last parameter");
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  if (!detail::write_file(path, encode_checkpoint(params))) {
    throw CheckpointError(CheckpointErrorCode::io, "cannot write checkpoint " + path.string());
  }
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  bool ok = false;
  std::vector<char> bytes = detail::read_file(path, ok);
  if (!ok) throw CheckpointError(CheckpointErrorCode::io, "cannot open checkpoint " + path.string());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace gessl
