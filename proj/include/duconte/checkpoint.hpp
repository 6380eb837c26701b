#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "duconte/common.hpp"
#include "duconte/params.hpp"

namespace duconte {

// Binary checkpoint layout (little-endian):
//   magic "DCTE" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u64 rows | u64 cols | f64 data
// Round-trips are bit-exact.

namespace detail {

constexpr char kCheckpointMagic[4] = {'D', 'C', 'T', 'E'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  check_state(in.good(), "checkpoint: unexpected end of stream");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const ParamStore& store, std::ostream& out) {
  out.write(detail::kCheckpointMagic, 4);
  detail::write_pod(out, detail::kCheckpointVersion);
  detail::write_pod(out, static_cast<std::uint32_t>(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    const Tensor2& t = store.value(i);
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(t.rows()));
    detail::write_pod(out, static_cast<std::uint64_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  check_state(out.good(), "checkpoint: write failed");
}

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check_state(out.good(), "checkpoint: cannot open '", path, "' for writing");
  save_checkpoint(store, out);
}

inline ParamStore load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  check_arg(in.good() && std::memcmp(magic, detail::kCheckpointMagic, 4) == 0,
            "checkpoint: bad magic header");
  const auto version = detail::read_pod<std::uint32_t>(in);
  check_arg(version == detail::kCheckpointVersion, "checkpoint: unsupported version ", version);
  const auto count = detail::read_pod<std::uint32_t>(in);
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    check_state(in.good(), "checkpoint: truncated tensor name");
    const auto rows = detail::read_pod<std::uint64_t>(in);
    const auto cols = detail::read_pod<std::uint64_t>(in);
    Tensor2 t(static_cast<int>(rows), static_cast<int>(cols));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    check_state(in.good(), "checkpoint: truncated tensor data for '", name, "'");
    store.add(name, std::move(t));
  }
  return store;
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_arg(in.good(), "checkpoint: cannot open '", path, "'");
  return load_checkpoint(in);
}

}  // namespace duconte
