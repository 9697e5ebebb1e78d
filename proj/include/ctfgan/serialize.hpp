/*
Copyright 2026 the ctfgan authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
you may obtain a copy of the License at

                http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctfgan/errors.hpp"
#include "ctfgan/rng.hpp"
#include "ctfgan/tensor.hpp"

// Versioned binary bundle: magic, format version, a JSON header, a named
// tensor table, and a trailing content hash. All writes go through a
// temporary file plus rename, so readers never observe partial output.
namespace ctfgan {

inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'F', 'G', 'A', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

namespace detail {

template <typename T>
void put_raw(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IntegrityError("checkpoint: truncated stream");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

// Writes bytes to `path` atomically: temp file in the same directory, flush,
// then rename over the destination.
inline void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_raw(out, kCheckpointVersion);

  const std::string header = ck.header.dump();
  detail::put_raw(out, static_cast<std::uint64_t>(header.size()));
  out += header;

  detail::put_raw(out, static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    detail::put_raw(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_raw(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d = 0; d < t.rank(); ++d)
      detail::put_raw(out, static_cast<std::int64_t>(t.dim(d)));
    const char* data = reinterpret_cast<const char*>(t.data());
    out.append(data, static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  detail::put_raw(out, fnv1a64(out.data(), out.size()));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
    throw IntegrityError("checkpoint: file too small");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IntegrityError("checkpoint: bad magic");

  const std::size_t hashed = bytes.size() - sizeof(std::uint64_t);
  std::size_t pos = hashed;
  const std::uint64_t stored = detail::get_raw<std::uint64_t>(bytes, pos);
  if (fnv1a64(bytes.data(), hashed) != stored)
    throw IntegrityError("checkpoint: content hash mismatch");

  pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_raw<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));

  const auto header_len = detail::get_raw<std::uint64_t>(bytes, pos);
  if (pos + header_len > hashed) throw IntegrityError("checkpoint: truncated header");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
  }
  pos += header_len;

  const auto count = detail::get_raw<std::uint64_t>(bytes, pos);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_raw<std::uint32_t>(bytes, pos);
    if (pos + name_len > hashed) throw IntegrityError("checkpoint: truncated tensor name");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rank = detail::get_raw<std::uint32_t>(bytes, pos);
    if (rank > 8) throw IntegrityError("checkpoint: implausible tensor rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = detail::get_raw<std::int64_t>(bytes, pos);
      if (dim < 0) throw IntegrityError("checkpoint: negative dimension");
      shape.push_back(dim);
      numel *= dim;
    }
    const std::size_t data_bytes = static_cast<std::size_t>(numel) * sizeof(double);
    if (pos + data_bytes > hashed) throw IntegrityError("checkpoint: truncated tensor data");
    Tensor t(shape);
    std::memcpy(t.data(), bytes.data() + pos, data_bytes);
    pos += data_bytes;
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (pos != hashed) throw IntegrityError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace ctfgan
