// Flat parameter archive: magic, entry count, then (name, 4xu64 shape, raw
// little-endian 64-bit floats) per tensor, written in visitation order.
// Loading is strict: names and shapes must match the model exactly.

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "egf/fusion.hpp"
#include "egf/tensor.hpp"

namespace egf {

inline constexpr char kCheckpointMagic[8] = {'E', 'G', 'F', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::string& path, EgfNet& net) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  check_arg(os.good(), "cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);

  std::vector<std::pair<std::string, Tensor>> entries;
  net.visit([&](const std::string& name, Tensor& t, bool) {
    entries.emplace_back(name, t);
  });
  detail::write_u64_le(os, entries.size());
  for (auto& [name, t] : entries) {
    detail::write_u64_le(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape4& s = t.shape();
    for (std::int64_t d : {s.n, s.c, s.h, s.w})
      detail::write_u64_le(os, static_cast<std::uint64_t>(d));
    for (double v : t.values()) detail::write_f64_le(os, v);
  }
  check_arg(os.good(), "write failed for " + path);
}

inline void load_checkpoint(const std::string& path, EgfNet& net) {
  std::ifstream is(path, std::ios::binary);
  check_arg(is.good(), "cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  check_arg(is.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
            path + " is not a checkpoint file");
  const std::uint64_t count = detail::read_u64_le(is);
  std::map<std::string, Tensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = detail::read_u64_le(is);
    check_arg(name_len < 4096, path + ": corrupt entry name");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    Shape4 s;
    s.n = static_cast<std::int64_t>(detail::read_u64_le(is));
    s.c = static_cast<std::int64_t>(detail::read_u64_le(is));
    s.h = static_cast<std::int64_t>(detail::read_u64_le(is));
    s.w = static_cast<std::int64_t>(detail::read_u64_le(is));
    std::vector<double> values(static_cast<std::size_t>(s.numel()));
    for (double& v : values) v = detail::read_f64_le(is);
    check_arg(is.good(), path + ": truncated checkpoint");
    entries.emplace(name, Tensor::from_values(s, std::move(values)));
  }

  std::size_t consumed = 0;
  net.visit([&](const std::string& name, Tensor& t, bool) {
    auto it = entries.find(name);
    check_arg(it != entries.end(), "checkpoint " + path + " is missing " + name);
    check_arg(it->second.shape() == t.shape(),
              "checkpoint shape mismatch for " + name + ": file has " +
                  it->second.shape().str() + ", model expects " + t.shape().str());
    t.values() = it->second.values();
    ++consumed;
  });
  check_arg(consumed == entries.size(),
            "checkpoint " + path + " carries " +
                std::to_string(entries.size() - consumed) +
                " entries unknown to this architecture");
}

}  // namespace egf
