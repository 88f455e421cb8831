// SPDX-License-Identifier: Apache-2.0
#include "drl/numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "drl/error.hpp"

namespace drl::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'R', 'L', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw RuntimeFailure("cannot open checkpoint for writing: " + path.string());
  }
  template <typename V>
  void put(V v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(std::uint32_t(s.size()));
    out_.write(s.data(), std::streamsize(s.size()));
  }
  template <typename V>
  void put_values(const V* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(V)));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw RuntimeFailure("failed writing checkpoint " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw RuntimeFailure("cannot open checkpoint: " + path.string());
  }
  template <typename V>
  V get() {
    V v{};
    read(&v, sizeof(V));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), std::streamsize(bytes));
    if (!in_) throw RuntimeFailure("truncated checkpoint " + path_.string());
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

CheckpointInfo read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw RuntimeFailure("not a checkpoint file (bad magic): " + path.string());
  CheckpointInfo info;
  info.scalar_bytes = r.get<std::uint32_t>();
  info.config_hash = r.get<std::uint64_t>();
  info.epoch = r.get<std::int32_t>();
  info.metadata = r.get_string();
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointInfo& info,
                     const StateRefs<T>& state, const AdamState<T>* optimizer) {
  Writer w(path);
  w.put_values(kMagic, 8);
  w.put<std::uint32_t>(sizeof(T));
  w.put<std::uint64_t>(info.config_hash);
  w.put<std::int32_t>(info.epoch);
  w.put_string(info.metadata);
  w.put<std::uint32_t>(std::uint32_t(state.parameters.size()));
  for (const auto& p : state.parameters) {
    w.put_string(p.name);
    w.put<std::uint32_t>(std::uint32_t(p.tensor.rank()));
    for (auto e : p.tensor.shape()) w.put<std::uint64_t>(e);
    w.put_values(p.tensor.values().data(), p.tensor.numel());
  }
  w.put<std::uint32_t>(std::uint32_t(state.buffers.size()));
  for (const auto& b : state.buffers) {
    w.put_string(b.name);
    w.put<std::uint64_t>(b.values->size());
    w.put_values(b.values->data(), b.values->size());
  }
  w.put<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    w.put<std::uint64_t>(optimizer->step_count);
    for (std::size_t i = 0; i < state.parameters.size(); ++i) {
      w.put_values(optimizer->first_moment.at(i).data(), optimizer->first_moment[i].size());
      w.put_values(optimizer->second_moment.at(i).data(), optimizer->second_moment[i].size());
    }
  }
  w.finish(path);
}

template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, StateRefs<T>& state,
                               AdamState<T>* optimizer) {
  Reader r(path);
  CheckpointInfo info = read_header(r, path);
  if (info.scalar_bytes != sizeof(T))
    throw ValidationError("checkpoint " + path.string() + " stores " +
                          std::to_string(info.scalar_bytes) + "-byte values, expected " +
                          std::to_string(sizeof(T)));
  const auto n_params = r.get<std::uint32_t>();
  if (n_params != state.parameters.size())
    throw ValidationError("checkpoint has " + std::to_string(n_params) +
                          " parameters but the model has " +
                          std::to_string(state.parameters.size()));
  for (auto& p : state.parameters) {
    const std::string name = r.get_string();
    if (name != p.name)
      throw ValidationError("checkpoint parameter '" + name + "' where '" + p.name +
                            "' was expected");
    Shape shape(r.get<std::uint32_t>());
    for (auto& e : shape) e = r.get<std::uint64_t>();
    if (shape != p.tensor.shape())
      throw ValidationError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p.tensor.shape()));
    r.read(p.tensor.values().data(), p.tensor.numel() * sizeof(T));
  }
  const auto n_buffers = r.get<std::uint32_t>();
  if (n_buffers != state.buffers.size())
    throw ValidationError("checkpoint buffer count mismatch");
  for (auto& b : state.buffers) {
    const std::string name = r.get_string();
    const auto len = r.get<std::uint64_t>();
    if (name != b.name || len != b.values->size())
      throw ValidationError("checkpoint buffer '" + name + "' does not match '" + b.name + "'");
    r.read(b.values->data(), len * sizeof(T));
  }
  const bool has_opt = r.get<std::uint8_t>() != 0;
  if (optimizer) {
    if (!has_opt) throw ValidationError("checkpoint " + path.string() + " has no optimizer state");
    optimizer->step_count = r.get<std::uint64_t>();
    optimizer->first_moment.resize(state.parameters.size());
    optimizer->second_moment.resize(state.parameters.size());
    for (std::size_t i = 0; i < state.parameters.size(); ++i) {
      const std::size_t n = state.parameters[i].tensor.numel();
      optimizer->first_moment[i].resize(n);
      optimizer->second_moment[i].resize(n);
      r.read(optimizer->first_moment[i].data(), n * sizeof(T));
      r.read(optimizer->second_moment[i].data(), n * sizeof(T));
    }
  }
  return info;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r, path);
}

template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&,
                              const StateRefs<float>&, const AdamState<float>*);
template void save_checkpoint(const std::filesystem::path&, const CheckpointInfo&,
                              const StateRefs<double>&, const AdamState<double>*);
template CheckpointInfo load_checkpoint(const std::filesystem::path&, StateRefs<float>&,
                                        AdamState<float>*);
template CheckpointInfo load_checkpoint(const std::filesystem::path&, StateRefs<double>&,
                                        AdamState<double>*);

}  // namespace drl::nn
