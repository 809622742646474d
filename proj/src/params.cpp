// SPDX-License-Identifier: Apache-2.0
#include "fat/params.hpp"

#include <cstring>
#include <fstream>

#include "fat/error.hpp"

namespace fat {

namespace {

void check_group(const std::string& group) {
  if (group != "backbone" && group != "transformer") {
    throw ContractError("parameter group must be 'backbone' or 'transformer', got '" +
                        group + "'");
  }
}

}  // namespace

Tensor ParamStore::emplace(const std::string& name, Shape shape, const std::string& group,
                           std::vector<double> values) {
  check_group(group);
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.value.shape() != shape || it->second.group != group) {
      throw ContractError("parameter '" + name + "' re-registered with different " +
                          "shape or group");
    }
    return it->second.value;
  }
  Tensor t = Tensor::from_data(std::move(shape), std::move(values), true);
  params_[name] = Parameter{t, group};
  return t;
}

Tensor ParamStore::normal(const std::string& name, Shape shape, const std::string& group,
                          double stddev) {
  auto it = params_.find(name);
  if (it != params_.end()) return emplace(name, std::move(shape), group, {});
  RandomStream r(seed_for(seed_, name));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = r.normal() * stddev;
  return emplace(name, std::move(shape), group, std::move(v));
}

Tensor ParamStore::zeros(const std::string& name, Shape shape, const std::string& group) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
  return emplace(name, std::move(shape), group, std::move(v));
}

Tensor ParamStore::ones(const std::string& name, Shape shape, const std::string& group) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 1.0);
  return emplace(name, std::move(shape), group, std::move(v));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, const std::string& group,
                            std::vector<double> values) {
  return emplace(name, std::move(shape), group, std::move(values));
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::int64_t ParamStore::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.value.zero_grad();
}

namespace {

// All multi-byte fields little-endian; this code assumes an LE host (the
// loader validates via a magic number that would scramble otherwise).
constexpr char kMagic[8] = {'F', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

std::string read_blob(std::ifstream& in, std::uint32_t len) {
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& config_text,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, static_cast<std::uint32_t>(store.all().size()));
  for (const auto& [name, p] : store.all()) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(p.group.size()));
    out.write(p.group.data(), static_cast<std::streamsize>(p.group.size()));
    const auto& shape = p.value.shape();
    write_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::int64_t d : shape) write_u64(out, static_cast<std::uint64_t>(d));
    const auto& data = p.value.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  write_u32(out, static_cast<std::uint32_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  if (!out) throw DataError("checkpoint write failed: " + path);

  std::ofstream man(path + ".manifest.txt", std::ios::trunc);
  man << "parameters: " << store.all().size() << "\n";
  for (const auto& [name, p] : store.all()) {
    man << name << "  group=" << p.group << "  shape=" << shape_str(p.value.shape())
        << "\n";
  }
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  CheckpointData ckpt;
  const std::uint32_t count = read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_blob(in, read_u32(in));
    const std::string group = read_blob(in, read_u32(in));
    const std::uint32_t rank = read_u32(in);
    if (rank > 8) throw DataError("implausible rank in checkpoint: " + path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(in));
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint: " + path);
    ckpt.params[name] = Parameter{Tensor::from_data(shape, std::move(data), true), group};
  }
  ckpt.config_text = read_blob(in, read_u32(in));
  return ckpt;
}

void restore_params(ParamStore& store, const CheckpointData& ckpt) {
  for (auto& [name, p] : store.all()) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) {
      throw DataError("checkpoint missing parameter '" + name + "'");
    }
    if (it->second.value.shape() != p.value.shape()) {
      throw DataError("checkpoint shape mismatch for '" + name + "': " +
                      shape_str(it->second.value.shape()) + " vs " +
                      shape_str(p.value.shape()));
    }
    p.value.data() = it->second.value.data();
    p.value.zero_grad();
  }
}

}  // namespace fat
