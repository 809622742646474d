// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fat/tensor.hpp"

namespace fat {

// A trainable tensor plus its learning-rate group.
struct Parameter {
  Tensor value;
  std::string group;  // "backbone" or "transformer"
};

// Named parameter registry. Initialization is derived from
// (global_seed, name) alone, so a parameter shared by two configurations
// starts identical regardless of what else each configuration registers.
// Requesting an existing name returns the stored tensor (weight sharing).
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t global_seed) : seed_(global_seed) {}

  Tensor normal(const std::string& name, Shape shape, const std::string& group,
                double stddev);
  Tensor zeros(const std::string& name, Shape shape, const std::string& group);
  Tensor ones(const std::string& name, Shape shape, const std::string& group);
  Tensor constant(const std::string& name, Shape shape, const std::string& group,
                  std::vector<double> values);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  const Parameter& get(const std::string& name) const;
  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  std::int64_t count() const { return static_cast<std::int64_t>(params_.size()); }
  std::int64_t scalar_count() const;
  void zero_grad();
  std::uint64_t global_seed() const { return seed_; }

 private:
  Tensor emplace(const std::string& name, Shape shape, const std::string& group,
                 std::vector<double> values);

  std::uint64_t seed_;
  std::map<std::string, Parameter> params_;  // name-ordered: deterministic IO
};

// Checkpoint archive: little-endian length-prefixed records, one per
// parameter, followed by a config text blob. A human-readable manifest is
// written next to it. Layout documented in docs/formats.md.
void save_checkpoint(const ParamStore& store, const std::string& config_text,
                     const std::string& path);

struct CheckpointData {
  std::map<std::string, Parameter> params;
  std::string config_text;
};

CheckpointData load_checkpoint(const std::string& path);

// Copies values from a loaded checkpoint into an existing store; every
// store parameter must be present with matching shape.
void restore_params(ParamStore& store, const CheckpointData& ckpt);

}  // namespace fat
