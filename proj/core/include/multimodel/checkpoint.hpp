#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "multimodel/model.hpp"

namespace mm {

/// Raised for unreadable or corrupt checkpoints; the message names the field.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// "MMCK", u32 version 1, u32 count, then per tensor: u16 name length, name,
/// u8 rank, rank x u64 dims, f64 payload; trailing u64 sum of payload bytes.
/// Integers and floats are little-endian.
void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

std::vector<NamedTensor> named_tensors(const ModelParams& p);
void save_checkpoint(const ModelParams& p, const std::string& path);
/// Overwrites every tensor of `p` from `tensors`; names and shapes must match
/// exactly.
void assign_tensors(ModelParams& p, const std::vector<NamedTensor>& tensors);

}  // namespace mm
