#pragma once

// Versioned container of named float tensors plus the architecture
// descriptor that produced them.

#include "bvton/nn.hpp"
#include "bvton/types.hpp"

#include <filesystem>
#include <stdexcept>

namespace bvton::ckpt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kVersion = 1;

void save(const std::filesystem::path& path, const nn::ParamStore<Real>& store);
/// Overwrites the values in `store`; refuses on descriptor, name or shape mismatch.
void load(const std::filesystem::path& path, nn::ParamStore<Real>& store);
/// Descriptor recorded in a checkpoint file.
std::string peek_descriptor(const std::filesystem::path& path);

}  // namespace bvton::ckpt
