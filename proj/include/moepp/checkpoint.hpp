#pragma once

// Checkpoint container:
//
//   MOEPP-CHECKPOINT 1\n
//   <one-line JSON header>\n
//   <float64 little-endian payload>
//
// The header holds format_version, the ModelConfig, the optimizer step,
// the training seed and RNG state, and an "arrays" list of
// {name, shape, offset} where offset counts doubles into the payload.
// Model parameters use Model::named_parameters() names; optimizer moments
// are stored as "adam.m.<name>" and "adam.v.<name>".

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moepp/model.hpp"
#include "moepp/train.hpp"

namespace moepp {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;  // empty when saved without a trainer
  std::map<std::string, Tensor> arrays;
};

/// Writes model parameters, plus optimizer moments, step and RNG state when
/// `trainer` is given.
void save_checkpoint(const std::string& path, const Model& model, Trainer* trainer = nullptr);
Checkpoint read_checkpoint(const std::string& path);

/// Model with every parameter taken from the checkpoint.
Model model_from_checkpoint(const Checkpoint& ckpt);
/// Copies parameters into an existing model of the same configuration.
void load_parameters(const Checkpoint& ckpt, Model& model);
/// Restores optimizer moments, step counter and sampling RNG.
void restore_trainer(const Checkpoint& ckpt, Trainer& trainer, const Model& model);

}  // namespace moepp
