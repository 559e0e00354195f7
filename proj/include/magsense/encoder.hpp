#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "magsense/core.hpp"

namespace magsense::encoder {

inline constexpr const char* kFormatTag = "magsense-encoder v1";

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input projection, residual dilated causal conv blocks, output projection.
// All parameters live in one flat vector; the accessors below are views.
struct EncoderModel {
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Vector>;
  using ConstVecMap = Eigen::Map<const Vector>;

  std::size_t channels = kDefaultChannels;
  std::size_t hidden = 32;
  std::size_t embed_dim = 64;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1, 2, 4};
  Vector params;

  static EncoderModel create(std::uint64_t seed, std::size_t channels = kDefaultChannels, std::size_t hidden = 32,
                             std::size_t embed_dim = 64, std::vector<std::size_t> dilations = {1, 2, 4});

  std::size_t parameter_count() const;
  std::size_t blocks() const { return dilations.size(); }
  void validate() const;

  ConstMatMap in_weight() const;
  ConstVecMap in_bias() const;
  ConstMatMap tap_weight(std::size_t block, std::size_t tap) const;
  ConstVecMap block_bias(std::size_t block) const;
  ConstMatMap out_weight() const;
  ConstVecMap out_bias() const;

  // Same layout over an arbitrary flat vector, used for gradients.
  MatMap in_weight(Vector& v) const;
  VecMap in_bias(Vector& v) const;
  MatMap tap_weight(Vector& v, std::size_t block, std::size_t tap) const;
  VecMap block_bias(Vector& v, std::size_t block) const;
  MatMap out_weight(Vector& v) const;
  VecMap out_bias(Vector& v) const;

  struct Block {
    std::string name;
    std::size_t offset, rows, cols;
  };
  std::vector<Block> layout() const;
};

// Per-timestep representations (embed_dim x T) of a T x channels sequence.
// `mask`, if given, zeroes hidden states of masked timesteps after the input
// projection (training augmentation).
Matrix represent(const EncoderModel& model, const Matrix& x, const std::vector<char>* mask = nullptr);

// Max over time of represent(); the inference embedding.
Vector encode(const EncoderModel& model, const Matrix& window);
Vector encode(const EncoderModel& model, const Window& w);

// Hierarchical temporal + instance contrastive loss over matched views
// (each embed_dim x T). Pools by 2 between levels, `levels` times at most.
// Gradients w.r.t. the views are written when the out-pointers are set.
double contrastive_loss(const std::vector<Matrix>& view_a, const std::vector<Matrix>& view_b, double temperature = 1.0,
                        std::size_t levels = 4, std::vector<Matrix>* grad_a = nullptr,
                        std::vector<Matrix>* grad_b = nullptr);

// One contrastive step's worth of data: contexts share crop boundaries.
struct TrainingBatch {
  std::vector<Matrix> contexts;  // each context_len x channels
  std::size_t a_begin = 0;       // view a = [a_begin, overlap_begin + overlap_len)
  std::size_t overlap_begin = 0;
  std::size_t overlap_len = kWindowLength;
  std::size_t b_end = 0;  // view b = [overlap_begin, b_end)
  std::vector<std::vector<char>> mask_a, mask_b;  // per context, per view timestep
};

// Loss of the batch and, optionally, its gradient w.r.t. model.params.
double batch_loss(const EncoderModel& model, const TrainingBatch& batch, double temperature, std::size_t levels,
                  Vector* grad = nullptr);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 60;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  std::size_t context_len = 32;
  double mask_rate = 0.1;
  std::size_t contexts_per_recording = 8;
  double active_fraction = 0.75;  // share of contexts centred on magnet activity
  double active_level = 0.1;      // normalized magnitude counted as activity
  std::size_t hidden = 32;
  std::size_t embed_dim = 64;
  std::size_t levels = 4;

  void validate() const;
};

struct TrainResult {
  EncoderModel model;
  std::vector<double> epoch_loss;
};

// Sequences are normalized, env-subtracted frame streams (T x channels).
TrainResult pretrain(const std::vector<Matrix>& sequences, const TrainConfig& cfg);

// Draws shared crop boundaries and masks for the given contexts the way
// pretrain does.
TrainingBatch make_batch(std::vector<Matrix> contexts, const TrainConfig& cfg, std::uint64_t seed);

std::string format_model(const EncoderModel& model);
EncoderModel parse_model(const std::string& text);
void save_model(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_model(const std::filesystem::path& path);

void write_loss_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path);

}  // namespace magsense::encoder
