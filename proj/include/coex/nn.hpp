#pragma once

// Recurrent actor-critic network: encoder (symbolic FC or pixel conv stack),
// one LSTM layer fed with the encoder output plus previous action and reward,
// and separate policy [64,64,4] and value [64,64,1] heads. Parameters live in
// one flat vector so the optimizer and checkpoints treat them uniformly.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coex/episode.hpp"

namespace coex {

inline constexpr int kPrevWidth = 5;  // previous action (4) + previous reward
inline constexpr int kHeadOut = 4;    // turn loc, forward loc, grasp logit, activate logit
inline constexpr int kActionDims = 2;

struct NetShape {
  ObsMode obs = ObsMode::kSymbolic;
  int enc_width = 128;
  int hidden = 64;
  int head_width = 64;

  static NetShape symbolic() { return {}; }
  static NetShape pixel() { return {ObsMode::kPixel, 256, 256, 64}; }
  [[nodiscard]] int obs_width() const { return obs == ObsMode::kSymbolic ? kSymbolicWidth : kPixelWidth; }
  bool operator==(const NetShape&) const = default;
};

struct Tensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;  // output width for weight matrices
  std::size_t cols = 1;
  [[nodiscard]] std::size_t size() const { return rows * cols; }
};

// A batch of B sequences of length T, stored time-major: row r = t * B + b.
struct SeqInput {
  int T = 0;
  int B = 0;
  std::vector<double> obs;   // T*B x obs_width
  std::vector<double> prev;  // T*B x kPrevWidth
};

struct RecurrentState {
  std::vector<double> h;  // B x hidden
  std::vector<double> c;
  static RecurrentState zeros(int batch, int hidden);
};

struct SeqOutput {
  std::vector<double> head;   // T*B x kHeadOut
  std::vector<double> value;  // T*B
};

class PolicyNet {
 public:
  PolicyNet(NetShape shape, std::uint64_t seed);

  [[nodiscard]] const NetShape& shape() const { return shape_; }
  [[nodiscard]] std::vector<double>& params() { return params_; }
  [[nodiscard]] const std::vector<double>& params() const { return params_; }
  [[nodiscard]] const std::vector<Tensor>& tensors() const { return tensors_; }
  [[nodiscard]] const Tensor& tensor(const std::string& name) const;
  [[nodiscard]] std::span<double> view(const std::string& name);
  // Index of the first log-deviation parameter.
  [[nodiscard]] std::size_t log_std_offset() const { return log_std_; }

  struct Cache;

  // Runs the sequences from `state` (updated in place to the final state).
  // Throws std::invalid_argument on shape mismatch.
  void forward(const SeqInput& in, RecurrentState& state, SeqOutput& out, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grad` given output gradients.
  // The sequences must have started from the zero state.
  void backward(const SeqInput& in, const Cache& cache, const SeqOutput& d_out, std::vector<double>& grad) const;

 private:
  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);
  void encode(const SeqInput& in, std::vector<double>& enc, Cache* cache) const;
  void encode_backward(const SeqInput& in, const Cache& cache, std::vector<double>& d_enc,
                       std::vector<double>& grad) const;

  NetShape shape_;
  std::vector<double> params_;
  std::vector<Tensor> tensors_;
  std::size_t log_std_ = 0;
};

struct PolicyNet::Cache {
  int T = 0;
  int B = 0;
  // Encoder.
  std::vector<std::vector<double>> conv_cols;  // im2col buffers, one per conv layer
  std::vector<std::vector<double>> conv_out;   // post-ReLU activations per conv layer
  std::vector<double> enc;                     // post-ReLU encoder output
  // Recurrent cell.
  std::vector<double> z;      // LSTM input rows
  std::vector<double> gates;  // i, f, g, o after their nonlinearities
  std::vector<double> c;
  std::vector<double> h;
  // Heads.
  std::vector<double> p1, p2, v1, v2;
};

// Conv stack geometry of the pixel encoder.
struct ConvSpec {
  int in_side;
  int in_ch;
  int kernel;
  int stride;
  int out_ch;
  [[nodiscard]] int out_side() const { return (in_side - kernel) / stride + 1; }
  [[nodiscard]] int patch() const { return kernel * kernel * in_ch; }
};
std::span<const ConvSpec> pixel_conv_stack();

}  // namespace coex
