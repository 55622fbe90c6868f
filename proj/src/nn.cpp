#include "coex/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "coex/kernels.hpp"
#include "coex/rng.hpp"

namespace coex {
namespace {

constexpr std::array<ConvSpec, 3> kConvStack{{
    {kPixelSide, 3, 8, 4, 32},
    {15, 32, 4, 2, 64},
    {6, 64, 3, 1, 64},
}};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void add_bias(double* y, const double* b, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) kernels::axpy(1.0, b, y + r * n, n);
}

void relu(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// dY *= (Y > 0), where Y is the post-ReLU activation.
void relu_backward(std::vector<double>& dy, const std::vector<double>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (y[i] <= 0.0) dy[i] = 0.0;
  }
}

void bias_backward(const double* dy, double* db, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) kernels::axpy(1.0, dy + r * n, db, n);
}

// Y = relu?(X W^T + b) over `rows` rows.
void dense(const double* x, const double* w, const double* b, double* y, std::size_t rows, std::size_t n_in,
           std::size_t n_out) {
  kernels::matmul_wt(x, w, y, rows, n_in, n_out);
  add_bias(y, b, rows, n_out);
}

void im2col(const double* img, const ConvSpec& s, double* cols) {
  const int os = s.out_side();
  const int k = s.kernel;
  for (int oy = 0; oy < os; ++oy) {
    for (int ox = 0; ox < os; ++ox) {
      double* dst = cols + static_cast<std::size_t>(oy * os + ox) * static_cast<std::size_t>(s.patch());
      for (int ky = 0; ky < k; ++ky) {
        const double* src = img + (static_cast<std::size_t>(oy * s.stride + ky) * s.in_side + ox * s.stride) * s.in_ch;
        std::copy(src, src + static_cast<std::ptrdiff_t>(k * s.in_ch), dst + static_cast<std::ptrdiff_t>(ky * k * s.in_ch));
      }
    }
  }
}

void col2im_acc(const double* cols, const ConvSpec& s, double* img) {
  const int os = s.out_side();
  const int k = s.kernel;
  for (int oy = 0; oy < os; ++oy) {
    for (int ox = 0; ox < os; ++ox) {
      const double* src = cols + static_cast<std::size_t>(oy * os + ox) * static_cast<std::size_t>(s.patch());
      for (int ky = 0; ky < k; ++ky) {
        double* dst = img + (static_cast<std::size_t>(oy * s.stride + ky) * s.in_side + ox * s.stride) * s.in_ch;
        kernels::axpy(1.0, src + ky * k * s.in_ch, dst, static_cast<std::size_t>(k * s.in_ch));
      }
    }
  }
}

std::size_t conv_out_size(const ConvSpec& s) {
  return static_cast<std::size_t>(s.out_side() * s.out_side() * s.out_ch);
}

}  // namespace

std::span<const ConvSpec> pixel_conv_stack() { return kConvStack; }

RecurrentState RecurrentState::zeros(int batch, int hidden) {
  const auto n = static_cast<std::size_t>(batch * hidden);
  return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

std::size_t PolicyNet::add(const std::string& name, std::size_t rows, std::size_t cols) {
  Tensor t{name, params_.size(), rows, cols};
  params_.resize(params_.size() + t.size(), 0.0);
  tensors_.push_back(t);
  return t.offset;
}

const Tensor& PolicyNet::tensor(const std::string& name) const {
  for (const Tensor& t : tensors_) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor " + name);
}

std::span<double> PolicyNet::view(const std::string& name) {
  const Tensor& t = tensor(name);
  return {params_.data() + t.offset, t.size()};
}

PolicyNet::PolicyNet(NetShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape.enc_width <= 0 || shape.hidden <= 0 || shape.head_width <= 0) {
    throw std::invalid_argument("network widths must be positive");
  }
  const auto E = static_cast<std::size_t>(shape.enc_width);
  const auto H = static_cast<std::size_t>(shape.hidden);
  const auto F = static_cast<std::size_t>(shape.head_width);
  if (shape.obs == ObsMode::kSymbolic) {
    // Stored input-major so sparse observations touch contiguous rows.
    add("enc.wt", kSymbolicWidth, E);
    add("enc.b", E, 1);
  } else {
    for (std::size_t i = 0; i < kConvStack.size(); ++i) {
      add("conv" + std::to_string(i) + ".w", static_cast<std::size_t>(kConvStack[i].out_ch),
          static_cast<std::size_t>(kConvStack[i].patch()));
      add("conv" + std::to_string(i) + ".b", static_cast<std::size_t>(kConvStack[i].out_ch), 1);
    }
    add("enc.w", E, conv_out_size(kConvStack.back()));
    add("enc.b", E, 1);
  }
  add("lstm.wih", 4 * H, E + kPrevWidth);
  add("lstm.whh", 4 * H, H);
  add("lstm.b", 4 * H, 1);
  add("pi.w1", F, H);
  add("pi.b1", F, 1);
  add("pi.w2", F, F);
  add("pi.b2", F, 1);
  add("pi.w3", kHeadOut, F);
  add("pi.b3", kHeadOut, 1);
  add("v.w1", F, H);
  add("v.b1", F, 1);
  add("v.w2", F, F);
  add("v.b2", F, 1);
  add("v.w3", 1, F);
  add("v.b3", 1, 1);
  log_std_ = add("log_std", kActionDims, 1);

  Rng rng = Rng(seed).split("init");
  for (const Tensor& t : tensors_) {
    if (t.cols == 1 || t.name == "log_std") continue;
    const bool transposed = t.name == "enc.wt";
    const double fan_in = static_cast<double>(transposed ? t.rows : t.cols);
    double bound = 1.0 / std::sqrt(fan_in);
    if (t.name == "pi.w3") bound *= 0.01;
    for (std::size_t i = 0; i < t.size(); ++i) params_[t.offset + i] = rng.uniform(-bound, bound);
  }
  // Forget-gate bias.
  const Tensor& b = tensor("lstm.b");
  for (std::size_t i = H; i < 2 * H; ++i) params_[b.offset + i] = 1.0;
}

void PolicyNet::encode(const SeqInput& in, std::vector<double>& enc, Cache* cache) const {
  const auto rows = static_cast<std::size_t>(in.T * in.B);
  const auto E = static_cast<std::size_t>(shape_.enc_width);
  const double* p = params_.data();
  enc.assign(rows * E, 0.0);
  if (shape_.obs == ObsMode::kSymbolic) {
    const double* wt = p + tensor("enc.wt").offset;
    const double* b = p + tensor("enc.b").offset;
    for (std::size_t r = 0; r < rows; ++r) {
      double* y = enc.data() + r * E;
      std::copy(b, b + E, y);
      const double* x = in.obs.data() + r * kSymbolicWidth;
      for (std::size_t i = 0; i < kSymbolicWidth; ++i) {
        if (x[i] != 0.0) kernels::axpy(x[i], wt + i * E, y, E);
      }
    }
    relu(enc);
    return;
  }
  if (cache != nullptr) {
    cache->conv_cols.assign(kConvStack.size(), {});
    cache->conv_out.assign(kConvStack.size(), {});
  }
  const std::size_t flat = conv_out_size(kConvStack.back());
  std::vector<double> flat_all(rows * flat);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> act(in.obs.begin() + static_cast<std::ptrdiff_t>(r * kPixelWidth),
                            in.obs.begin() + static_cast<std::ptrdiff_t>((r + 1) * kPixelWidth));
    for (std::size_t l = 0; l < kConvStack.size(); ++l) {
      const ConvSpec& s = kConvStack[l];
      const auto positions = static_cast<std::size_t>(s.out_side() * s.out_side());
      std::vector<double> cols(positions * static_cast<std::size_t>(s.patch()));
      im2col(act.data(), s, cols.data());
      std::vector<double> out(positions * static_cast<std::size_t>(s.out_ch));
      const std::string name = "conv" + std::to_string(l);
      dense(cols.data(), p + tensor(name + ".w").offset, p + tensor(name + ".b").offset, out.data(), positions,
            static_cast<std::size_t>(s.patch()), static_cast<std::size_t>(s.out_ch));
      relu(out);
      if (cache != nullptr) {
        cache->conv_cols[l].insert(cache->conv_cols[l].end(), cols.begin(), cols.end());
        cache->conv_out[l].insert(cache->conv_out[l].end(), out.begin(), out.end());
      }
      act = std::move(out);
    }
    std::copy(act.begin(), act.end(), flat_all.begin() + static_cast<std::ptrdiff_t>(r * flat));
  }
  dense(flat_all.data(), p + tensor("enc.w").offset, p + tensor("enc.b").offset, enc.data(), rows, flat, E);
  relu(enc);
}

void PolicyNet::forward(const SeqInput& in, RecurrentState& state, SeqOutput& out, Cache* cache) const {
  const auto W = static_cast<std::size_t>(shape_.obs_width());
  const auto rows = static_cast<std::size_t>(in.T) * static_cast<std::size_t>(in.B);
  if (in.T <= 0 || in.B <= 0 || in.obs.size() != rows * W || in.prev.size() != rows * kPrevWidth) {
    throw std::invalid_argument("policy input shape mismatch");
  }
  const auto B = static_cast<std::size_t>(in.B);
  const auto E = static_cast<std::size_t>(shape_.enc_width);
  const auto H = static_cast<std::size_t>(shape_.hidden);
  const auto F = static_cast<std::size_t>(shape_.head_width);
  const std::size_t Z = E + kPrevWidth;
  if (state.h.size() != B * H || state.c.size() != B * H) throw std::invalid_argument("recurrent state shape mismatch");
  const double* p = params_.data();

  std::vector<double> enc;
  encode(in, enc, cache);
  std::vector<double> z(rows * Z);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(enc.begin() + static_cast<std::ptrdiff_t>(r * E), enc.begin() + static_cast<std::ptrdiff_t>((r + 1) * E),
              z.begin() + static_cast<std::ptrdiff_t>(r * Z));
    std::copy(in.prev.begin() + static_cast<std::ptrdiff_t>(r * kPrevWidth),
              in.prev.begin() + static_cast<std::ptrdiff_t>((r + 1) * kPrevWidth),
              z.begin() + static_cast<std::ptrdiff_t>(r * Z + E));
  }

  std::vector<double> gates(rows * 4 * H);
  dense(z.data(), p + tensor("lstm.wih").offset, p + tensor("lstm.b").offset, gates.data(), rows, Z, 4 * H);
  std::vector<double> hs(rows * H), cs(rows * H), rec(B * 4 * H);
  const double* whh = p + tensor("lstm.whh").offset;
  for (int t = 0; t < in.T; ++t) {
    const double* h_prev = t == 0 ? state.h.data() : hs.data() + (static_cast<std::size_t>(t) - 1) * B * H;
    const double* c_prev = t == 0 ? state.c.data() : cs.data() + (static_cast<std::size_t>(t) - 1) * B * H;
    kernels::matmul_wt(h_prev, whh, rec.data(), B, H, 4 * H);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t r = static_cast<std::size_t>(t) * B + b;
      double* g = gates.data() + r * 4 * H;
      const double* rg = rec.data() + b * 4 * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double i_g = sigmoid(g[j] + rg[j]);
        const double f_g = sigmoid(g[H + j] + rg[H + j]);
        const double c_g = std::tanh(g[2 * H + j] + rg[2 * H + j]);
        const double o_g = sigmoid(g[3 * H + j] + rg[3 * H + j]);
        g[j] = i_g;
        g[H + j] = f_g;
        g[2 * H + j] = c_g;
        g[3 * H + j] = o_g;
        const double c = f_g * c_prev[b * H + j] + i_g * c_g;
        cs[r * H + j] = c;
        hs[r * H + j] = o_g * std::tanh(c);
      }
    }
  }
  const std::size_t last = (static_cast<std::size_t>(in.T) - 1) * B * H;
  std::copy(hs.begin() + static_cast<std::ptrdiff_t>(last), hs.end(), state.h.begin());
  std::copy(cs.begin() + static_cast<std::ptrdiff_t>(last), cs.end(), state.c.begin());

  std::vector<double> p1(rows * F), p2(rows * F), v1(rows * F), v2(rows * F);
  out.head.assign(rows * kHeadOut, 0.0);
  out.value.assign(rows, 0.0);
  dense(hs.data(), p + tensor("pi.w1").offset, p + tensor("pi.b1").offset, p1.data(), rows, H, F);
  relu(p1);
  dense(p1.data(), p + tensor("pi.w2").offset, p + tensor("pi.b2").offset, p2.data(), rows, F, F);
  relu(p2);
  dense(p2.data(), p + tensor("pi.w3").offset, p + tensor("pi.b3").offset, out.head.data(), rows, F, kHeadOut);
  dense(hs.data(), p + tensor("v.w1").offset, p + tensor("v.b1").offset, v1.data(), rows, H, F);
  relu(v1);
  dense(v1.data(), p + tensor("v.w2").offset, p + tensor("v.b2").offset, v2.data(), rows, F, F);
  relu(v2);
  dense(v2.data(), p + tensor("v.w3").offset, p + tensor("v.b3").offset, out.value.data(), rows, F, 1);

  if (cache != nullptr) {
    cache->T = in.T;
    cache->B = in.B;
    cache->enc = std::move(enc);
    cache->z = std::move(z);
    cache->gates = std::move(gates);
    cache->c = std::move(cs);
    cache->h = std::move(hs);
    cache->p1 = std::move(p1);
    cache->p2 = std::move(p2);
    cache->v1 = std::move(v1);
    cache->v2 = std::move(v2);
  }
}

void PolicyNet::encode_backward(const SeqInput& in, const Cache& cache, std::vector<double>& d_enc,
                                std::vector<double>& grad) const {
  const auto rows = static_cast<std::size_t>(in.T * in.B);
  const auto E = static_cast<std::size_t>(shape_.enc_width);
  relu_backward(d_enc, cache.enc);
  bias_backward(d_enc.data(), grad.data() + tensor("enc.b").offset, rows, E);
  if (shape_.obs == ObsMode::kSymbolic) {
    double* dwt = grad.data() + tensor("enc.wt").offset;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = in.obs.data() + r * kSymbolicWidth;
      for (std::size_t i = 0; i < kSymbolicWidth; ++i) {
        if (x[i] != 0.0) kernels::axpy(x[i], d_enc.data() + r * E, dwt + i * E, E);
      }
    }
    return;
  }
  const double* p = params_.data();
  const ConvSpec& top = kConvStack.back();
  const std::size_t flat = conv_out_size(top);
  // Flattened conv output, rebuilt from the cache.
  const std::vector<double>& flat_all = cache.conv_out.back();
  kernels::outer_acc(d_enc.data(), flat_all.data(), grad.data() + tensor("enc.w").offset, rows, flat, E);
  std::vector<double> d_flat(rows * flat, 0.0);
  kernels::matmul_acc(d_enc.data(), p + tensor("enc.w").offset, d_flat.data(), rows, flat, E);

  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> d_act(d_flat.begin() + static_cast<std::ptrdiff_t>(r * flat),
                              d_flat.begin() + static_cast<std::ptrdiff_t>((r + 1) * flat));
    for (std::size_t l = kConvStack.size(); l-- > 0;) {
      const ConvSpec& s = kConvStack[l];
      const auto positions = static_cast<std::size_t>(s.out_side() * s.out_side());
      const auto patch = static_cast<std::size_t>(s.patch());
      const auto oc = static_cast<std::size_t>(s.out_ch);
      const std::string name = "conv" + std::to_string(l);
      const std::vector<double> out(cache.conv_out[l].begin() + static_cast<std::ptrdiff_t>(r * positions * oc),
                                    cache.conv_out[l].begin() + static_cast<std::ptrdiff_t>((r + 1) * positions * oc));
      relu_backward(d_act, out);
      const double* cols = cache.conv_cols[l].data() + r * positions * patch;
      kernels::outer_acc(d_act.data(), cols, grad.data() + tensor(name + ".w").offset, positions, patch, oc);
      bias_backward(d_act.data(), grad.data() + tensor(name + ".b").offset, positions, oc);
      if (l == 0) break;
      std::vector<double> d_cols(positions * patch, 0.0);
      kernels::matmul_acc(d_act.data(), p + tensor(name + ".w").offset, d_cols.data(), positions, patch, oc);
      std::vector<double> d_in(static_cast<std::size_t>(s.in_side * s.in_side * s.in_ch), 0.0);
      col2im_acc(d_cols.data(), s, d_in.data());
      d_act = std::move(d_in);
    }
  }
}

void PolicyNet::backward(const SeqInput& in, const Cache& cache, const SeqOutput& d_out,
                         std::vector<double>& grad) const {
  const auto rows = static_cast<std::size_t>(in.T) * static_cast<std::size_t>(in.B);
  if (cache.T != in.T || cache.B != in.B || d_out.head.size() != rows * kHeadOut || d_out.value.size() != rows) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  const auto B = static_cast<std::size_t>(in.B);
  const auto E = static_cast<std::size_t>(shape_.enc_width);
  const auto H = static_cast<std::size_t>(shape_.hidden);
  const auto F = static_cast<std::size_t>(shape_.head_width);
  const std::size_t Z = E + kPrevWidth;
  const double* p = params_.data();
  double* g = grad.data();
  auto off = [&](const char* name) { return tensor(name).offset; };

  std::vector<double> dh(rows * H, 0.0);
  {
    // Policy head.
    kernels::outer_acc(d_out.head.data(), cache.p2.data(), g + off("pi.w3"), rows, F, kHeadOut);
    bias_backward(d_out.head.data(), g + off("pi.b3"), rows, kHeadOut);
    std::vector<double> d2(rows * F, 0.0), d1(rows * F, 0.0);
    kernels::matmul_acc(d_out.head.data(), p + off("pi.w3"), d2.data(), rows, F, kHeadOut);
    relu_backward(d2, cache.p2);
    kernels::outer_acc(d2.data(), cache.p1.data(), g + off("pi.w2"), rows, F, F);
    bias_backward(d2.data(), g + off("pi.b2"), rows, F);
    kernels::matmul_acc(d2.data(), p + off("pi.w2"), d1.data(), rows, F, F);
    relu_backward(d1, cache.p1);
    kernels::outer_acc(d1.data(), cache.h.data(), g + off("pi.w1"), rows, H, F);
    bias_backward(d1.data(), g + off("pi.b1"), rows, F);
    kernels::matmul_acc(d1.data(), p + off("pi.w1"), dh.data(), rows, H, F);
  }
  {
    // Value head.
    kernels::outer_acc(d_out.value.data(), cache.v2.data(), g + off("v.w3"), rows, F, 1);
    bias_backward(d_out.value.data(), g + off("v.b3"), rows, 1);
    std::vector<double> d2(rows * F, 0.0), d1(rows * F, 0.0);
    kernels::matmul_acc(d_out.value.data(), p + off("v.w3"), d2.data(), rows, F, 1);
    relu_backward(d2, cache.v2);
    kernels::outer_acc(d2.data(), cache.v1.data(), g + off("v.w2"), rows, F, F);
    bias_backward(d2.data(), g + off("v.b2"), rows, F);
    kernels::matmul_acc(d2.data(), p + off("v.w2"), d1.data(), rows, F, F);
    relu_backward(d1, cache.v1);
    kernels::outer_acc(d1.data(), cache.h.data(), g + off("v.w1"), rows, H, F);
    bias_backward(d1.data(), g + off("v.b1"), rows, F);
    kernels::matmul_acc(d1.data(), p + off("v.w1"), dh.data(), rows, H, F);
  }

  // Backpropagation through time.
  std::vector<double> d_gates(rows * 4 * H, 0.0);
  std::vector<double> dh_next(B * H, 0.0), dc_next(B * H, 0.0);
  const std::vector<double> zeros(B * H, 0.0);
  const double* whh = p + off("lstm.whh");
  for (int t = in.T; t-- > 0;) {
    const std::size_t base = static_cast<std::size_t>(t) * B;
    const double* c_prev = t == 0 ? zeros.data() : cache.c.data() + (base - B) * H;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t r = base + b;
      const double* gt = cache.gates.data() + r * 4 * H;
      double* dg = d_gates.data() + r * 4 * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double i_g = gt[j], f_g = gt[H + j], c_g = gt[2 * H + j], o_g = gt[3 * H + j];
        const double tc = std::tanh(cache.c[r * H + j]);
        const double dht = dh[r * H + j] + dh_next[b * H + j];
        const double dc = dht * o_g * (1.0 - tc * tc) + dc_next[b * H + j];
        dg[j] = dc * c_g * i_g * (1.0 - i_g);
        dg[H + j] = dc * c_prev[b * H + j] * f_g * (1.0 - f_g);
        dg[2 * H + j] = dc * i_g * (1.0 - c_g * c_g);
        dg[3 * H + j] = dht * tc * o_g * (1.0 - o_g);
        dc_next[b * H + j] = dc * f_g;
      }
    }
    const double* dgt = d_gates.data() + base * 4 * H;
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (t > 0) {
      kernels::outer_acc(dgt, cache.h.data() + (base - B) * H, g + off("lstm.whh"), B, H, 4 * H);
      kernels::matmul_acc(dgt, whh, dh_next.data(), B, H, 4 * H);
    }
  }
  kernels::outer_acc(d_gates.data(), cache.z.data(), g + off("lstm.wih"), rows, Z, 4 * H);
  bias_backward(d_gates.data(), g + off("lstm.b"), rows, 4 * H);
  std::vector<double> dz(rows * Z, 0.0);
  kernels::matmul_acc(d_gates.data(), p + off("lstm.wih"), dz.data(), rows, Z, 4 * H);
  std::vector<double> d_enc(rows * E);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(dz.begin() + static_cast<std::ptrdiff_t>(r * Z), dz.begin() + static_cast<std::ptrdiff_t>(r * Z + E),
              d_enc.begin() + static_cast<std::ptrdiff_t>(r * E));
  }
  encode_backward(in, cache, d_enc, grad);
}

}  // namespace coex
