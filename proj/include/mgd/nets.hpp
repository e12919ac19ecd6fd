#pragma once

// Desk-scale plain conv nets with manual backprop. Each stage is a 3x3 conv
// (pad 1; stride 1 for the first stage, 2 afterwards) plus bias followed by
// ReLU; the head is global average pooling and a linear classifier. The
// pre-activation output of every stage is exposed as a distillation tap.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgd/tensor.hpp"

namespace mgd {

struct NetSpec {
  std::size_t in_channels = 1;
  std::size_t image_size = 16;
  std::vector<std::size_t> widths;
  std::size_t classes = 8;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Everything produced by one forward pass that backward needs.
struct ForwardPass {
  std::vector<FeatureMap> patches;  // per stage, (C_in*9) x (H_out*W_out)
  std::vector<FeatureMap> taps;    // stage pre-activations, C_out x (H*W)
  std::vector<double> pooled;
  std::vector<double> logits;
  bool valid = false;
};

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

inline CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw DimensionError("softmax_cross_entropy: label out of range");
  double peak = logits[0];
  for (double z : logits) peak = std::max(peak, z);
  CrossEntropy out;
  out.grad.resize(logits.size());
  double denom = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.grad[c] = std::exp(logits[c] - peak);
    denom += out.grad[c];
  }
  for (double& p : out.grad) p /= denom;
  out.loss = -(logits[label] - peak - std::log(denom));
  out.grad[label] -= 1.0;
  return out;
}

inline std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

namespace detail {

struct ConvGeometry {
  std::size_t in_c, out_c, in_h, in_w, out_h, out_w, stride;
};

// Lowers a C_in x (H*W) input into a (C_in*9) x (H_out*W_out) patch matrix
// with zero padding, row order (ci, ky, kx) matching the weight layout.
inline void im2col(const ConvGeometry& g, const double* in, double* patches) {
  const std::size_t out_n = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    const double* x = in + ci * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = patches + ((ci * 3 + ky) * 3 + kx) * out_n;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = long(oy * g.stride + ky) - 1;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = long(ox * g.stride + kx) - 1;
            const bool inside = iy >= 0 && iy < long(g.in_h) && ix >= 0 && ix < long(g.in_w);
            row[oy * g.out_w + ox] = inside ? x[iy * long(g.in_w) + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back onto the input grid.
inline void col2im(const ConvGeometry& g, const double* d_patches, double* d_in) {
  const std::size_t out_n = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    double* dx = d_in + ci * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = d_patches + ((ci * 3 + ky) * 3 + kx) * out_n;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = long(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= long(g.in_h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = long(ox * g.stride + kx) - 1;
            if (ix < 0 || ix >= long(g.in_w)) continue;
            dx[iy * long(g.in_w) + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// out[co] = b[co] + sum_r w[co][r] * patches[r]
inline void conv_forward(const ConvGeometry& g, const double* patches, const double* w,
                         const double* b, double* out) {
  const std::size_t out_n = g.out_h * g.out_w;
  const std::size_t taps = g.in_c * 9;
  for (std::size_t co = 0; co < g.out_c; ++co) {
    double* o = out + co * out_n;
    std::fill(o, o + out_n, b[co]);
    const double* wr = w + co * taps;
    for (std::size_t r = 0; r < taps; ++r) {
      const double wv = wr[r];
      const double* pr = patches + r * out_n;
      for (std::size_t k = 0; k < out_n; ++k) o[k] += wv * pr[k];
    }
  }
}

// Accumulates weight/bias gradients and, when d_patches is non-null, writes
// the patch-matrix gradient for the upstream gradient d_out.
inline void conv_backward(const ConvGeometry& g, const double* patches, const double* w,
                          const double* d_out, double* d_w, double* d_b, double* d_patches) {
  const std::size_t out_n = g.out_h * g.out_w;
  const std::size_t taps = g.in_c * 9;
  if (d_patches) std::fill(d_patches, d_patches + taps * out_n, 0.0);
  for (std::size_t co = 0; co < g.out_c; ++co) {
    const double* dz = d_out + co * out_n;
    double bias_grad = 0.0;
    for (std::size_t k = 0; k < out_n; ++k) bias_grad += dz[k];
    d_b[co] += bias_grad;
    const double* wr = w + co * taps;
    double* dwr = d_w + co * taps;
    for (std::size_t r = 0; r < taps; ++r) {
      const double* pr = patches + r * out_n;
      double acc = 0.0;
      for (std::size_t k = 0; k < out_n; ++k) acc += dz[k] * pr[k];
      dwr[r] += acc;
      if (d_patches) {
        double* dp = d_patches + r * out_n;
        const double wv = wr[r];
        for (std::size_t k = 0; k < out_n; ++k) dp[k] += wv * dz[k];
      }
    }
  }
}

}  // namespace detail

class ToyNet {
 public:
  ToyNet() = default;

  explicit ToyNet(NetSpec spec) : spec_(std::move(spec)) {
    if (spec_.widths.empty()) throw ValueError("ToyNet: need at least one stage");
    if (spec_.in_channels == 0 || spec_.image_size == 0 || spec_.classes < 2) {
      throw ValueError("ToyNet: invalid spec");
    }
    std::size_t in_c = spec_.in_channels;
    std::size_t side = spec_.image_size;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < spec_.widths.size(); ++p) {
      const std::size_t stride = p == 0 ? 1 : 2;
      const std::size_t out_side = (side - 1) / stride + 1;
      const std::size_t out_c = spec_.widths[p];
      if (out_c == 0) throw ValueError("ToyNet: zero-width stage");
      geometry_.push_back({in_c, out_c, side, side, out_side, out_side, stride});
      const std::string prefix = "stage" + std::to_string(p);
      add_block(prefix + ".weight", {out_c, in_c, 3, 3}, offset);
      add_block(prefix + ".bias", {out_c}, offset);
      in_c = out_c;
      side = out_side;
    }
    add_block("head.weight", {spec_.classes, in_c}, offset);
    add_block("head.bias", {spec_.classes}, offset);
    params_.assign(offset, 0.0);
    grads_.assign(offset, 0.0);
  }

  const NetSpec& spec() const noexcept { return spec_; }
  std::size_t stage_count() const noexcept { return geometry_.size(); }
  std::size_t stage_width(std::size_t p) const { return geometry_.at(p).out_c; }
  std::size_t tap_side(std::size_t p) const { return geometry_.at(p).out_h; }
  std::size_t tap_positions(std::size_t p) const {
    return geometry_.at(p).out_h * geometry_.at(p).out_w;
  }

  const std::vector<ParamBlock>& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> grads() noexcept { return grads_; }
  std::span<const double> grads() const noexcept { return grads_; }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  // He-normal conv and head weights, zero biases.
  template <typename Rng>
  void init(Rng& rng) {
    for (const auto& block : layout_) {
      const bool is_bias = block.shape.size() == 1;
      double fan_in = 1.0;
      for (std::size_t d = 1; d < block.shape.size(); ++d) fan_in *= double(block.shape[d]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t k = 0; k < block.size; ++k) {
        params_[block.offset + k] = is_bias ? 0.0 : dist(rng);
      }
    }
  }

  // `image` is in_channels x (image_size^2).
  ForwardPass forward(const FeatureMap& image) const {
    if (image.rows() != spec_.in_channels || image.cols() != spec_.image_size * spec_.image_size) {
      throw DimensionError("ToyNet::forward: image shape " + std::to_string(image.rows()) + "x" +
                           std::to_string(image.cols()) + " does not match net input");
    }
    ForwardPass pass;
    pass.patches.reserve(stage_count());
    pass.taps.reserve(stage_count());
    FeatureMap x = image;
    for (std::size_t p = 0; p < stage_count(); ++p) {
      const auto& g = geometry_[p];
      FeatureMap cols(g.in_c * 9, g.out_h * g.out_w);
      detail::im2col(g, x.values().data(), cols.values().data());
      FeatureMap z(g.out_c, g.out_h * g.out_w);
      detail::conv_forward(g, cols.values().data(), param_ptr(2 * p), param_ptr(2 * p + 1),
                           z.values().data());
      FeatureMap a = z;
      for (double& v : a.values()) v = v > 0.0 ? v : 0.0;
      pass.patches.push_back(std::move(cols));
      pass.taps.push_back(std::move(z));
      x = std::move(a);
    }
    const std::size_t c_last = x.rows();
    const double inv_n = 1.0 / static_cast<double>(x.cols());
    pass.pooled.assign(c_last, 0.0);
    for (std::size_t c = 0; c < c_last; ++c) {
      double s = 0.0;
      for (double v : x.row(c)) s += v;
      pass.pooled[c] = s * inv_n;
    }
    const double* hw = param_ptr(2 * stage_count());
    const double* hb = param_ptr(2 * stage_count() + 1);
    pass.logits.assign(spec_.classes, 0.0);
    for (std::size_t k = 0; k < spec_.classes; ++k) {
      double s = hb[k];
      for (std::size_t c = 0; c < c_last; ++c) s += hw[k * c_last + c] * pass.pooled[c];
      pass.logits[k] = s;
    }
    pass.valid = true;
    return pass;
  }

  // Accumulates into grads(). d_taps may be empty (no distillation) or hold
  // one entry per stage; an empty FeatureMap entry means no gradient there.
  void backward(const ForwardPass& pass, std::span<const double> d_logits,
                std::span<const FeatureMap> d_taps = {}) {
    if (!pass.valid || pass.taps.size() != stage_count()) {
      throw std::logic_error("ToyNet::backward: no matching forward pass");
    }
    if (d_logits.size() != spec_.classes) throw DimensionError("ToyNet::backward: d_logits size");
    if (!d_taps.empty() && d_taps.size() != stage_count()) {
      throw DimensionError("ToyNet::backward: need one tap gradient per stage");
    }
    const std::size_t last = stage_count() - 1;
    const std::size_t c_last = geometry_[last].out_c;
    const std::size_t n_last = geometry_[last].out_h * geometry_[last].out_w;

    const double* hw = param_ptr(2 * stage_count());
    double* d_hw = grad_ptr(2 * stage_count());
    double* d_hb = grad_ptr(2 * stage_count() + 1);
    std::vector<double> d_pooled(c_last, 0.0);
    for (std::size_t k = 0; k < spec_.classes; ++k) {
      d_hb[k] += d_logits[k];
      for (std::size_t c = 0; c < c_last; ++c) {
        d_hw[k * c_last + c] += d_logits[k] * pass.pooled[c];
        d_pooled[c] += d_logits[k] * hw[k * c_last + c];
      }
    }

    // Gradient w.r.t. the activation output of the current stage.
    FeatureMap d_act(c_last, n_last);
    const double inv_n = 1.0 / static_cast<double>(n_last);
    for (std::size_t c = 0; c < c_last; ++c) {
      for (double& v : d_act.row(c)) v = d_pooled[c] * inv_n;
    }

    for (std::size_t p = stage_count(); p-- > 0;) {
      const auto& g = geometry_[p];
      const FeatureMap& z = pass.taps[p];
      FeatureMap dz(g.out_c, g.out_h * g.out_w);
      {
        auto dzv = dz.values();
        const auto zv = z.values();
        const auto da = d_act.values();
        for (std::size_t k = 0; k < dzv.size(); ++k) dzv[k] = zv[k] > 0.0 ? da[k] : 0.0;
      }
      if (!d_taps.empty() && !d_taps[p].empty()) {
        require_same_shape(d_taps[p], dz, "ToyNet::backward tap gradient");
        auto dzv = dz.values();
        const auto dt = d_taps[p].values();
        for (std::size_t k = 0; k < dzv.size(); ++k) dzv[k] += dt[k];
      }
      FeatureMap d_cols;
      if (p > 0) d_cols = FeatureMap(g.in_c * 9, g.out_h * g.out_w);
      detail::conv_backward(g, pass.patches[p].values().data(), param_ptr(2 * p),
                            dz.values().data(), grad_ptr(2 * p), grad_ptr(2 * p + 1),
                            p > 0 ? d_cols.values().data() : nullptr);
      FeatureMap d_in;
      if (p > 0) {
        d_in = FeatureMap(g.in_c, g.in_h * g.in_w);
        detail::col2im(g, d_cols.values().data(), d_in.values().data());
      }
      d_act = std::move(d_in);
    }
  }

  // FNV-1a over the raw parameter bits.
  std::uint64_t weight_hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double w : params_) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(w);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

 private:
  void add_block(std::string name, std::vector<std::size_t> shape, std::size_t& offset) {
    std::size_t size = 1;
    for (auto d : shape) size *= d;
    layout_.push_back({std::move(name), std::move(shape), offset, size});
    offset += size;
  }

  const double* param_ptr(std::size_t block) const { return params_.data() + layout_[block].offset; }
  double* grad_ptr(std::size_t block) { return grads_.data() + layout_[block].offset; }

  NetSpec spec_;
  std::vector<detail::ConvGeometry> geometry_;
  std::vector<ParamBlock> layout_;
  std::vector<double> params_;
  std::vector<double> grads_;
};

struct SgdParams {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// Heavy-ball momentum with coupled weight decay:
//   g = grad + wd * w;  v = momentum * v + g;  w -= lr * v
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(std::size_t parameter_count) : velocity_(parameter_count, 0.0) {}

  void step(ToyNet& net, const SgdParams& p) {
    auto w = net.params();
    auto g = net.grads();
    if (velocity_.size() != w.size()) throw DimensionError("Sgd: parameter count changed");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + p.weight_decay * w[k];
      velocity_[k] = p.momentum * velocity_[k] + grad;
      w[k] -= p.lr * velocity_[k];
    }
  }

  std::span<const double> velocity() const noexcept { return velocity_; }

 private:
  std::vector<double> velocity_;
};

inline void sgd_step(ToyNet& net, Sgd& opt, const SgdParams& p) { opt.step(net, p); }

// Checkpoints: <stem>.bin holds every parameter as a little-endian float32 in
// layout order; <stem>.txt lists one "name dim0 dim1 ..." line per block.
inline void save_checkpoint(const ToyNet& net, const std::string& stem) {
  std::ofstream bin(stem + ".bin", std::ios::binary);
  std::ofstream txt(stem + ".txt");
  if (!bin || !txt) throw std::runtime_error("save_checkpoint: cannot open " + stem);
  for (double w : net.params()) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(w));
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    bin.write(bytes, 4);
  }
  for (const auto& block : net.layout()) {
    txt << block.name;
    for (auto d : block.shape) txt << ' ' << d;
    txt << '\n';
  }
}

inline ToyNet load_checkpoint(const NetSpec& spec, const std::string& stem) {
  ToyNet net(spec);
  std::ifstream txt(stem + ".txt");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!txt || !bin) throw std::runtime_error("load_checkpoint: missing checkpoint " + stem);
  std::string line;
  for (const auto& block : net.layout()) {
    if (!std::getline(txt, line)) throw ValueError("load_checkpoint: truncated sidecar");
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<std::size_t> shape;
    for (std::size_t d; ls >> d;) shape.push_back(d);
    if (name != block.name || shape != block.shape) {
      throw ValueError("load_checkpoint: layout mismatch at '" + line + "'");
    }
  }
  for (double& w : net.params()) {
    unsigned char bytes[4];
    if (!bin.read(reinterpret_cast<char*>(bytes), 4)) {
      throw ValueError("load_checkpoint: truncated weights");
    }
    const std::uint32_t bits = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
                               (std::uint32_t(bytes[2]) << 16) | (std::uint32_t(bytes[3]) << 24);
    w = static_cast<double>(std::bit_cast<float>(bits));
  }
  return net;
}

}  // namespace mgd
