#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <iterator>
#include <type_traits>
#include <vector>

#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/random.hpp"

namespace nnsig {

enum class Activation { relu, tanh, sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

inline double lipschitz_constant(Activation a) noexcept {
  return a == Activation::sigmoid ? 0.25 : 1.0;
}

inline double activate(Activation a, double z) noexcept {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative given the pre-activation z and the activation value a = psi(z).
// The relu derivative at 0 is taken to be 0.
inline double activate_derivative(Activation act, double z, double a) noexcept {
  switch (act) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - a * a;
    case Activation::sigmoid: return a * (1.0 - a);
  }
  return 1.0;
}

// Fully connected MLP: input -> hidden layers with activation -> affine
// scalar output. layer_dims = {d, H_1, ..., H_L, 1}.
struct Network {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;               // weights[l] is dims[l+1] x dims[l]
  std::vector<std::vector<double>> biases;   // biases[l] has dims[l+1] entries
  Activation activation = Activation::tanh;

  std::size_t input_dim() const noexcept { return layer_dims.front(); }
  std::size_t num_layers() const noexcept { return weights.size(); }
  // Number of hidden layers (L_d).
  std::size_t depth() const noexcept { return weights.size() - 1; }
  std::size_t max_width() const noexcept {
    std::size_t w = 0;
    for (std::size_t l = 1; l + 1 < layer_dims.size(); ++l) w = std::max(w, layer_dims[l]);
    return w;
  }
  std::size_t parameter_count() const noexcept {
    std::size_t p = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) p += weights[l].data().size() + biases[l].size();
    return p;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

inline void validate_layer_dims(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw ConfigError("layer_dims needs at least an input and an output entry");
  for (std::size_t v : dims) {
    if (v == 0) throw ConfigError("layer_dims entries must be positive");
  }
  if (dims.back() != 1) throw ConfigError("the output layer must have width 1");
}

inline Network zero_network(std::span<const std::size_t> dims, Activation act) {
  validate_layer_dims(dims);
  Network net;
  net.layer_dims.assign(dims.begin(), dims.end());
  net.activation = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    net.weights.emplace_back(dims[l + 1], dims[l]);
    net.biases.emplace_back(dims[l + 1], 0.0);
  }
  return net;
}

// Standard deviation of the Glorot normal sampler for input dimension d.
inline double glorot_sigma(std::size_t input_dim) noexcept {
  return std::sqrt(2.0 / (static_cast<double>(input_dim) + 1.0));
}

// Weights are resampled until they fall inside +-kGlorotTruncation * sigma.
inline constexpr double kGlorotTruncation = 2.0;

inline Network init_glorot(std::span<const std::size_t> dims, Activation act, RandomStream& rng) {
  Network net = zero_network(dims, act);
  const double sigma = glorot_sigma(dims.front());
  const double bound = kGlorotTruncation * sigma;
  for (auto& w : net.weights) {
    for (double& v : w.data()) v = rng.truncated_gaussian(sigma, bound);
  }
  return net;
}

inline Network init_glorot(std::span<const std::size_t> dims, Activation act, std::uint64_t seed) {
  RandomStream rng(seed);
  return init_glorot(dims, act, rng);
}

namespace detail {

inline void check_input(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw InputError("input has " + std::to_string(x.size()) + " components, network expects " +
                     std::to_string(net.input_dim()));
  }
}

// Pre-activations and activations of every layer for one input.
struct Trace {
  std::vector<std::vector<double>> pre;   // per layer (including output)
  std::vector<std::vector<double>> post;  // post[0] = x, post[l+1] = psi(pre[l])
};

inline void trace_forward(const Network& net, std::span<const double> x, Trace& t) {
  const std::size_t layers = net.num_layers();
  t.pre.resize(layers);
  t.post.resize(layers + 1);
  t.post[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& w = net.weights[l];
    const auto& in = t.post[l];
    auto& z = t.pre[l];
    z.assign(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = net.biases[l][r];
      const auto wr = w.row(r);
      for (std::size_t c = 0; c < wr.size(); ++c) s += wr[c] * in[c];
      z[r] = s;
    }
    auto& a = t.post[l + 1];
    if (l + 1 == layers) {
      a = z;  // affine output
    } else {
      a.resize(z.size());
      for (std::size_t r = 0; r < z.size(); ++r) a[r] = activate(net.activation, z[r]);
    }
  }
}

// Back-propagates d(output)/d(pre-activation) through the hidden layers.
// Returns delta[l] = d f / d pre[l] for every layer l.
inline void trace_backward(const Network& net, const Trace& t,
                           std::vector<std::vector<double>>& delta) {
  const std::size_t layers = net.num_layers();
  delta.resize(layers);
  delta[layers - 1].assign(1, 1.0);
  for (std::size_t l = layers - 1; l-- > 0;) {
    const Matrix& w = net.weights[l + 1];
    const auto& next = delta[l + 1];
    auto& cur = delta[l];
    cur.assign(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const auto wr = w.row(r);
      for (std::size_t c = 0; c < wr.size(); ++c) cur[c] += wr[c] * next[r];
    }
    for (std::size_t c = 0; c < cur.size(); ++c) {
      cur[c] *= activate_derivative(net.activation, t.pre[l][c], t.post[l + 1][c]);
    }
  }
}

inline void input_gradient_from_trace(const Network& net,
                                      const std::vector<std::vector<double>>& delta,
                                      std::span<double> out) {
  const Matrix& w = net.weights[0];
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < wr.size(); ++c) out[c] += wr[c] * delta[0][r];
  }
}

}  // namespace detail

inline double forward(const Network& net, std::span<const double> x) {
  detail::check_input(net, x);
  detail::Trace t;
  detail::trace_forward(net, x, t);
  return t.post.back()[0];
}

// Exact input gradient by reverse accumulation.
inline std::vector<double> input_gradient(const Network& net, std::span<const double> x) {
  detail::check_input(net, x);
  detail::Trace t;
  std::vector<std::vector<double>> delta;
  detail::trace_forward(net, x, t);
  detail::trace_backward(net, t, delta);
  std::vector<double> g(net.input_dim());
  detail::input_gradient_from_trace(net, delta, g);
  return g;
}

// f(x_i) for every row; row-by-row so results match forward() bit for bit.
inline std::vector<double> forward_rows(const Network& net, const Matrix& X) {
  if (X.cols() != net.input_dim()) throw InputError("covariate matrix width does not match network");
  std::vector<double> out(X.rows());
  detail::Trace t;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    detail::trace_forward(net, X.row(i), t);
    out[i] = t.post.back()[0];
  }
  return out;
}

// n x d matrix of input gradients, one row per covariate row.
inline Matrix input_gradient_rows(const Network& net, const Matrix& X) {
  if (X.cols() != net.input_dim()) throw InputError("covariate matrix width does not match network");
  Matrix g(X.rows(), X.cols());
  detail::Trace t;
  std::vector<std::vector<double>> delta;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    detail::trace_forward(net, X.row(i), t);
    detail::trace_backward(net, t, delta);
    detail::input_gradient_from_trace(net, delta, g.row(i));
  }
  return g;
}

struct MomentCertificate {
  double second_moment = 0.0;
  double bound_m = 1.0;
  bool satisfied = true;
};

// (1/n) sum f(x_i)^2 checked against the moment bound M.
inline MomentCertificate second_moment(const Network& net, const Matrix& X, double bound_m = 1e6) {
  if (X.rows() == 0) throw InputError("second_moment needs at least one covariate row");
  if (!(bound_m > 0.0)) throw ConfigError("moment bound M must be positive");
  const auto f = forward_rows(net, X);
  CompensatedSum s;
  for (double v : f) s.add(v * v);
  MomentCertificate cert;
  cert.second_moment = s.value() / static_cast<double>(X.rows());
  cert.bound_m = bound_m;
  cert.satisfied = cert.second_moment <= bound_m;
  return cert;
}

// ---------------------------------------------------------------------------
// Model file (all integers and floats little-endian):
//
//   bytes 0..5   magic "NNSIG1" (the trailing digit is the format version)
//   u8           length k of the activation name
//   k bytes      activation name: "relu" | "tanh" | "sigmoid"
//   u32          number of entries in layer_dims
//   u32 * count  layer_dims
//   per layer l: f64 weights (dims[l+1] x dims[l], row-major), then
//                f64 biases (dims[l+1])
// ---------------------------------------------------------------------------

inline constexpr std::string_view kModelMagic = "NNSIG1";

namespace detail {

template <class T>
void put_le(std::string& buf, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model file is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Network& net) {
  std::string buf(kModelMagic);
  const auto name = to_string(net.activation);
  detail::put_le(buf, static_cast<std::uint8_t>(name.size()));
  buf.append(name);
  detail::put_le(buf, static_cast<std::uint32_t>(net.layer_dims.size()));
  for (std::size_t v : net.layer_dims) detail::put_le(buf, static_cast<std::uint32_t>(v));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (double v : net.weights[l].data()) detail::put_le(buf, v);
    for (double v : net.biases[l]) detail::put_le(buf, v);
  }
  return buf;
}

inline Network deserialize(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kModelMagic.size() || bytes.substr(0, 5) != kModelMagic.substr(0, 5)) {
    throw FormatError("not a model file (bad magic)");
  }
  const auto magic = in.take(kModelMagic.size());
  if (magic != kModelMagic) {
    throw FormatError("unsupported model format version '" + std::string(magic.substr(5)) +
                      "', expected '" + std::string(kModelMagic.substr(5)) + "'");
  }
  const auto name_len = in.get<std::uint8_t>();
  const std::string name(in.take(name_len));
  Activation act;
  try {
    act = parse_activation(name);
  } catch (const ConfigError&) {
    throw FormatError("unknown activation tag '" + name + "' in model file");
  }
  const auto count = in.get<std::uint32_t>();
  if (count < 2 || count > 1024) throw FormatError("implausible layer count in model file");
  std::vector<std::size_t> dims(count);
  for (auto& v : dims) {
    v = in.get<std::uint32_t>();
    if (v == 0 || v > (1u << 20)) throw FormatError("implausible layer width in model file");
  }
  if (dims.back() != 1) throw FormatError("model output width must be 1");
  Network net = zero_network(dims, act);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (double& v : net.weights[l].data()) v = in.get<double>();
    for (double& v : net.biases[l]) v = in.get<double>();
  }
  if (!in.done()) throw FormatError("trailing bytes after model payload");
  return net;
}

inline void save(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  const auto bytes = serialize(net);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing model to '" + path + "'");
}

inline Network load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace nnsig
