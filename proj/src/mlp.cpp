#include "bbo/mlp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace bbo {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;
using EVecMap = Eigen::Map<Eigen::VectorXd>;
using ECVecMap = Eigen::Map<const Eigen::VectorXd>;

// Offset of layer l's weight block inside the flat parameter vector.
std::size_t layer_offset(const std::vector<std::size_t>& sizes, std::size_t l) {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k) off += sizes[k] * sizes[k + 1] + sizes[k + 1];
  return off;
}

void apply_activation(Matrix& m, Activation act) {
  if (act == Activation::relu) {
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
  } else {
    for (double& v : m.data) v = std::tanh(v);
  }
}

// Derivative computed from the pre-activation values.
double activation_deriv(double pre, Activation act) {
  if (act == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

}  // namespace

std::size_t mlp_param_count(const std::vector<std::size_t>& layer_sizes) {
  if (layer_sizes.size() < 2) throw numeric_error("mlp: need at least input and output layer");
  return layer_offset(layer_sizes, layer_sizes.size() - 1);
}

MlpApproximator::MlpApproximator(std::vector<std::size_t> sizes, Activation act)
    : layer_sizes(std::move(sizes)), activation(act) {
  params.assign(mlp_param_count(layer_sizes), 0.0);
}

Vec forward(const MlpApproximator& net, const Vec& input) {
  if (input.size() != net.input_dim())
    throw numeric_error("mlp forward: input dimension mismatch");
  const auto& sizes = net.layer_sizes;
  Vec cur = input;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* w = net.params.data() + layer_offset(sizes, l);
    const double* b = w + in * out;
    Vec next(out);
    for (std::size_t i = 0; i < out; ++i) {
      double acc = b[i];
      const double* wrow = w + i * in;
      for (std::size_t j = 0; j < in; ++j) acc += wrow[j] * cur[j];
      next[i] = acc;
    }
    const bool is_output = (l + 2 == sizes.size());
    if (!is_output) {
      if (net.activation == Activation::relu) {
        for (double& v : next) v = v > 0.0 ? v : 0.0;
      } else {
        for (double& v : next) v = std::tanh(v);
      }
    }
    cur = std::move(next);
  }
  return cur;
}

std::pair<double, Vec> value_and_grad(const MlpApproximator& net, const Vec& input) {
  if (net.output_dim() != 1)
    throw numeric_error("value_and_grad: scalar-output network required");
  MlpWorkspace ws;
  Matrix x(1, input.size());
  x.data = input;
  const Matrix& y = mlp_batch_forward(net, x, ws);
  Matrix dout(1, 1, 1.0);
  Vec grad(net.params.size(), 0.0);
  mlp_batch_backward(net, ws, dout, grad);
  return {y.at(0, 0), std::move(grad)};
}

const Matrix& mlp_batch_forward(const MlpApproximator& net, const Matrix& x,
                                MlpWorkspace& ws) {
  if (x.cols != net.input_dim())
    throw numeric_error("mlp_batch_forward: input dimension mismatch");
  const auto& sizes = net.layer_sizes;
  const std::size_t n_layers = net.n_layers();
  ws.acts.resize(n_layers + 1);
  ws.preacts.resize(n_layers);
  ws.deltas.resize(n_layers);
  ws.acts[0] = x;

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const std::size_t batch = x.rows;
    Matrix& pre = ws.preacts[l];
    if (pre.rows != batch || pre.cols != out) pre = Matrix(batch, out);
    const double* wptr = net.params.data() + layer_offset(sizes, l);
    ECMap w(wptr, out, in);
    ECVecMap b(wptr + in * out, out);
    ECMap a_prev(ws.acts[l].data.data(), batch, in);
    EMap z(pre.data.data(), batch, out);
    z.noalias() = a_prev * w.transpose();
    z.rowwise() += b.transpose();

    Matrix& act = ws.acts[l + 1];
    act = pre;
    if (l + 1 < n_layers) apply_activation(act, net.activation);
  }
  return ws.acts[n_layers];
}

void mlp_batch_backward(const MlpApproximator& net, MlpWorkspace& ws,
                        const Matrix& dout, Vec& grad, Matrix* dinput) {
  const auto& sizes = net.layer_sizes;
  const std::size_t n_layers = net.n_layers();
  if (grad.size() != net.params.size())
    throw numeric_error("mlp_batch_backward: gradient buffer size mismatch");
  if (dout.rows != ws.acts[0].rows || dout.cols != net.output_dim())
    throw numeric_error("mlp_batch_backward: dout shape mismatch");
  const std::size_t batch = dout.rows;

  // Output layer is affine, so its delta is dout itself.
  ws.deltas[n_layers - 1] = dout;

  for (std::size_t l = n_layers; l-- > 0;) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* wptr = net.params.data() + layer_offset(sizes, l);
    ECMap w(wptr, out, in);
    ECMap a_prev(ws.acts[l].data.data(), batch, in);
    EMap delta(ws.deltas[l].data.data(), batch, out);

    double* gptr = grad.data() + layer_offset(sizes, l);
    EMap gw(gptr, out, in);
    EVecMap gb(gptr + in * out, out);
    gw.noalias() += delta.transpose() * a_prev;
    gb.noalias() += delta.colwise().sum().transpose();

    const bool need_upstream = (l > 0) || (dinput != nullptr);
    if (!need_upstream) continue;

    Matrix* target;
    if (l > 0) {
      Matrix& d_prev = ws.deltas[l - 1];
      if (d_prev.rows != batch || d_prev.cols != in) d_prev = Matrix(batch, in);
      target = &d_prev;
    } else {
      if (dinput->rows != batch || dinput->cols != in) *dinput = Matrix(batch, in);
      target = dinput;
    }
    EMap up(target->data.data(), batch, in);
    up.noalias() = delta * w;
    if (l > 0) {
      // Chain through the hidden activation of layer l-1.
      const Matrix& pre = ws.preacts[l - 1];
      for (std::size_t i = 0; i < target->data.size(); ++i)
        target->data[i] *= activation_deriv(pre.data[i], net.activation);
    }
  }
}

void mlp_batch_input_grad(const MlpApproximator& net, MlpWorkspace& ws,
                          const Matrix& dout, Matrix& dinput) {
  const auto& sizes = net.layer_sizes;
  const std::size_t n_layers = net.n_layers();
  if (dout.rows != ws.acts[0].rows || dout.cols != net.output_dim())
    throw numeric_error("mlp_batch_input_grad: dout shape mismatch");
  const std::size_t batch = dout.rows;

  ws.deltas[n_layers - 1] = dout;
  for (std::size_t l = n_layers; l-- > 0;) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* wptr = net.params.data() + layer_offset(sizes, l);
    ECMap w(wptr, out, in);
    EMap delta(ws.deltas[l].data.data(), batch, out);

    Matrix* target;
    if (l > 0) {
      Matrix& d_prev = ws.deltas[l - 1];
      if (d_prev.rows != batch || d_prev.cols != in) d_prev = Matrix(batch, in);
      target = &d_prev;
    } else {
      if (dinput.rows != batch || dinput.cols != in) dinput = Matrix(batch, in);
      target = &dinput;
    }
    EMap up(target->data.data(), batch, in);
    up.noalias() = delta * w;
    if (l > 0) {
      const Matrix& pre = ws.preacts[l - 1];
      for (std::size_t i = 0; i < target->data.size(); ++i)
        target->data[i] *= activation_deriv(pre.data[i], net.activation);
    }
  }
}

void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw numeric_error("adam_step: size mismatch");
  for (double g : grads)
    if (!std::isfinite(g))
      throw numeric_error("adam_step: non-finite gradient — aborting update");

  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

Vec glorot_init(const std::vector<std::size_t>& layer_sizes, Rng& rng) {
  Vec params(mlp_param_count(layer_sizes), 0.0);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t in = layer_sizes[l], out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    double* w = params.data() + layer_offset(layer_sizes, l);
    for (std::size_t k = 0; k < in * out; ++k) w[k] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return params;
}

void save_params(const MlpApproximator& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw numeric_error("save_params: cannot open " + path);
  f.write("BBOP", 4);
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint8_t act = static_cast<std::uint8_t>(net.activation);
  f.write(reinterpret_cast<const char*>(&act), sizeof act);
  const std::uint32_t n = static_cast<std::uint32_t>(net.layer_sizes.size());
  f.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (std::size_t s : net.layer_sizes) {
    const std::uint64_t v = s;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  f.write(reinterpret_cast<const char*>(net.params.data()),
          static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!f) throw numeric_error("save_params: write failed for " + path);
}

MlpApproximator load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw numeric_error("load_params: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "BBOP", 4) != 0)
    throw numeric_error("load_params: bad magic in " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != 1) throw numeric_error("load_params: unsupported version");
  std::uint8_t act = 0;
  f.read(reinterpret_cast<char*>(&act), sizeof act);
  if (act > 1) throw numeric_error("load_params: unknown activation id");
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!f || n < 2 || n > 64) throw numeric_error("load_params: bad layer count");
  std::vector<std::size_t> sizes(n);
  for (auto& s : sizes) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    s = static_cast<std::size_t>(v);
  }
  MlpApproximator net(sizes, static_cast<Activation>(act));
  f.read(reinterpret_cast<char*>(net.params.data()),
         static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!f) throw numeric_error("load_params: truncated parameter payload");
  return net;
}

}  // namespace bbo
