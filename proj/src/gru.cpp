// SPDX-License-Identifier: Apache-2.0
#include "deer/gru.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <string>

#include <json.hpp>

#include "deer/errors.hpp"

namespace deer {

namespace {

template <class T>
T sigmoid(T a) {
  return a >= T(0) ? T(1) / (T(1) + std::exp(-a)) : std::exp(a) / (T(1) + std::exp(a));
}

template <class T>
struct Gates {
  std::vector<T> z, r, h, ry;
  void resize(std::size_t n) {
    z.resize(n);
    r.resize(n);
    h.resize(n);
    ry.resize(n);
  }
};

// acc[j] += sum_k v[k] M[k][j] for M with `cols` columns.
template <class T>
void accumulate_row_times(std::size_t rows, std::size_t cols, const T* v, const T* M, T* acc) {
  for (std::size_t k = 0; k < rows; ++k) {
    const T vk = v[k];
    const T* row = M + k * cols;
    for (std::size_t j = 0; j < cols; ++j) acc[j] += vk * row[j];
  }
}

template <class T>
void check_shapes(const GruParams<T>& p, std::size_t y_size, std::size_t x_size) {
  if (y_size != p.state_dim || x_size != p.input_dim)
    throw ContractError("gru: expected state of size " + std::to_string(p.state_dim) + " and input of size " +
                        std::to_string(p.input_dim) + ", got " + std::to_string(y_size) + " and " +
                        std::to_string(x_size));
}

template <class T>
void compute_gates(const GruParams<T>& p, const T* y, const T* x, Gates<T>& g) {
  const std::size_t n = p.state_dim, m = p.input_dim;
  g.resize(n);
  std::copy(p.b_z.begin(), p.b_z.end(), g.z.begin());
  std::copy(p.b_r.begin(), p.b_r.end(), g.r.begin());
  std::copy(p.b_h.begin(), p.b_h.end(), g.h.begin());
  accumulate_row_times(m, n, x, p.W_z.data(), g.z.data());
  accumulate_row_times(n, n, y, p.U_z.data(), g.z.data());
  accumulate_row_times(m, n, x, p.W_r.data(), g.r.data());
  accumulate_row_times(n, n, y, p.U_r.data(), g.r.data());
  for (std::size_t j = 0; j < n; ++j) {
    g.z[j] = sigmoid(g.z[j]);
    g.r[j] = sigmoid(g.r[j]);
    g.ry[j] = g.r[j] * y[j];
  }
  accumulate_row_times(m, n, x, p.W_h.data(), g.h.data());
  accumulate_row_times(n, n, g.ry.data(), p.U_h.data(), g.h.data());
  for (std::size_t j = 0; j < n; ++j) g.h[j] = std::tanh(g.h[j]);
}

template <class T>
void step_from_gates(std::size_t n, const T* y, const Gates<T>& g, T* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = (T(1) - g.z[j]) * y[j] + g.z[j] * g.h[j];
}

// J[j][l] = d y'_j / d y_l.
template <class T>
void jacobian_from_gates(const GruParams<T>& p, const T* y, const Gates<T>& g, T* J, std::vector<T>& scratch) {
  const std::size_t n = p.state_dim;
  // scratch[l][j] = sum_k U_r[l][k] c_k U_h[k][j], c_k = y_k r_k (1 - r_k).
  scratch.assign(n * n, T(0));
  for (std::size_t l = 0; l < n; ++l) {
    T* out_row = scratch.data() + l * n;
    for (std::size_t k = 0; k < n; ++k) {
      const T coef = p.U_r[l * n + k] * y[k] * g.r[k] * (T(1) - g.r[k]);
      const T* uh = p.U_h.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += coef * uh[j];
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    const T dz = g.z[j] * (T(1) - g.z[j]) * (g.h[j] - y[j]);
    const T dh = g.z[j] * (T(1) - g.h[j] * g.h[j]);
    T* row = J + j * n;
    for (std::size_t l = 0; l < n; ++l) {
      const T da_h = p.U_h[l * n + j] * g.r[l] + scratch[l * n + j];
      row[l] = dz * p.U_z[l * n + j] + dh * da_h;
    }
    row[j] += T(1) - g.z[j];
  }
}

struct Offsets {
  std::size_t Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, total;
  Offsets(std::size_t m, std::size_t n) {
    Wz = 0;
    Wr = m * n;
    Wh = 2 * m * n;
    Uz = 3 * m * n;
    Ur = Uz + n * n;
    Uh = Ur + n * n;
    bz = Uh + n * n;
    br = bz + n;
    bh = br + n;
    total = bh + n;
  }
};

}  // namespace

template <class T>
GruParams<T> GruParams<T>::zeros(std::size_t m, std::size_t n) {
  if (n == 0) throw ContractError("GruParams: state_dim must be positive");
  GruParams p;
  p.input_dim = m;
  p.state_dim = n;
  p.W_z.assign(m * n, T(0));
  p.W_r = p.W_z;
  p.W_h = p.W_z;
  p.U_z.assign(n * n, T(0));
  p.U_r = p.U_z;
  p.U_h = p.U_z;
  p.b_z.assign(n, T(0));
  p.b_r = p.b_z;
  p.b_h = p.b_z;
  return p;
}

template <class T>
GruParams<T> GruParams<T>::random(std::size_t m, std::size_t n, std::uint64_t seed) {
  GruParams p = zeros(m, n);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(double(n));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto* block : {&p.W_z, &p.W_r, &p.W_h, &p.U_z, &p.U_r, &p.U_h})
    for (auto& v : *block) v = T(dist(rng));
  return p;
}

template <class T>
std::vector<T> GruParams<T>::flatten() const {
  validate();
  std::vector<T> flat;
  flat.reserve(parameter_count());
  for (const auto* block : {&W_z, &W_r, &W_h, &U_z, &U_r, &U_h, &b_z, &b_r, &b_h})
    flat.insert(flat.end(), block->begin(), block->end());
  return flat;
}

template <class T>
GruParams<T> GruParams<T>::unflatten(std::size_t m, std::size_t n, std::span<const T> flat) {
  if (flat.size() != parameter_count(m, n))
    throw ContractError("GruParams::unflatten: expected " + std::to_string(parameter_count(m, n)) + " values, got " +
                        std::to_string(flat.size()));
  GruParams p = zeros(m, n);
  auto it = flat.begin();
  for (auto* block : {&p.W_z, &p.W_r, &p.W_h, &p.U_z, &p.U_r, &p.U_h, &p.b_z, &p.b_r, &p.b_h}) {
    std::copy(it, it + block->size(), block->begin());
    it += block->size();
  }
  p.validate();
  return p;
}

template <class T>
void GruParams<T>::validate() const {
  const std::size_t m = input_dim, n = state_dim;
  if (n == 0) throw ContractError("GruParams: state_dim must be positive");
  auto check = [](const std::vector<T>& v, std::size_t size, const char* name) {
    if (v.size() != size)
      throw ContractError(std::string("GruParams: ") + name + " has " + std::to_string(v.size()) +
                          " entries, expected " + std::to_string(size));
    for (T x : v)
      if (!std::isfinite(x)) throw NumericDomainError(std::string("GruParams: non-finite entry in ") + name);
  };
  check(W_z, m * n, "W_z");
  check(W_r, m * n, "W_r");
  check(W_h, m * n, "W_h");
  check(U_z, n * n, "U_z");
  check(U_r, n * n, "U_r");
  check(U_h, n * n, "U_h");
  check(b_z, n, "b_z");
  check(b_r, n, "b_r");
  check(b_h, n, "b_h");
}

template <class T>
std::string gru_to_json(const GruParams<T>& params) {
  nlohmann::json j;
  j["input_dim"] = params.input_dim;
  j["state_dim"] = params.state_dim;
  std::vector<double> flat;
  for (T v : params.flatten()) flat.push_back(double(v));
  j["params"] = flat;
  return j.dump();
}

template <class T>
GruParams<T> gru_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("gru_from_json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("input_dim") || !j.contains("state_dim") || !j.contains("params"))
    throw ContractError("gru_from_json: expected keys input_dim, state_dim, params");
  try {
    const auto flat64 = j.at("params").get<std::vector<double>>();
    std::vector<T> flat(flat64.begin(), flat64.end());
    return GruParams<T>::unflatten(j.at("input_dim").get<std::size_t>(), j.at("state_dim").get<std::size_t>(), flat);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("gru_from_json: ") + e.what());
  }
}

namespace {
constexpr char kMagic[8] = {'D', 'E', 'E', 'R', 'G', 'R', 'U', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ContractError("gru_load: truncated blob");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
  return v;
}
}  // namespace

template <class T>
void gru_save(std::ostream& out, const GruParams<T>& params) {
  const auto flat = params.flatten();
  out.write(kMagic, sizeof kMagic);
  put_u64(out, params.input_dim);
  put_u64(out, params.state_dim);
  for (T v : flat) {
    std::uint64_t bits;
    const double d = double(v);
    std::memcpy(&bits, &d, sizeof bits);
    put_u64(out, bits);
  }
}

template <class T>
GruParams<T> gru_load(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ContractError("gru_load: bad magic");
  const std::uint64_t m = get_u64(in);
  const std::uint64_t n = get_u64(in);
  if (n == 0 || n > (1u << 16) || m > (1u << 20)) throw ContractError("gru_load: implausible dimensions");
  std::vector<T> flat(GruParams<T>::parameter_count(m, n));
  for (auto& v : flat) {
    const std::uint64_t bits = get_u64(in);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    v = T(d);
  }
  return GruParams<T>::unflatten(m, n, flat);
}

template <class T>
std::vector<T> gru_step(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x) {
  check_shapes(params, y_prev.size(), x.size());
  Gates<T> g;
  compute_gates(params, y_prev.data(), x.data(), g);
  std::vector<T> out(params.state_dim);
  step_from_gates(params.state_dim, y_prev.data(), g, out.data());
  return out;
}

template <class T>
SmallMatrix<T> gru_jacobian(const GruParams<T>& params, ConstView<T> y_prev, ConstView<T> x) {
  check_shapes(params, y_prev.size(), x.size());
  Gates<T> g;
  compute_gates(params, y_prev.data(), x.data(), g);
  SmallMatrix<T> J(params.state_dim);
  std::vector<T> scratch;
  jacobian_from_gates(params, y_prev.data(), g, J.data().data(), scratch);
  return J;
}

template <class T>
DynamicsSpec<T> gru_dynamics(GruParams<T> params) {
  params.validate();
  auto p = std::make_shared<const GruParams<T>>(std::move(params));
  DynamicsSpec<T> spec;
  spec.state_dim = p->state_dim;
  spec.input_dim = p->input_dim;
  spec.num_shifts = 1;
  spec.eval = [p](ShiftedStates<T> shifted, std::span<const T> x, std::span<T> out) {
    thread_local Gates<T> g;
    compute_gates(*p, shifted[0].data(), x.data(), g);
    step_from_gates(p->state_dim, shifted[0].data(), g, out.data());
  };
  spec.jacobian = [p](ShiftedStates<T> shifted, std::span<const T> x, std::size_t, std::span<T> out) {
    thread_local Gates<T> g;
    thread_local std::vector<T> scratch;
    compute_gates(*p, shifted[0].data(), x.data(), g);
    jacobian_from_gates(*p, shifted[0].data(), g, out.data(), scratch);
  };
  spec.eval_with_jacobians = [p](ShiftedStates<T> shifted, std::span<const T> x, std::span<T> value,
                                 std::span<T> jacobians) {
    thread_local Gates<T> g;
    thread_local std::vector<T> scratch;
    compute_gates(*p, shifted[0].data(), x.data(), g);
    step_from_gates(p->state_dim, shifted[0].data(), g, value.data());
    jacobian_from_gates(*p, shifted[0].data(), g, jacobians.data(), scratch);
  };
  return spec;
}

template <class T>
void gru_param_jvp(const GruParams<T>& p, ConstView<T> y_prev, ConstView<T> x,
                   ConstView<T> dtheta, MutableView<T> out) {
  check_shapes(p, y_prev.size(), x.size());
  const std::size_t m = p.input_dim, n = p.state_dim;
  const Offsets o(m, n);
  if (dtheta.size() != o.total || out.size() != n) throw ContractError("gru_param_jvp: size mismatch");
  Gates<T> g;
  compute_gates(p, y_prev.data(), x.data(), g);
  const T* d = dtheta.data();
  std::vector<T> da_z(d + o.bz, d + o.bz + n), da_r(d + o.br, d + o.br + n), da_h(d + o.bh, d + o.bh + n);
  accumulate_row_times(m, n, x.data(), d + o.Wz, da_z.data());
  accumulate_row_times(n, n, y_prev.data(), d + o.Uz, da_z.data());
  accumulate_row_times(m, n, x.data(), d + o.Wr, da_r.data());
  accumulate_row_times(n, n, y_prev.data(), d + o.Ur, da_r.data());
  std::vector<T> d_ry(n);
  for (std::size_t k = 0; k < n; ++k) d_ry[k] = g.r[k] * (T(1) - g.r[k]) * da_r[k] * y_prev[k];
  accumulate_row_times(m, n, x.data(), d + o.Wh, da_h.data());
  accumulate_row_times(n, n, d_ry.data(), p.U_h.data(), da_h.data());
  accumulate_row_times(n, n, g.ry.data(), d + o.Uh, da_h.data());
  for (std::size_t j = 0; j < n; ++j) {
    const T dz = g.z[j] * (T(1) - g.z[j]) * da_z[j];
    const T dh = (T(1) - g.h[j] * g.h[j]) * da_h[j];
    out[j] = (g.h[j] - y_prev[j]) * dz + g.z[j] * dh;
  }
}

template <class T>
void gru_vjp(const GruParams<T>& p, ConstView<T> y_prev, ConstView<T> x, ConstView<T> gy,
             MutableView<T> grad_theta, MutableView<T> grad_x) {
  check_shapes(p, y_prev.size(), x.size());
  const std::size_t m = p.input_dim, n = p.state_dim;
  const Offsets o(m, n);
  if (gy.size() != n || grad_theta.size() != o.total || (!grad_x.empty() && grad_x.size() != m))
    throw ContractError("gru_vjp: size mismatch");
  Gates<T> g;
  compute_gates(p, y_prev.data(), x.data(), g);
  std::vector<T> ga_z(n), ga_r(n), ga_h(n);
  for (std::size_t j = 0; j < n; ++j) {
    ga_h[j] = gy[j] * g.z[j] * (T(1) - g.h[j] * g.h[j]);
    ga_z[j] = gy[j] * (g.h[j] - y_prev[j]) * g.z[j] * (T(1) - g.z[j]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    T g_ry = 0;
    for (std::size_t j = 0; j < n; ++j) g_ry += p.U_h[k * n + j] * ga_h[j];
    ga_r[k] = g_ry * y_prev[k] * g.r[k] * (T(1) - g.r[k]);
  }
  T* G = grad_theta.data();
  auto outer = [n](std::size_t rows, const T* v, const T* a, T* dst) {
    for (std::size_t k = 0; k < rows; ++k)
      for (std::size_t j = 0; j < n; ++j) dst[k * n + j] += v[k] * a[j];
  };
  outer(m, x.data(), ga_z.data(), G + o.Wz);
  outer(m, x.data(), ga_r.data(), G + o.Wr);
  outer(m, x.data(), ga_h.data(), G + o.Wh);
  outer(n, y_prev.data(), ga_z.data(), G + o.Uz);
  outer(n, y_prev.data(), ga_r.data(), G + o.Ur);
  outer(n, g.ry.data(), ga_h.data(), G + o.Uh);
  for (std::size_t j = 0; j < n; ++j) {
    G[o.bz + j] += ga_z[j];
    G[o.br + j] += ga_r[j];
    G[o.bh + j] += ga_h[j];
  }
  if (!grad_x.empty()) {
    for (std::size_t k = 0; k < m; ++k) {
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j)
        acc += p.W_z[k * n + j] * ga_z[j] + p.W_r[k * n + j] * ga_r[j] + p.W_h[k * n + j] * ga_h[j];
      grad_x[k] += acc;
    }
  }
}

template <class T>
Sequence<T> gaussian_inputs(std::size_t length, std::size_t dim, std::uint64_t seed) {
  Sequence<T> out(length, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : out.values()) v = T(dist(rng));
  return out;
}

#define DEER_INSTANTIATE_GRU(T)                                                                                  \
  template struct GruParams<T>;                                                                                  \
  template std::string gru_to_json(const GruParams<T>&);                                                         \
  template GruParams<T> gru_from_json<T>(const std::string&);                                                    \
  template void gru_save(std::ostream&, const GruParams<T>&);                                                    \
  template GruParams<T> gru_load<T>(std::istream&);                                                              \
  template std::vector<T> gru_step(const GruParams<T>&, std::span<const T>, std::span<const T>);                 \
  template SmallMatrix<T> gru_jacobian(const GruParams<T>&, std::span<const T>, std::span<const T>);             \
  template DynamicsSpec<T> gru_dynamics(GruParams<T>);                                                           \
  template void gru_param_jvp(const GruParams<T>&, std::span<const T>, std::span<const T>, std::span<const T>,   \
                              std::span<T>);                                                                     \
  template void gru_vjp(const GruParams<T>&, std::span<const T>, std::span<const T>, std::span<const T>,         \
                        std::span<T>, std::span<T>);                                                             \
  template Sequence<T> gaussian_inputs<T>(std::size_t, std::size_t, std::uint64_t);

DEER_INSTANTIATE_GRU(float)
DEER_INSTANTIATE_GRU(double)

}  // namespace deer
