#include "pigpvae/nets.hpp"

#include <cmath>

#include "pigpvae/errors.hpp"

namespace pigpvae {

Eigen::MatrixXd& ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(init));
  return items_.back().second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return items_[it->second].second;
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParamStore::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

std::int64_t ParamStore::total_entries() const {
  std::int64_t n = 0;
  for (const auto& [name, m] : items_) n += m.size();
  return n;
}

Eigen::VectorXd ParamStore::flatten() const {
  Eigen::VectorXd flat(total_entries());
  Eigen::Index k = 0;
  for (const auto& [name, m] : items_)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) flat[k++] = m(i, j);
  return flat;
}

void ParamStore::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != total_entries())
    throw ShapeError("unflatten: size mismatch");
  Eigen::Index k = 0;
  for (auto& [name, m] : items_)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[k++];
}

BoundParams bind_params(Tape& tape, const ParamStore& store) {
  BoundParams bound;
  bound.store = &store;
  bound.vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    bound.vars.push_back(tape.leaf(store.matrix(i)));
  return bound;
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

void Mlp::init_params(ParamStore& store, Rng& rng) const {
  if (widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  for (int w : widths)
    if (w < 1) throw ConfigError("mlp widths must be positive");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    int in = widths[l];
    int out = widths[l + 1];
    Eigen::MatrixXd w(out, in);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = sd * rng.normal();
    store.add(prefix + "W" + std::to_string(l), std::move(w));
    store.add(prefix + "b" + std::to_string(l), Eigen::MatrixXd::Zero(out, 1));
  }
}

Var Mlp::forward(Tape& tape, const BoundParams& params, Var input) const {
  (void)tape;
  if (input.rows() != widths.front())
    throw ShapeError("mlp forward: input has " + std::to_string(input.rows()) +
                     " rows, expected " + std::to_string(widths.front()));
  Var h = input;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Var w = params.at(prefix + "W" + std::to_string(l));
    Var b = params.at(prefix + "b" + std::to_string(l));
    h = add_colvec(matmul(w, h), b);
    if (l + 2 < widths.size())
      h = (act == Activation::tanh) ? pigpvae::tanh(h) : relu(h);
  }
  return h;
}

Eigen::MatrixXd Mlp::forward(const ParamStore& store,
                             const Eigen::MatrixXd& input) const {
  Tape tape;
  BoundParams bound = bind_params(tape, store);
  return forward(tape, bound, tape.constant(input)).value();
}

std::int64_t Mlp::param_count() const {
  std::int64_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    n += static_cast<std::int64_t>(widths[l + 1]) * widths[l] + widths[l + 1];
  return n;
}

PseudoObservations encode_gp(const Mlp& net, const ParamStore& store,
                             const Eigen::VectorXd& x, int channels) {
  const int t = static_cast<int>(x.size());
  if (net.out_width() != 2 * channels * t)
    throw ShapeError("encode_gp: head width must be 2*L*T");
  Eigen::MatrixXd out = net.forward(store, x);
  PseudoObservations pseudo;
  pseudo.targets.resize(channels, t);
  pseudo.noise_sd.resize(channels, t);
  for (int l = 0; l < channels; ++l) {
    for (int i = 0; i < t; ++i) {
      pseudo.targets(l, i) = out(l * t + i, 0);
      pseudo.noise_sd(l, i) =
          softplus_scalar(out(channels * t + l * t + i, 0)) + kSdFloor;
    }
  }
  return pseudo;
}

DiagGaussian encode_phys(const Mlp& net, const ParamStore& store,
                         const Eigen::VectorXd& x) {
  if (net.out_width() != 2) throw ShapeError("encode_phys: head width must be 2");
  Eigen::MatrixXd out = net.forward(store, x);
  DiagGaussian g;
  g.mean = Eigen::VectorXd::Constant(1, out(0, 0));
  g.sd = Eigen::VectorXd::Constant(1, softplus_scalar(out(1, 0)) + kSdFloor);
  return g;
}

Eigen::VectorXd decode_delta(const Mlp& net, const ParamStore& store,
                             const Eigen::MatrixXd& z,
                             const Eigen::VectorXd& x_phy) {
  const Eigen::Index t = x_phy.size();
  if (z.cols() != t) throw ShapeError("decode_delta: z columns must match curve length");
  if (net.in_width() != z.rows() + 1)
    throw ShapeError("decode_delta: net input width must be L+1");
  Eigen::MatrixXd input(z.rows() + 1, t);
  input.topRows(z.rows()) = z;
  input.bottomRows(1) = x_phy.transpose();
  Eigen::MatrixXd out = net.forward(store, input);
  if (out.rows() != 1) throw ShapeError("decode_delta: net output width must be 1");
  return out.transpose();
}

}  // namespace pigpvae
