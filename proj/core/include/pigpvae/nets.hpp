#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pigpvae/gp.hpp"
#include "pigpvae/physics.hpp"
#include "pigpvae/rng.hpp"
#include "pigpvae/tensor.hpp"

namespace pigpvae {

// Named, order-stable set of trainable matrices. Iteration order is the
// insertion order, which fixes the update and serialization order.
class ParamStore {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::MatrixXd init);
  bool has(const std::string& name) const;
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  std::size_t index(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  const std::string& name(std::size_t i) const { return items_[i].first; }
  Eigen::MatrixXd& matrix(std::size_t i) { return items_[i].second; }
  const Eigen::MatrixXd& matrix(std::size_t i) const { return items_[i].second; }

  std::int64_t total_entries() const;

  // Row-major flatten/unflatten across all parameters, in store order.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);

 private:
  std::vector<std::pair<std::string, Eigen::MatrixXd>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Leaf nodes for every parameter of a store on one tape.
struct BoundParams {
  const ParamStore* store = nullptr;
  std::vector<Var> vars;

  Var at(const std::string& name) const { return vars[store->index(name)]; }
};
BoundParams bind_params(Tape& tape, const ParamStore& store);

enum class Activation { tanh, relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Dense multi-layer perceptron operating on column-stacked inputs. Output
// layer is linear; heads (softplus floors etc.) are applied by callers.
struct Mlp {
  std::vector<int> widths;  // [in, hidden..., out]
  Activation act = Activation::tanh;
  std::string prefix;       // parameter name prefix, e.g. "enc."

  // Weights ~ N(0, 1/fan_in), biases zero, drawn in layer order.
  void init_params(ParamStore& store, Rng& rng) const;
  Var forward(Tape& tape, const BoundParams& params, Var input) const;
  Eigen::MatrixXd forward(const ParamStore& store,
                          const Eigen::MatrixXd& input) const;
  std::int64_t param_count() const;
  int in_width() const { return widths.front(); }
  int out_width() const { return widths.back(); }
};

// Per-timestep pseudo-observations for the GP branch: a 2*L*T head split
// into means and softplus noise sds (1e-6 floor). Channel l occupies rows
// [l*T, (l+1)*T) of each head.
PseudoObservations encode_gp(const Mlp& net, const ParamStore& store,
                             const Eigen::VectorXd& x, int channels);

// Scalar-mean / scalar-sd head over the unconstrained physical latent.
DiagGaussian encode_phys(const Mlp& net, const ParamStore& store,
                         const Eigen::VectorXd& x);

// Pointwise discrepancy decoder: at every timestep the same map
// (z[:, t], x_phy[t]) -> delta[t].
Eigen::VectorXd decode_delta(const Mlp& net, const ParamStore& store,
                             const Eigen::MatrixXd& z,
                             const Eigen::VectorXd& x_phy);

constexpr double kSdFloor = 1e-6;

}  // namespace pigpvae
