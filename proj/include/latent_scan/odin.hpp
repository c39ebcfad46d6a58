#pragma once

// Temperature-scaled softmax, the max-softmax confidence score, gradient-sign
// input perturbation, and a small fully connected reference classifier with a
// hand-written backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latent_scan/errors.hpp"
#include "latent_scan/metrics.hpp"
#include "latent_scan/parallel.hpp"
#include "latent_scan/tensor_io.hpp"

namespace latent_scan {

using Vector = std::vector<double>;

inline Vector temperature_softmax(std::span<const double> logits, double tau) {
  require_input(tau > 0.0, "temperature must be positive");
  require_input(!logits.empty(), "softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp((logits[c] - top) / tau);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Baseline ID confidence; low values suggest OOD.
inline double softmax_score(std::span<const double> probs) {
  require_input(!probs.empty(), "softmax_score of an empty vector");
  return *std::max_element(probs.begin(), probs.end());
}

// First index of the maximum.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Cross-entropy of a temperature-scaled softmax against one class.
struct LossSpec {
  std::size_t class_index = 0;
  double tau = 1.0;
};

class DifferentiableClassifier {
 public:
  virtual ~DifferentiableClassifier() = default;

  virtual std::size_t input_dim() const = 0;
  virtual Vector forward(std::span<const double> x) const = 0;
  // d/dx of -log softmax(forward(x) / tau)[class_index]
  virtual Vector input_gradient(std::span<const double> x, const LossSpec& loss) const = 0;
  virtual std::map<std::string, Vector> named_activations(std::span<const double> x, double tau) const = 0;
  virtual std::vector<std::string> layer_names() const = 0;
};

enum class OdinMode { Off, Standard, Low };

inline std::string to_string(OdinMode m) {
  switch (m) {
    case OdinMode::Off:
      return "off";
    case OdinMode::Standard:
      return "standard";
    case OdinMode::Low:
      return "low";
  }
  return "off";
}

inline OdinMode parse_odin_mode(std::string_view s) {
  if (s == "off") return OdinMode::Off;
  if (s == "standard") return OdinMode::Standard;
  if (s == "low") return OdinMode::Low;
  throw InputError("odin mode must be off, standard or low; got '" + std::string(s) + "'");
}

struct OdinConfig {
  double tau = 1.0;
  double epsilon = 0.0;
  OdinMode mode = OdinMode::Standard;

  void validate() const {
    require_input(tau > 0.0, "tau must be positive");
    require_input(epsilon >= 0.0, "epsilon must be non-negative");
  }

  friend bool operator==(const OdinConfig&, const OdinConfig&) = default;
};

// Settings reported for the two ODIN operating points.
inline constexpr OdinConfig kOdinSd198{10.0, 0.0, OdinMode::Standard};
inline constexpr OdinConfig kOdinIsic{5.0, 0.0002, OdinMode::Standard};
inline constexpr OdinConfig kOdinLow{2.0, 0.2, OdinMode::Low};

// x - epsilon * sign(grad), where grad is the input gradient of the loss
// against the model's own temperature-scaled prediction. The step moves toward
// higher confidence. Components are clipped to [0, 1] without ever being moved
// further than epsilon; a component already outside [0, 1] is left where the
// step put it. epsilon == 0 returns x unchanged.
inline Vector odin_perturb(const DifferentiableClassifier& model, std::span<const double> x, const OdinConfig& config) {
  config.validate();
  require_input(x.size() == model.input_dim(), "input has " + std::to_string(x.size()) +
                                                   " components, model expects " +
                                                   std::to_string(model.input_dim()));
  Vector out(x.begin(), x.end());
  if (config.epsilon == 0.0) return out;
  for (double v : x) require_input(std::isfinite(v), "input contains a non-finite value");

  const Vector probs = temperature_softmax(model.forward(x), config.tau);
  const Vector grad = model.input_gradient(x, LossSpec{argmax(probs), config.tau});
  require_invariant(grad.size() == x.size(), "model returned a gradient of the wrong size");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sign = (grad[i] > 0.0) - (grad[i] < 0.0);
    double stepped = x[i] - config.epsilon * sign;
    // Rounding can leave the step an ulp longer than epsilon.
    while (std::abs(stepped - x[i]) > config.epsilon) stepped = std::nextafter(stepped, x[i]);
    out[i] = std::clamp(stepped, std::min(0.0, x[i]), std::max(1.0, x[i]));
  }
  return out;
}

// Negated max-softmax confidence after perturbation, so higher means more OOD.
inline double odin_ood_score(const DifferentiableClassifier& model, std::span<const double> x,
                             const OdinConfig& config) {
  const Vector xp = odin_perturb(model, x, config);
  return -softmax_score(temperature_softmax(model.forward(xp), config.tau));
}

inline double odin_auroc(const DifferentiableClassifier& model, const std::vector<Vector>& id_inputs,
                         const std::vector<Vector>& ood_inputs, const OdinConfig& config) {
  std::vector<double> scores(id_inputs.size() + ood_inputs.size());
  std::vector<bool> labels(scores.size(), false);
  parallel_for(scores.size(), [&](std::size_t i) {
    const Vector& x = i < id_inputs.size() ? id_inputs[i] : ood_inputs[i - id_inputs.size()];
    scores[i] = odin_ood_score(model, x, config);
  });
  for (std::size_t i = id_inputs.size(); i < scores.size(); ++i) labels[i] = true;
  return auroc(scores, labels);
}

enum class TuneObjective { Maximize, Minimize };

struct TuneResult {
  OdinConfig config;
  double auroc = 0.0;
  std::vector<std::pair<OdinConfig, double>> grid;  // every evaluated point
};

// Grid search over (tau, epsilon) on the softmax-score AUROC. Maximize keeps
// the highest AUROC; Minimize keeps the AUROC closest to 0.5. Ties go to the
// smaller epsilon, then the smaller tau.
inline TuneResult tune_odin(const DifferentiableClassifier& model, const std::vector<Vector>& id_val,
                            const std::vector<Vector>& ood_val, std::vector<double> tau_grid,
                            std::vector<double> eps_grid, TuneObjective objective) {
  require_input(!tau_grid.empty() && !eps_grid.empty(), "tune_odin needs nonempty tau and epsilon grids");
  require_input(!id_val.empty() && !ood_val.empty(), "tune_odin needs ID and OOD validation inputs");
  std::sort(tau_grid.begin(), tau_grid.end());
  std::sort(eps_grid.begin(), eps_grid.end());
  const OdinMode mode = objective == TuneObjective::Maximize ? OdinMode::Standard : OdinMode::Low;

  TuneResult result;
  double best_key = -std::numeric_limits<double>::infinity();
  for (double eps : eps_grid) {
    for (double tau : tau_grid) {
      const OdinConfig cfg{tau, eps, mode};
      const double a = odin_auroc(model, id_val, ood_val, cfg);
      result.grid.emplace_back(cfg, a);
      const double key = objective == TuneObjective::Maximize ? a : -std::abs(a - 0.5);
      if (key > best_key) {
        best_key = key;
        result.config = cfg;
        result.auroc = a;
      }
    }
  }
  return result;
}

// Fully connected ReLU network. Hidden layers are exposed as "dense_0", ...;
// the final affine layer's output as "dense_<L-1>" (the logits) and the
// temperature-scaled probabilities as "softmax".
class ReferenceNet final : public DifferentiableClassifier {
 public:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    Vector weight;  // out x in, row-major
    Vector bias;    // out
  };

  ReferenceNet() = default;
  explicit ReferenceNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    require_input(!layers_.empty(), "reference net needs at least one layer");
    require_input(layers_.size() <= 4, "reference net supports at most 4 layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      require_input(L.in >= 1 && L.out >= 1, "reference net layer sizes must be positive");
      require_input(L.weight.size() == L.in * L.out && L.bias.size() == L.out,
                    "reference net layer " + std::to_string(l) + " has inconsistent parameter sizes");
      if (l > 0)
        require_input(layers_[l - 1].out == L.in,
                      "reference net layer " + std::to_string(l) + " input does not match previous output");
    }
  }

  // He-initialised weights, small uniform biases.
  static ReferenceNet random(std::span<const std::size_t> sizes, std::mt19937_64& rng) {
    require_input(sizes.size() >= 2, "reference net needs input and output sizes");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      Layer L{sizes[l], sizes[l + 1], Vector(sizes[l] * sizes[l + 1]), Vector(sizes[l + 1])};
      std::normal_distribution<double> w(0.0, std::sqrt(2.0 / static_cast<double>(L.in)));
      std::uniform_real_distribution<double> b(-0.1, 0.1);
      for (double& v : L.weight) v = w(rng);
      for (double& v : L.bias) v = b(rng);
      layers.push_back(std::move(L));
    }
    return ReferenceNet(std::move(layers));
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const override { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }

  std::vector<std::string> layer_names() const override {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < layers_.size(); ++l) names.push_back("dense_" + std::to_string(l));
    names.emplace_back("softmax");
    return names;
  }

  Vector forward(std::span<const double> x) const override { return run(x).back(); }

  std::map<std::string, Vector> named_activations(std::span<const double> x, double tau) const override {
    const auto acts = run(x);
    std::map<std::string, Vector> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) out["dense_" + std::to_string(l)] = acts[l + 1];
    out["softmax"] = temperature_softmax(acts.back(), tau);
    return out;
  }

  Vector input_gradient(std::span<const double> x, const LossSpec& loss) const override {
    return forward_backward(x, loss).input_gradient;
  }

  struct Pass {
    Vector logits;
    std::map<std::string, Vector> activations;
    Vector input_gradient;
  };

  Pass forward_backward(std::span<const double> x, const LossSpec& loss) const {
    const auto acts = run(x);
    require_input(loss.class_index < output_dim(), "class index out of range");
    const Vector probs = temperature_softmax(acts.back(), loss.tau);

    // dL/dlogits = (p - onehot) / tau
    Vector delta(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c)
      delta[c] = (probs[c] - (c == loss.class_index ? 1.0 : 0.0)) / loss.tau;

    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      Vector prev(L.in, 0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* w = &L.weight[o * L.in];
        for (std::size_t i = 0; i < L.in; ++i) prev[i] += w[i] * d;
      }
      if (l > 0) {
        // through the ReLU feeding this layer
        for (std::size_t i = 0; i < L.in; ++i)
          if (acts[l][i] <= 0.0) prev[i] = 0.0;
      }
      delta = std::move(prev);
    }

    Pass pass;
    pass.logits = acts.back();
    for (std::size_t l = 0; l < layers_.size(); ++l) pass.activations["dense_" + std::to_string(l)] = acts[l + 1];
    pass.activations["softmax"] = probs;
    pass.input_gradient = std::move(delta);
    return pass;
  }

 private:
  // acts[0] = x, acts[l+1] = output of layer l (post-ReLU except the last).
  std::vector<Vector> run(std::span<const double> x) const {
    require_input(x.size() == input_dim(), "input has " + std::to_string(x.size()) + " components, network expects " +
                                               std::to_string(input_dim()));
    std::vector<Vector> acts;
    acts.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const Vector& in = acts.back();
      Vector out(L.out);
      for (std::size_t o = 0; o < L.out; ++o) {
        double s = L.bias[o];
        const double* w = &L.weight[o * L.in];
        for (std::size_t i = 0; i < L.in; ++i) s += w[i] * in[i];
        out[o] = (l + 1 < layers_.size()) ? std::max(0.0, s) : s;
      }
      acts.push_back(std::move(out));
    }
    return acts;
  }

  std::vector<Layer> layers_;
};

// Stores each parameter matrix as its own single-layer set in a tensor-io
// store: "<prefix>.weight_<l>" (out x in) and "<prefix>.bias_<l>" (1 x out).
// Parameters are narrowed to float32.
inline void save_reference_net(const ReferenceNet& net, const fs::path& directory,
                               const std::string& prefix = "reference_net") {
  auto write_matrix = [&](const std::string& name, std::size_t rows, std::size_t cols, const Vector& v) {
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < rows; ++r) ids.push_back(std::to_string(r));
    std::vector<LayerActivations> layer;
    layer.emplace_back(name, rows, cols, std::vector<float>(v.begin(), v.end()));
    write_activation_set(ActivationSet(prefix + "." + name, std::move(ids), std::move(layer)), directory);
  };
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& L = net.layers()[l];
    write_matrix("weight_" + std::to_string(l), L.out, L.in, L.weight);
    write_matrix("bias_" + std::to_string(l), 1, L.out, L.bias);
  }
}

inline ReferenceNet load_reference_net(const fs::path& directory, const std::string& prefix = "reference_net") {
  const Manifest manifest = read_manifest(directory);
  auto has = [&](const std::string& name) {
    return std::any_of(manifest.sets.begin(), manifest.sets.end(),
                       [&](const SetDescriptor& s) { return s.set_name == name; });
  };
  std::vector<ReferenceNet::Layer> layers;
  for (std::size_t l = 0; has(prefix + ".weight_" + std::to_string(l)); ++l) {
    const auto w = read_activation_set(directory, prefix + ".weight_" + std::to_string(l));
    const auto b = read_activation_set(directory, prefix + ".bias_" + std::to_string(l));
    const auto& wm = w.layers().front();
    const auto& bm = b.layers().front();
    require_input(bm.rows() == 1 && bm.cols() == wm.rows(),
                  "bias of layer " + std::to_string(l) + " does not match its weight matrix");
    ReferenceNet::Layer L;
    L.in = wm.cols();
    L.out = wm.rows();
    L.weight.assign(wm.values().begin(), wm.values().end());
    L.bias.assign(bm.values().begin(), bm.values().end());
    layers.push_back(std::move(L));
  }
  require_input(!layers.empty(), "no reference net parameters with prefix '" + prefix + "' in '" +
                                     directory.string() + "'");
  return ReferenceNet(std::move(layers));
}

}  // namespace latent_scan
