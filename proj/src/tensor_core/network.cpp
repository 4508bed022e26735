#include "ssem/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ssem/error.hpp"

namespace ssem {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::maxpool3d: return "maxpool3d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

LayerSpec LayerSpec::conv3d(std::size_t filters, Extent3 kernel, Extent3 stride, Padding padding) {
  return {LayerKind::conv3d, filters, kernel, stride, padding};
}
LayerSpec LayerSpec::maxpool3d(Extent3 window, Extent3 stride, Padding padding) {
  return {LayerKind::maxpool3d, 0, window, stride, padding};
}
LayerSpec LayerSpec::dense(std::size_t units) { return {LayerKind::dense, units, {1, 1, 1}, {1, 1, 1}, Padding::valid}; }
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, {1, 1, 1}, {1, 1, 1}, Padding::valid}; }
LayerSpec LayerSpec::softmax() { return {LayerKind::softmax, 0, {1, 1, 1}, {1, 1, 1}, Padding::valid}; }

namespace {

std::string extent_text(Extent3 e) {
  return std::to_string(e.d) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}

}  // namespace

std::string LayerSpec::canonical() const {
  std::string s = to_string(kind);
  const char* pad = padding == Padding::same ? "same" : "valid";
  switch (kind) {
    case LayerKind::conv3d:
      s += " filters=" + std::to_string(filters) + " kernel=" + extent_text(kernel) + " stride=" + extent_text(stride) +
           " padding=" + pad;
      break;
    case LayerKind::maxpool3d:
      s += " window=" + extent_text(kernel) + " stride=" + extent_text(stride) + " padding=" + pad;
      break;
    case LayerKind::dense: s += " units=" + std::to_string(filters); break;
    default: break;
  }
  return s;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.empty() || shape_product(input_shape_) == 0) {
    throw DimensionError("network input shape " + shape_to_string(input_shape_) + " has no elements");
  }
  if (layers_.empty() || layers_.back().kind != LayerKind::softmax) {
    throw PreconditionError("network must end with a softmax layer");
  }
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& layer = layers_[i];
    const std::string where = "layer " + std::to_string(i + 1) + " (" + to_string(layer.kind) + ")";
    first_param_.push_back(-1);
    try {
      switch (layer.kind) {
        case LayerKind::conv3d: {
          if (layer.filters == 0) throw PreconditionError("filters must be positive");
          if (current.size() != 4) throw DimensionError("expects a rank-4 activation, got " + shape_to_string(current));
          const auto d = plan_axis(current[0], layer.kernel.d, layer.stride.d, layer.padding);
          const auto h = plan_axis(current[1], layer.kernel.h, layer.stride.h, layer.padding);
          const auto w = plan_axis(current[2], layer.kernel.w, layer.stride.w, layer.padding);
          const std::size_t cin = current[3];
          first_param_.back() = static_cast<int>(param_specs_.size());
          const std::size_t fan_in = layer.kernel.d * layer.kernel.h * layer.kernel.w * cin;
          param_specs_.push_back({"layer" + std::to_string(i + 1) + ".conv3d.weight",
                                  {layer.kernel.d, layer.kernel.h, layer.kernel.w, cin, layer.filters}, fan_in});
          param_specs_.push_back({"layer" + std::to_string(i + 1) + ".conv3d.bias", {layer.filters}, fan_in});
          current = {d.out, h.out, w.out, layer.filters};
          break;
        }
        case LayerKind::maxpool3d: {
          if (current.size() != 4) throw DimensionError("expects a rank-4 activation, got " + shape_to_string(current));
          const auto d = plan_axis(current[0], layer.kernel.d, layer.stride.d, layer.padding);
          const auto h = plan_axis(current[1], layer.kernel.h, layer.stride.h, layer.padding);
          const auto w = plan_axis(current[2], layer.kernel.w, layer.stride.w, layer.padding);
          current = {d.out, h.out, w.out, current[3]};
          break;
        }
        case LayerKind::dense: {
          if (layer.filters == 0) throw PreconditionError("units must be positive");
          const std::size_t in = shape_product(current);
          first_param_.back() = static_cast<int>(param_specs_.size());
          param_specs_.push_back({"layer" + std::to_string(i + 1) + ".dense.weight", {in, layer.filters}, in});
          param_specs_.push_back({"layer" + std::to_string(i + 1) + ".dense.bias", {layer.filters}, in});
          current = {layer.filters};
          break;
        }
        case LayerKind::relu: break;
        case LayerKind::softmax:
          if (i + 1 != layers_.size()) throw PreconditionError("softmax is only allowed as the final layer");
          if (shape_product(current) != 2) {
            throw DimensionError("softmax needs exactly 2 logits, got " + shape_to_string(current));
          }
          break;
      }
    } catch (const DimensionError& e) {
      throw DimensionError(where + ": " + e.what());
    } catch (const PreconditionError& e) {
      throw PreconditionError(where + ": " + e.what());
    }
    output_shapes_.push_back(current);
  }
  fingerprint_ = fnv1a64(canonical_text());
}

std::string Network::canonical_text() const {
  std::ostringstream out;
  out << "input=";
  for (std::size_t i = 0; i < input_shape_.size(); ++i) out << (i ? "x" : "") << input_shape_[i];
  out << '\n';
  for (const auto& layer : layers_) out << layer.canonical() << '\n';
  return out.str();
}

ModelParams Network::initialize(std::uint64_t seed) const {
  ModelParams params;
  params.fingerprint = fingerprint_;
  std::mt19937_64 rng(seed);
  for (const auto& spec : param_specs_) {
    Tensor t(spec.shape);
    if (spec.shape.size() > 1) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
      for (double& v : t.values()) v = normal(rng);
    }
    params.names.push_back(spec.name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

void Network::check_params(const ModelParams& params) const {
  if (params.fingerprint != fingerprint_) {
    throw PreconditionError("parameter fingerprint does not match the network architecture");
  }
  if (params.tensors.size() != param_specs_.size()) {
    throw DimensionError("expected " + std::to_string(param_specs_.size()) + " parameter tensors, got " +
                         std::to_string(params.tensors.size()));
  }
  for (std::size_t i = 0; i < param_specs_.size(); ++i) {
    if (params.tensors[i].shape() != param_specs_[i].shape) {
      throw DimensionError(param_specs_[i].name + " has shape " + shape_to_string(params.tensors[i].shape()) +
                           ", expected " + shape_to_string(param_specs_[i].shape));
    }
  }
}

namespace {

struct ForwardCache {
  std::vector<Tensor> inputs;                   // input of each layer
  std::vector<std::vector<std::size_t>> argmax;  // per layer, pools only
};

// Runs every layer except the final softmax and returns the logits.
Tensor run_logits(const Network& net, const ModelParams& params, const Tensor& sample, ForwardCache* cache) {
  if (sample.shape() != net.input_shape()) {
    throw DimensionError("sample shape " + shape_to_string(sample.shape()) + " does not match network input " +
                         shape_to_string(net.input_shape()));
  }
  const auto& layers = net.layers();
  if (cache) {
    cache->inputs.clear();
    cache->argmax.assign(layers.size(), {});
  }
  Tensor x = sample;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    Tensor y;
    switch (layer.kind) {
      case LayerKind::conv3d: {
        const auto p = static_cast<std::size_t>(net.first_param(i));
        y = kernels::conv3d_forward(x, params.tensors[p], params.tensors[p + 1], layer.stride, layer.padding);
        break;
      }
      case LayerKind::maxpool3d: {
        auto pooled = kernels::maxpool3d_forward(x, layer.kernel, layer.stride, layer.padding);
        y = std::move(pooled.output);
        if (cache) cache->argmax[i] = std::move(pooled.argmax);
        break;
      }
      case LayerKind::dense: {
        const auto p = static_cast<std::size_t>(net.first_param(i));
        y = kernels::dense_forward(x, params.tensors[p], params.tensors[p + 1]);
        break;
      }
      case LayerKind::relu: y = kernels::relu_forward(x); break;
      case LayerKind::softmax: break;
    }
    if (cache) cache->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

}  // namespace

SoftLabel forward(const Network& net, const ModelParams& params, const Tensor& sample) {
  const Tensor logits = run_logits(net, params, sample, nullptr);
  return softmax(logits.values());
}

LossAndGradients backward_pass(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                               std::span<const SoftLabel> targets) {
  net.check_params(params);
  if (samples.size() != targets.size()) {
    throw DimensionError("batch holds " + std::to_string(samples.size()) + " samples but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (samples.empty()) throw PreconditionError("backward_pass on an empty batch");

  LossAndGradients result;
  for (const auto& t : params.tensors) result.gradients.tensors.emplace_back(t.shape());
  const auto& layers = net.layers();
  ForwardCache cache;

  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Tensor logits = run_logits(net, params, samples[s], &cache);
    const SoftLabel p = softmax(logits.values());
    result.loss += cross_entropy_loss(p, targets[s]);
    Tensor g({2}, {p.p0 - targets[s].p0, p.p1 - targets[s].p1});

    for (std::size_t i = layers.size() - 1; i-- > 0;) {
      const LayerSpec& layer = layers[i];
      const Tensor& in = cache.inputs[i];
      const bool need_input = i > 0;
      switch (layer.kind) {
        case LayerKind::conv3d: {
          const auto p0 = static_cast<std::size_t>(net.first_param(i));
          auto cg = kernels::conv3d_backward(in, params.tensors[p0], g, layer.stride, layer.padding, need_input);
          if (!cg.weights.all_finite() || !cg.bias.all_finite() || (need_input && !cg.input.all_finite())) {
            throw NumericError("non-finite gradient in layer " + std::to_string(i + 1) + " (conv3d)");
          }
          auto& gw = result.gradients.tensors[p0];
          auto& gb = result.gradients.tensors[p0 + 1];
          for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += cg.weights[k];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += cg.bias[k];
          g = std::move(cg.input);
          break;
        }
        case LayerKind::maxpool3d:
          g = kernels::maxpool3d_backward(in.shape(), cache.argmax[i], g);
          break;
        case LayerKind::dense: {
          const auto p0 = static_cast<std::size_t>(net.first_param(i));
          auto dg = kernels::dense_backward(in, params.tensors[p0], g);
          if (!dg.weights.all_finite() || !dg.bias.all_finite() || !dg.input.all_finite()) {
            throw NumericError("non-finite gradient in layer " + std::to_string(i + 1) + " (dense)");
          }
          auto& gw = result.gradients.tensors[p0];
          auto& gb = result.gradients.tensors[p0 + 1];
          for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += dg.weights[k];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += dg.bias[k];
          g = std::move(dg.input);
          break;
        }
        case LayerKind::relu:
          g = kernels::relu_backward(in, g);
          if (!g.all_finite()) throw NumericError("non-finite gradient in layer " + std::to_string(i + 1) + " (relu)");
          break;
        case LayerKind::softmax: break;
      }
    }
  }

  const double n = static_cast<double>(samples.size());
  result.loss /= n;
  for (auto& t : result.gradients.tensors) {
    for (double& v : t.values()) v /= n;
  }
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");
  return result;
}

LossAndGradients backward_pass(const Network& net, const ModelParams& params, const Tensor& batch,
                               std::span<const SoftLabel> targets) {
  if (batch.rank() < 2) throw DimensionError("batch tensor needs a leading sample extent");
  std::vector<Tensor> samples;
  samples.reserve(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) samples.push_back(batch.slice(i));
  return backward_pass(net, params, samples, targets);
}

double mean_loss(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                 std::span<const SoftLabel> targets) {
  if (samples.size() != targets.size() || samples.empty()) throw DimensionError("mean_loss: batch/target mismatch");
  double total = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    total += cross_entropy_loss(forward(net, params, samples[s]), targets[s]);
  }
  return total / static_cast<double>(samples.size());
}

namespace {

// ReLU signs and pool winners of every sample; equal patterns mean the loss is
// one smooth branch of the piecewise network.
std::vector<std::size_t> activation_pattern(const Network& net, const ModelParams& params,
                                            std::span<const Tensor> samples) {
  std::vector<std::size_t> pattern;
  ForwardCache cache;
  for (const auto& s : samples) {
    run_logits(net, params, s, &cache);
    for (std::size_t i = 0; i + 1 < net.layers().size(); ++i) {
      if (net.layers()[i].kind == LayerKind::relu) {
        for (double v : cache.inputs[i].values()) pattern.push_back(v > 0.0 ? 1 : 0);
      } else if (net.layers()[i].kind == LayerKind::maxpool3d) {
        pattern.insert(pattern.end(), cache.argmax[i].begin(), cache.argmax[i].end());
      }
    }
  }
  return pattern;
}

}  // namespace

FiniteDifferenceReport finite_difference_report(const Network& net, const ModelParams& params,
                                                std::span<const Tensor> samples, std::span<const SoftLabel> targets,
                                                double step, std::size_t per_tensor) {
  if (!(step > 0.0)) throw PreconditionError("finite difference step must be positive");
  if (per_tensor == 0) throw PreconditionError("finite difference sample count must be positive");
  const auto analytic = backward_pass(net, params, samples, targets);
  const auto base = activation_pattern(net, params, samples);
  ModelParams probe = params;
  FiniteDifferenceReport report;
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    const std::size_t n = probe.tensors[t].size();
    const std::size_t count = std::min(n, per_tensor);
    for (std::size_t j = 0; j < count; ++j) {
      // Evenly spaced, always covering the first and last entry.
      const std::size_t k = count == 1 ? 0 : j * (n - 1) / (count - 1);
      double& v = probe.tensors[t][k];
      const double saved = v;
      v = saved + step;
      const double up = mean_loss(net, probe, samples, targets);
      const bool smooth_up = activation_pattern(net, probe, samples) == base;
      v = saved - step;
      const double down = mean_loss(net, probe, samples, targets);
      const bool smooth_down = activation_pattern(net, probe, samples) == base;
      v = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.gradients.tensors[t][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double error = std::abs(a - numeric) / denom;
      report.max_raw_error = std::max(report.max_raw_error, error);
      if (!(smooth_up && smooth_down)) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      report.max_relative_error = std::max(report.max_relative_error, error);
    }
  }
  return report;
}

double finite_difference_check(const Network& net, const ModelParams& params, std::span<const Tensor> samples,
                               std::span<const SoftLabel> targets, double step, std::size_t per_tensor) {
  return finite_difference_report(net, params, samples, targets, step, per_tensor).max_relative_error;
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double learning_rate) {
  if (!(learning_rate > 0.0)) throw PreconditionError("learning rate must be positive");
  if (grads.tensors.size() != params.tensors.size()) throw DimensionError("sgd_step: gradient count mismatch");
  ModelParams next = params;
  for (std::size_t t = 0; t < next.tensors.size(); ++t) {
    if (grads.tensors[t].shape() != next.tensors[t].shape()) {
      throw DimensionError("sgd_step: gradient shape mismatch for " +
                           (t < next.names.size() ? next.names[t] : std::to_string(t)));
    }
    auto& p = next.tensors[t];
    const auto& g = grads.tensors[t];
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= learning_rate * g[k];
  }
  return next;
}

}  // namespace ssem
