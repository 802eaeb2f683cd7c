#pragma once

#include "nninfo/core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nninfo {

enum class Activation { Tanh, Relu, Linear };

/// Output head. SigmoidXent is the binary logistic model: one output logit s
/// with p(y=1|x) = sigmoid(s); it is a softmax over the logits (0, s).
enum class Head { SoftmaxXent, SigmoidXent, SquaredError };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Linear: return "linear";
  }
  return "?";
}

inline const char* to_string(Head h) {
  switch (h) {
    case Head::SoftmaxXent: return "softmax-xent";
    case Head::SigmoidXent: return "sigmoid-xent";
    case Head::SquaredError: return "squared-error";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "linear") return Activation::Linear;
  throw ArgumentError("unknown activation '" + s + "'");
}

inline Head parse_head(const std::string& s) {
  if (s == "softmax-xent") return Head::SoftmaxXent;
  if (s == "sigmoid-xent") return Head::SigmoidXent;
  if (s == "squared-error") return Head::SquaredError;
  throw ArgumentError("unknown head '" + s + "'");
}

/// Fully-connected network: sizes = {input, hidden..., output}. The
/// activation applies to hidden layers; the last layer feeds the head.
struct ModelSpec {
  std::vector<std::size_t> sizes;
  Activation activation = Activation::Tanh;
  Head head = Head::SoftmaxXent;
  bool bias = true;

  std::size_t layers() const noexcept { return sizes.empty() ? 0 : sizes.size() - 1; }
  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }
  bool is_classifier() const noexcept { return head != Head::SquaredError; }

  std::size_t num_classes() const {
    switch (head) {
      case Head::SoftmaxXent: return output_dim();
      case Head::SigmoidXent: return 2;
      case Head::SquaredError: return 0;
    }
    return 0;
  }

  void validate() const {
    if (sizes.size() < 2) throw ArgumentError("model needs at least one layer");
    for (auto s : sizes)
      if (s == 0) throw ArgumentError("layer sizes must be positive");
    if (head == Head::SoftmaxXent && output_dim() < 2)
      throw ArgumentError("softmax head needs at least two outputs");
    if (head == Head::SigmoidXent && output_dim() != 1)
      throw ArgumentError("sigmoid head needs exactly one output");
  }

  std::vector<Segment> layout() const {
    validate();
    std::vector<Segment> out;
    for (std::size_t l = 1; l <= layers(); ++l) {
      out.push_back({"W" + std::to_string(l), sizes[l], sizes[l - 1]});
      if (bias) out.push_back({"b" + std::to_string(l), sizes[l], 1});
    }
    return out;
  }

  std::size_t num_params() const {
    std::size_t k = 0;
    for (const auto& s : layout()) k += s.size();
    return k;
  }

  /// Offset of W_l (1-based layer) inside the flat vector.
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 1; i < l; ++i) off += sizes[i] * sizes[i - 1] + (bias ? sizes[i] : 0);
    return off;
  }
  std::size_t bias_offset(std::size_t l) const { return weight_offset(l) + sizes[l] * sizes[l - 1]; }
};

inline WeightVector zero_weights(const ModelSpec& model) {
  return WeightVector(Vector::Zero(static_cast<Eigen::Index>(model.num_params())), model.layout());
}

/// Zero biases, weights ~ N(0, 2 / fan_in).
inline WeightVector init_weights(const ModelSpec& model, Seed seed) {
  auto layout = model.layout();
  Vector v = Vector::Zero(static_cast<Eigen::Index>(model.num_params()));
  Rng rng = make_rng(seed);
  Normal normal;
  for (std::size_t l = 1; l <= model.layers(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(model.sizes[l - 1]));
    const std::size_t off = model.weight_offset(l);
    for (std::size_t i = 0; i < model.sizes[l] * model.sizes[l - 1]; ++i)
      v[static_cast<Eigen::Index>(off + i)] = sd * normal(rng);
  }
  return WeightVector(std::move(v), std::move(layout));
}

/// D = {(x_i, y_i)}: inputs are N x d; classifiers carry integer labels,
/// regressors carry real targets.
struct LabeledDataset {
  RowMatrix inputs;
  std::vector<int> labels;
  Vector targets;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(inputs.cols()); }
  bool is_classification() const noexcept { return !labels.empty(); }

  void validate(std::optional<std::size_t> num_classes = std::nullopt) const {
    if (inputs.rows() < 1) throw ArgumentError("dataset must contain at least one sample");
    if (is_classification()) {
      if (labels.size() != size()) throw ShapeError("label count does not match inputs");
      if (num_classes)
        for (int y : labels)
          if (y < 0 || static_cast<std::size_t>(y) >= *num_classes)
            throw ArgumentError("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(*num_classes) + ")");
    } else if (static_cast<std::size_t>(targets.size()) != size()) {
      throw ShapeError("target count does not match inputs");
    }
    if (!inputs.allFinite()) throw NumericalError("dataset inputs contain non-finite values");
  }

  LabeledDataset subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset out;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
    if (is_classification()) out.labels.resize(rows.size());
    else out.targets.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(rows[r]);
      out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(i);
      if (is_classification()) out.labels[r] = labels[rows[r]];
      else out.targets[static_cast<Eigen::Index>(r)] = targets[i];
    }
    return out;
  }
};

}  // namespace nninfo
