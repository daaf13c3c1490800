/**
 * @file onnx.hpp
 * @brief Minimal ONNX model reader and CPU interpreter for convolutional
 * feature extractors.
 *
 * Only the operator subset used by ResNet/WideResNet/EfficientNet style
 * trunks is supported. Tensors are float32; int64 initializers are kept for
 * attribute-like inputs. The interpreter runs one image at a time ([1,C,H,W]).
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "padim/tensor.hpp"

namespace padim::onnx {

struct Attribute {
  std::string name;
  float f = 0.0f;
  std::int64_t i = 0;
  std::string s;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
  std::optional<TensorF32> t;
};

struct Node {
  std::string name;
  std::string op_type;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<Attribute> attributes;

  const Attribute* find(const std::string& attr) const;
  std::int64_t attr_int(const std::string& attr, std::int64_t fallback) const;
  float attr_float(const std::string& attr, float fallback) const;
  std::vector<std::int64_t> attr_ints(const std::string& attr, std::vector<std::int64_t> fallback = {}) const;
  std::string attr_string(const std::string& attr, std::string fallback = {}) const;
};

struct ValueInfo {
  std::string name;
  std::vector<std::int64_t> dims;  // -1 for symbolic dims
};

struct Graph {
  std::vector<Node> nodes;
  std::unordered_map<std::string, TensorF32> initializers;
  std::unordered_map<std::string, std::vector<std::int64_t>> int_initializers;
  std::vector<ValueInfo> inputs;  // graph inputs that are not initializers
  std::vector<ValueInfo> outputs;
};

/// Parse a serialized ModelProto. Throws DataError on malformed input.
Graph parse_model(std::span<const std::uint8_t> bytes);
Graph load_model(const std::string& path);

/// True when the interpreter implements `op_type`.
bool is_supported_op(const std::string& op_type);

/// A graph pruned to the nodes needed for a set of requested values.
class Program {
 public:
  /// Throws DataError naming the first requested value that no node produces
  /// ("missing tap point"), or the first unsupported operator in the subgraph.
  Program(Graph graph, std::string input_name, std::vector<std::string> requested);

  /// Runs the pruned graph on one [1,C,H,W] input; returns requested values in order.
  std::vector<TensorF32> run(const TensorF32& input) const;

  const std::string& input_name() const { return input_name_; }
  const std::vector<std::string>& requested() const { return requested_; }

 private:
  Graph graph_;
  std::string input_name_;
  std::vector<std::string> requested_;
  std::vector<std::size_t> schedule_;  // node indices in execution order
  // Last schedule position at which each intermediate value is read.
  std::unordered_map<std::string, std::size_t> last_use_;
};

}  // namespace padim::onnx
