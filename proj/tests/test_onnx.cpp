#include <gtest/gtest.h>

#include <cmath>

#include "onnx_builder.hpp"
#include "padim/error.hpp"
#include "padim/onnx.hpp"
#include "test_util.hpp"

using namespace padim;

namespace {

float max_abs(const TensorF32& a, const TensorF32& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

class OnnxOpGolden : public ::testing::TestWithParam<std::string> {};

TEST_P(OnnxOpGolden, MatchesOnnxRuntime) {
  const std::string dir = testutil::data_dir() + "/ops/" + GetParam();
  const onnx::Program program(onnx::load_model(dir + "/model.onnx"), "x", {"y"});
  const auto out = program.run(read_tensor(dir + "/input.pft"));
  const auto expect = read_tensor(dir + "/output.pft");
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].shape(), expect.shape());
  EXPECT_LT(max_abs(out[0], expect), 1e-5f);
}

INSTANTIATE_TEST_SUITE_P(Ops, OnnxOpGolden,
                         ::testing::Values("conv_pads_stride", "conv_group_dilation", "conv_depthwise_same_upper",
                                           "conv_1x1_rect", "maxpool_ceil", "avgpool_exclude_pad",
                                           "avgpool_include_pad_ceil", "batchnorm", "gap_flatten_gemm",
                                           "gemm_transA", "concat_mul_sigmoid_clip", "clip_attr_opset6",
                                           "relu_identity_constant"));

TEST(OnnxParse, ReadsNodesInitializersAndIo) {
  onnx_test::GraphBuilder g;
  g.input("x", {1, 2, 3, 3});
  g.initializer("w", {2, 2, 1, 1}, {1, 0, 0, 1});
  g.node("Conv", {"x", "w"}, {"c"}, {{"kernel_shape", std::vector<std::int64_t>{1, 1}}});
  g.node("Relu", {"c"}, {"y"});
  g.output("y");
  const auto graph = onnx::parse_model(g.model_bytes());
  ASSERT_EQ(graph.nodes.size(), 2u);
  EXPECT_EQ(graph.nodes[0].op_type, "Conv");
  EXPECT_EQ(graph.nodes[0].attr_ints("kernel_shape"), (std::vector<std::int64_t>{1, 1}));
  ASSERT_EQ(graph.inputs.size(), 1u);
  EXPECT_EQ(graph.inputs[0].dims, (std::vector<std::int64_t>{1, 2, 3, 3}));
  EXPECT_EQ(graph.outputs[0].name, "y");
  EXPECT_EQ(graph.initializers.at("w").shape(), (Shape{2, 2, 1, 1}));

  // Identity 1x1 conv followed by ReLU.
  Rng rng(3);
  const auto x = testutil::random_tensor(rng, {1, 2, 3, 3});
  const auto y = onnx::Program(graph, "x", {"y"}).run(x)[0];
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y[i], std::max(x[i], 0.0f));
}

TEST(OnnxParse, MissingTapPoint) {
  onnx_test::GraphBuilder g;
  g.node("Relu", {"x"}, {"y"});
  try {
    onnx::Program(onnx::parse_model(g.model_bytes()), "x", {"layer9"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("missing tap point"), std::string::npos);
  }
}

TEST(OnnxParse, UnsupportedOperatorOnlyWhenNeeded) {
  onnx_test::GraphBuilder g;
  g.node("Relu", {"x"}, {"a"});
  g.node("Softmax", {"a"}, {"b"});
  const auto graph = onnx::parse_model(g.model_bytes());
  // The Softmax is outside the tap subgraph and never runs.
  EXPECT_NO_THROW(onnx::Program(graph, "x", {"a"}));
  try {
    onnx::Program(graph, "x", {"b"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported operator: Softmax"), std::string::npos);
  }
}

TEST(OnnxParse, GarbageRejected) {
  const std::vector<std::uint8_t> junk{0x3a, 0xff, 0xff, 0xff, 0x0f};
  EXPECT_THROW(onnx::parse_model(junk), DataError);
  EXPECT_THROW(onnx::parse_model(std::vector<std::uint8_t>{}), DataError);
}

TEST(OnnxRun, IntermediatesRequestedTogether) {
  onnx_test::GraphBuilder g;
  g.initializer("two", {1}, {2.0f});
  g.node("Mul", {"x", "two"}, {"a"});
  g.node("Mul", {"a", "two"}, {"b"});
  const onnx::Program p(onnx::parse_model(g.model_bytes()), "x", {"a", "b"});
  const auto out = p.run(TensorF32({1, 1, 1, 2}, {1.0f, -3.0f}));
  EXPECT_EQ(out[0], TensorF32({1, 1, 1, 2}, {2.0f, -6.0f}));
  EXPECT_EQ(out[1], TensorF32({1, 1, 1, 2}, {4.0f, -12.0f}));
}
