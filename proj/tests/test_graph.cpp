#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "slugplan/graph.hpp"
#include "support/random_networks.hpp"

using namespace slugplan;

namespace {

const std::filesystem::path kSamples = SLUGPLAN_SAMPLES_DIR;

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

constexpr const char* kPool = R"({"kind": "maxpool", "params": {"kernel": 3, "stride": 1, "padding": 1}})";

std::string bn_json(int seed) {
  return R"({"kind": "batchnorm", "params": {"gamma": {"prng_seed": )" + std::to_string(seed) +
         R"(}, "beta": {"prng_seed": 2}, "running_mean": {"prng_seed": 3}, "running_var": {"prng_seed": 4}, "eps": 1e-5}})";
}

}  // namespace

TEST(Parse, MinimalRelu) {
  const NetworkGraph g = parse_network(R"({"input_shape": [1, 1, 4, 4], "layers": [{"kind": "relu"}]})");
  ASSERT_EQ(g.layers.size(), 1u);
  EXPECT_EQ(g.layers[0].kind, LayerKind::kRelu);
  EXPECT_EQ(g.input_shape, (Shape4{1, 1, 4, 4}));
}

TEST(Parse, UnknownKind) {
  const auto msg = error_of([] { parse_network(R"({"input_shape": [1,1,4,4], "layers": [{"kind": "softmax"}]})"); });
  EXPECT_NE(msg.find("unknown layer kind 'softmax'"), std::string::npos) << msg;
}

TEST(Parse, MissingParameterNamesLayerAndField) {
  const auto msg = error_of([] {
    parse_network(R"({"input_shape": [1,1,4,4], "layers": [{"kind": "relu"},
      {"kind": "maxpool", "params": {"kernel": 2, "stride": 2}}]})");
  });
  EXPECT_NE(msg.find("layer 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("padding"), std::string::npos) << msg;
}

TEST(Parse, UnknownFieldsRejectedAtEveryLevel) {
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4], "layers": [], "extra": 1})"), ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4], "layers": [{"kind": "relu", "name": "r"}]})"), ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4], "layers": [{"kind": "relu", "params": {"x": 1}}]})"),
               ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4], "layers": [
      {"kind": "maxpool", "params": {"kernel": 2, "stride": 2, "padding": 0, "dilation": 1}}]})"),
               ParseError);
}

TEST(Parse, MalformedDocuments) {
  EXPECT_THROW(parse_network("{"), ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4], "layers": []})"), ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,0,4,4], "layers": []})"), ParseError);
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4]})"), ParseError);
}

TEST(Parse, MissingWeightFileIsIoError) {
  EXPECT_THROW(parse_network(R"({"input_shape": [1,1,4,4], "layers": [{"kind": "conv2d", "params": {
      "out_channels": 1, "kernel": 1, "stride": 1, "padding": 0,
      "weights": {"file": "does_not_exist.bstn"}, "bias": {"prng_seed": 1}}}]})",
                             kSamples),
               IoError);
  EXPECT_THROW(load_network(kSamples / "nope.json"), IoError);
}

TEST(Parse, WeightFileLoaded) {
  const auto dir = std::filesystem::temp_directory_path() / "slugplan_graph_test";
  std::filesystem::create_directories(dir);
  const Tensor w = prng_fill(9, {2, 3, 3, 3});
  save_tensor(w, dir / "w.bstn");
  const NetworkGraph g = validate(parse_network(R"({"input_shape": [1,3,6,6], "layers": [{"kind": "conv2d", "params": {
      "out_channels": 2, "kernel": 3, "stride": 1, "padding": 1,
      "weights": {"file": "w.bstn"}, "bias": {"values": [0.5, -0.5]}}}]})",
                                                dir));
  EXPECT_EQ(g.layers[0].conv().weights.values, std::vector<float>(w.data().begin(), w.data().end()));
  EXPECT_EQ(g.shapes[0], (Shape4{1, 2, 6, 6}));
  // Same file against a 2-channel input: shape mismatch at validation.
  EXPECT_THROW(validate(parse_network(R"({"input_shape": [1,2,6,6], "layers": [{"kind": "conv2d", "params": {
      "out_channels": 2, "kernel": 3, "stride": 1, "padding": 1,
      "weights": {"file": "w.bstn"}, "bias": {"values": [0.5, -0.5]}}}]})",
                                       dir)),
               ValidationError);
}

TEST(Parse, BlocksTimesThreeInDeclarationOrder) {
  const NetworkGraph g = load_network(kSamples / "blocks3.json");
  ASSERT_EQ(g.layers.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    const LayerKind want[] = {LayerKind::kMaxPool, LayerKind::kBatchNorm, LayerKind::kRelu};
    EXPECT_EQ(g.layers[i].kind, want[i % 3]);
  }
  EXPECT_EQ(g.layers[0].pool().window, (Window{{3, 3}, {1, 1}, {1, 1}}));
}

TEST(Validate, PoolShape) {
  const NetworkGraph g = validate(parse_network(
      R"({"input_shape": [1,3,8,8], "layers": [{"kind": "maxpool", "params": {"kernel": 2, "stride": 2, "padding": 0}}]})"));
  EXPECT_EQ(g.shapes[0], (Shape4{1, 3, 4, 4}));
}

TEST(Validate, BatchNormLengthNamesNode) {
  const auto msg = error_of([] { validate(load_network(kSamples / "bad_batchnorm.json")); });
  EXPECT_NE(msg.find("node 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected 3"), std::string::npos) << msg;
}

TEST(Validate, BlocksKeepSpatialExtent) {
  std::string text = R"({"input_shape": [1,3,32,32], "layers": [)";
  for (int b = 0; b < 3; ++b) text += std::string(b ? "," : "") + kPool + "," + bn_json(b) + R"(,{"kind":"relu"})";
  text += "]}";
  const NetworkGraph g = validate(parse_network(text));
  ASSERT_EQ(g.shapes.size(), 9u);
  for (const auto& s : g.shapes) EXPECT_EQ(s, (Shape4{1, 3, 32, 32}));
}

TEST(Validate, WindowAndParameterChecks) {
  const auto pool_net = [](const char* params) {
    return parse_network(std::string(R"({"input_shape": [1,1,8,8], "layers": [{"kind": "avgpool", "params": )") + params + "}]}");
  };
  EXPECT_THROW(validate(pool_net(R"({"kernel": 2, "stride": 0, "padding": 0})")), ValidationError);
  EXPECT_THROW(validate(pool_net(R"({"kernel": 2, "stride": 1, "padding": 2})")), ValidationError);
  EXPECT_THROW(validate(pool_net(R"({"kernel": 0, "stride": 1, "padding": 0})")), ValidationError);
  EXPECT_THROW(validate(pool_net(R"({"kernel": 9, "stride": 1, "padding": 0})")), ValidationError);
  EXPECT_NO_THROW(validate(pool_net(R"({"kernel": [3, 1], "stride": [2, 1], "padding": [1, 0]})")));
  EXPECT_THROW(validate(parse_network(R"({"input_shape": [1,1,2,2], "layers": [{"kind": "batchnorm", "params": {
      "gamma": {"values": [1]}, "beta": {"values": [0]}, "running_mean": {"values": [0]},
      "running_var": {"values": [-1]}, "eps": 1e-5}}]})")),
               ValidationError);
  EXPECT_THROW(validate(parse_network(R"({"input_shape": [1,1,2,2], "layers": [{"kind": "batchnorm", "params": {
      "gamma": {"values": [1]}, "beta": {"values": [0]}, "running_mean": {"values": [0]},
      "running_var": {"values": [1]}, "eps": 0}}]})")),
               ValidationError);
}

TEST(Validate, LinearFlattens) {
  const NetworkGraph g = validate(load_network(kSamples / "mixed.json"));
  ASSERT_EQ(g.flatten_points, std::vector<std::size_t>{8});
  EXPECT_EQ(g.output_shape(), (Shape4{2, 10, 1, 1}));
  EXPECT_EQ(g.layers[8].lin().weight.values.size(), 10u * 4 * 4 * 4);
}

TEST(Validate, Deterministic) {
  const NetworkGraph a = validate(load_network(kSamples / "mixed.json"));
  const NetworkGraph b = validate(load_network(kSamples / "mixed.json"));
  EXPECT_EQ(a, b);
}

TEST(Serialize, RoundTripIsIdentityOnValidatedGraphs) {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const NetworkGraph g = testgen::random_network(seed);
    const NetworkGraph back = validate(parse_network(serialize_network(g).dump()));
    EXPECT_EQ(back, g) << "seed " << seed;
  }
  const NetworkGraph m = validate(load_network(kSamples / "mixed.json"));
  EXPECT_EQ(validate(parse_network(serialize_network(m).dump(), kSamples)), m);
}

TEST(Blocks, BuiltinMatchesShapeAndKinds) {
  const NetworkGraph g = validate(blocks_network(40, {1, 2, 16, 16}, 3));
  ASSERT_EQ(g.layers.size(), 120u);
  for (const auto& s : g.shapes) EXPECT_EQ(s, (Shape4{1, 2, 16, 16}));
  for (float v : g.layers[1].bn().running_var.values) EXPECT_GE(v, 1.0f);
}
