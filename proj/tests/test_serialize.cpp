#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "support.hpp"

using namespace gcl;
using gcl::fixtures::random_tensor;

namespace {

Network sample_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Network net = gcl::fixtures::toy_network(6, 10, 4, 3, {0.25, 0.75}, seed, 0.2, 0.4);
  gcl::fixtures::randomize_phi(net, rng);
  gcl::fixtures::randomize_biases(net, rng);
  return net;
}

}  // namespace

TEST(Serialize, ModelRoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Network net = sample_net(rng());
    const Network back = model_from_json(json::parse(model_to_json(net).dump()));
    ASSERT_EQ(back.blocks.size(), net.blocks.size());
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
      EXPECT_EQ(back.blocks[i].weight, net.blocks[i].weight);
      EXPECT_EQ(back.blocks[i].bias, net.blocks[i].bias);
      EXPECT_EQ(back.blocks[i].spec.kind, net.blocks[i].spec.kind);
    }
    for (std::size_t i = 0; i < net.gc_layers.size(); ++i) {
      EXPECT_EQ(back.gc_layers[i].phi, net.gc_layers[i].phi);
      EXPECT_EQ(back.gc_layers[i].gate_weight, net.gc_layers[i].gate_weight);
      EXPECT_EQ(back.gc_layers[i].alpha, net.gc_layers[i].alpha);
      EXPECT_EQ(back.gc_layers[i].after_block, net.gc_layers[i].after_block);
    }
    const Tensor x = random_tensor({8, 6}, rng, 0.0f, 1.0f);
    EXPECT_EQ(forward_eval(back, x).final_logits, forward_eval(net, x).final_logits);
  }
}

TEST(Serialize, DeployRoundTripKeepsOutputs) {
  std::mt19937_64 rng(2);
  const Network net = sample_net(3);
  const json j = deploy_to_json(net);
  EXPECT_EQ(j["format"], "gcl-deploy");
  EXPECT_FALSE(j["gc_layers"][0].contains("phi"));
  const auto& m = j["gc_layers"][0]["mask"];
  EXPECT_EQ(m["index_bits"], 4);
  const Tensor mask = binary_mask(net.gc_layers[0].phi);
  std::vector<std::size_t> nz;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f) nz.push_back(i);
  }
  EXPECT_EQ(m["nonzero_indices"].get<std::vector<std::size_t>>(), nz);
  EXPECT_DOUBLE_EQ(m["sparse_bits"].get<double>(), static_cast<double>(nz.size()) * 4.0);

  const Network back = model_from_json(json::parse(j.dump()));
  EXPECT_EQ(binary_mask(back.gc_layers[1].phi), binary_mask(net.gc_layers[1].phi));
  const Tensor x = random_tensor({16, 6}, rng, 0.0f, 1.0f);
  const auto a = forward_eval(net, x), b = forward_eval(back, x);
  EXPECT_EQ(a.final_logits, b.final_logits);
  EXPECT_EQ(a.gate_logits[1], b.gate_logits[1]);
}

TEST(Serialize, PackedMaskIsLsbFirst) {
  const Tensor phi = Tensor::vector({0.9f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.8f});
  const auto bytes = pack_mask(phi);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{0x01, 0x02}));
  EXPECT_EQ(to_hex(bytes), "0102");
  EXPECT_EQ(from_hex("0102"), bytes);
  EXPECT_EQ(unpack_mask(bytes, 10), binary_mask(phi));
  EXPECT_THROW(from_hex("0g"), DataError);
  EXPECT_THROW(from_hex("012"), DataError);
  EXPECT_THROW(unpack_mask(bytes, 20), DataError);
}

TEST(Serialize, FootprintOfSparseMask) {
  Tensor phi({512}, 0.0f);
  for (std::size_t i = 0; i < 512; i += 20) phi[i] = 1.0f;  // 26 kept
  const auto f = mask_footprint(phi);
  EXPECT_EQ(f.nonzeros, 26u);
  EXPECT_DOUBLE_EQ(f.sparse_bits, 26.0 * 9.0);
  EXPECT_DOUBLE_EQ(f.dense_bits, 512.0 * 32.0);
  EXPECT_DOUBLE_EQ(f.compression_rate, 512.0 * 32.0 / (26.0 * 9.0));
}

TEST(Serialize, MalformedDocumentsRejected) {
  json j = model_to_json(sample_net(4));
  json bad = j;
  bad["format"] = "other";
  EXPECT_THROW(model_from_json(bad), ConfigError);
  bad = j;
  bad["schema_version"] = 99;
  EXPECT_THROW(model_from_json(bad), ConfigError);
  bad = j;
  bad.erase("blocks");
  EXPECT_THROW(model_from_json(bad), ConfigError);
  bad = j;
  bad["blocks"][1]["weight"]["shape"] = {3, 3};
  EXPECT_ANY_THROW(model_from_json(bad));
}

TEST(Serialize, FileRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "gcl_model_test.json").string();
  const Network net = sample_net(5);
  save_model(net, path);
  EXPECT_EQ(load_model(path).gc_layers[1].phi, net.gc_layers[1].phi);
  EXPECT_THROW(load_model(path + ".missing"), ConfigError);
}
