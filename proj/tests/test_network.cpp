#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace gcl;
using gcl::fixtures::random_tensor;
using gcl::fixtures::toy_network;

TEST(Network, DenseStackShapes) {
  const Network net = make_network(10, 3, dense_stack(4, 8, 3), 0);
  ASSERT_EQ(net.blocks.size(), 5u);
  EXPECT_EQ(net.trunk_blocks(), 4u);
  EXPECT_EQ(net.blocks[0].spec.kind, BlockKind::dense);
  EXPECT_EQ(net.blocks[1].spec.kind, BlockKind::residual_dense);
  EXPECT_EQ(net.blocks[4].spec.kind, BlockKind::classifier_head);
  EXPECT_EQ(net.blocks[0].weight.shape(), (Shape{10, 8}));
  EXPECT_EQ(net.blocks[4].weight.shape(), (Shape{8, 3}));
  EXPECT_EQ(net.width_into(0), 10u);
  EXPECT_EQ(net.width_into(2), 8u);
  const float limit = 1.0f / std::sqrt(10.0f);
  for (float w : net.blocks[0].weight.values()) EXPECT_LE(std::fabs(w), limit);
}

TEST(Network, InvalidSpecsRejected) {
  EXPECT_THROW(make_network(4, 2, {}, 0), ConfigError);
  // residual block cannot change width
  EXPECT_THROW(make_network(4, 2, {{BlockKind::residual_dense, 6, Activation::relu}, {BlockKind::classifier_head, 2}}, 0),
               ConfigError);
  // head width must equal the class count
  EXPECT_THROW(make_network(4, 2, {{BlockKind::dense, 6, Activation::relu}, {BlockKind::classifier_head, 3}}, 0),
               ConfigError);
}

TEST(Network, GcPositionRounding) {
  EXPECT_EQ(gc_position(8, 0.4), 3u);
  EXPECT_EQ(gc_position(8, 0.1), 1u);
  EXPECT_EQ(gc_position(8, 0.2), 2u);
  EXPECT_EQ(gc_position(8, 0.5), 4u);
  EXPECT_EQ(gc_position(8, 0.6), 5u);
  EXPECT_EQ(gc_position(8, 0.8), 6u);
  EXPECT_EQ(gc_position(8, 0.01), 1u);
  EXPECT_EQ(gc_position(8, 0.99), 7u);
  EXPECT_THROW(gc_position(8, 0.0), ConfigError);
  EXPECT_THROW(gc_position(8, 1.0), ConfigError);
  EXPECT_THROW(gc_position(1, 0.5), ConfigError);
}

TEST(Network, InsertGc) {
  Network net = make_network(6, 3, dense_stack(4, 8, 3), 1);
  GcConfig c;
  c.alpha = 0.3;
  net = insert_gc(net, 0.5, c);
  ASSERT_EQ(net.gc_layers.size(), 1u);
  const auto& l = net.gc_layers[0];
  EXPECT_EQ(l.after_block, 2u);
  EXPECT_EQ(l.width(), 8u);
  EXPECT_EQ(l.gate_weight.shape(), (Shape{4, 2}));
  for (float p : l.phi.values()) {
    EXPECT_GE(p, 0.45f);
    EXPECT_LE(p, 0.55f);
  }
  EXPECT_THROW(insert_gc(net, 0.5, c), ConfigError);  // same boundary
  GcConfig heavy;
  heavy.alpha = 0.7;
  EXPECT_THROW(insert_gc(net, 0.25, heavy), ConfigError);  // 0.3 + 0.7 = 1
  net = insert_gc(net, 0.25, c);
  EXPECT_EQ(net.gc_layers[0].after_block, 1u);  // kept sorted by depth
  EXPECT_EQ(net.gc_layers[1].after_block, 2u);
}

TEST(Network, AllPassMaskEqualsUngatedNetwork) {
  std::mt19937_64 rng(2);
  const Network plain = make_network(6, 3, dense_stack(4, 8, 3), 5);
  GcConfig c;
  c.phi_init = PhiInit::all_pass;
  const Network gated = insert_gc(plain, 0.5, c);
  EXPECT_DOUBLE_EQ(1.0 - static_cast<double>(mask_nonzeros(gated.gc_layers[0].phi)) / 8.0, 0.0);
  const Tensor x = random_tensor({5, 6}, rng, 0.0f, 1.0f);
  EXPECT_EQ(forward_eval(plain, x).final_logits, forward_eval(gated, x).final_logits);
}

TEST(Network, MaskZeroesDroppedDimensions) {
  std::mt19937_64 rng(3);
  Network net = toy_network(5, 6, 3, 2, {0.5}, 4);
  net.gc_layers[0].phi = Tensor::vector({0.9f, 0.1f, 0.6f, 0.5f, -1.0f, 2.0f});
  const auto f = forward_eval(net, random_tensor({4, 5}, rng, 0.0f, 1.0f));
  const std::vector<bool> keep{true, false, true, false, false, true};
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      if (!keep[c]) EXPECT_EQ(f.compressed[0].at(r, c), 0.0f);
    }
  }
}

TEST(Network, MaskOverrideOfOwnMaskIsIdentical) {
  std::mt19937_64 rng(4);
  Network net = toy_network(5, 6, 3, 2, {0.5}, 5);
  gcl::fixtures::randomize_phi(net, rng);
  const Tensor x = random_tensor({3, 5}, rng);
  Graph g1, g2;
  const auto a = forward_train(g1, net, x);
  ForwardOptions opt;
  opt.mask_override = {binary_mask(net.gc_layers[0].phi)};
  const auto b = forward_train(g2, net, x, opt);
  EXPECT_EQ(a.final_logits.value(), b.final_logits.value());
  EXPECT_EQ(a.gate_logits[0].value(), b.gate_logits[0].value());
}

TEST(Network, SplitPartsReproduceMonolithicBitwise) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<std::size_t> gates(1, 3);
    const std::size_t k = gates(rng);
    std::vector<double> fr;
    for (std::size_t i = 0; i < k; ++i) fr.push_back(static_cast<double>(i + 1) / static_cast<double>(k + 1));
    Network net = toy_network(7, 6, 6, 4, fr, rng(), 0.1, 0.0);
    gcl::fixtures::randomize_phi(net, rng);
    const Tensor x = random_tensor({10, 7}, rng, 0.0f, 1.0f);
    const auto mono = forward_eval(net, x);
    const auto parts = split_at_gc(net);
    ASSERT_EQ(parts.size(), net.gc_layers.size() + 1);
    Tensor h = x;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto out = run_part(parts[i], h);
      if (i < net.gc_layers.size()) {
        ASSERT_TRUE(out.gate_logits);
        EXPECT_EQ(*out.gate_logits, mono.gate_logits[i]);
        EXPECT_EQ(out.activation, mono.compressed[i]);
      }
      h = out.activation;
    }
    EXPECT_EQ(h, mono.final_logits) << "case " << t;
    EXPECT_EQ(max_abs_diff(h, mono.final_logits), 0.0f);
  }
}

TEST(Network, SplitThenMergeRestoresNetwork) {
  const Network net = toy_network(5, 6, 4, 3, {0.25, 0.75}, 9);
  const auto parts = split_at_gc(net);
  EXPECT_EQ(parts[0].blocks.size(), 1u);
  EXPECT_EQ(parts[1].blocks.size(), 2u);
  EXPECT_EQ(parts[2].blocks.size(), 2u);  // one trunk block plus the head
  EXPECT_EQ(parts[1].input_width, 6u);
  const Network back = merge_parts(parts, 3);
  ASSERT_EQ(back.blocks.size(), net.blocks.size());
  for (std::size_t i = 0; i < net.blocks.size(); ++i) EXPECT_EQ(back.blocks[i].weight, net.blocks[i].weight);
  ASSERT_EQ(back.gc_layers.size(), 2u);
  EXPECT_EQ(back.gc_layers[1].phi, net.gc_layers[1].phi);
  EXPECT_THROW(split_at_gc(make_network(5, 3, dense_stack(4, 6, 3), 0)), ConfigError);
}

TEST(Network, InputWidthChecked) {
  const Network net = toy_network(5, 6, 3, 2, {0.5}, 1);
  EXPECT_THROW(forward_eval(net, Tensor({2, 4})), DimensionError);
  EXPECT_THROW(run_part(split_at_gc(net)[1], Tensor({2, 5})), DimensionError);
}

TEST(Network, NonFiniteActivationReported) {
  Network net = toy_network(3, 4, 3, 2, {0.5}, 1);
  net.blocks[1].bias[0] = std::numeric_limits<float>::infinity();
  try {
    forward_eval(net, Tensor({1, 3}, 0.5f));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
  }
}

TEST(Network, BarrierSeparatesGateAndTrunkGradients) {
  std::mt19937_64 rng(6);
  Network net = toy_network(5, 6, 4, 3, {0.5}, 7);
  net.gc_layers[0].phi = Tensor::vector({0.8f, 0.3f, 0.7f, 0.9f, 0.6f, 0.2f});
  const Tensor x = random_tensor({8, 5}, rng, 0.0f, 1.0f);
  const auto y = gcl::fixtures::random_labels(8, 3, rng);
  const auto omega = ClassMapping::background_vs_rest(3);
  ForwardOptions opt;
  opt.barrier = true;

  {  // gate loss alone: nothing reaches the trunk
    Graph g;
    auto f = forward_train(g, net, x, opt);
    g.backward(gate_loss(f.gate_logits[0], y, omega));
    for (std::size_t b = 0; b < 2; ++b) {
      for (float v : f.params.block_weight[b].grad().values()) EXPECT_EQ(v, 0.0f);
    }
    double phi_mass = 0;
    for (float v : f.params.phi[0].grad().values()) phi_mass += std::fabs(v);
    EXPECT_GT(phi_mass, 0.0);
  }
  {  // final loss alone: nothing reaches φ or the gate head
    Graph g;
    auto f = forward_train(g, net, x, opt);
    g.backward(softmax_cross_entropy(f.final_logits, y));
    for (float v : f.params.phi[0].grad().values()) EXPECT_EQ(v, 0.0f);
    for (float v : f.params.gate_weight[0].grad().values()) EXPECT_EQ(v, 0.0f);
    double trunk_mass = 0;
    for (float v : f.params.block_weight[0].grad().values()) trunk_mass += std::fabs(v);
    EXPECT_GT(trunk_mass, 0.0);
  }
  {  // values are unchanged by the barrier
    Graph g1, g2;
    EXPECT_EQ(forward_train(g1, net, x, opt).final_logits.value(), forward_train(g2, net, x).final_logits.value());
  }
}
