#include <gtest/gtest.h>

#include <cstring>

#include "propfly/checkpoint.hpp"
#include "propfly/errors.hpp"
#include "propfly/optim.hpp"
#include "support.hpp"

namespace propfly {
namespace {

ParamStore mixed_store() {
  CounterRng rng(1, Purpose::kTest);
  ParamStore s;
  s.add("theta.w", test::random_tensor(rng, {3, 4}), Role::kThetaFrozen);
  s.add("adapter0.head.w", test::random_tensor(rng, {2, 2}, true), Role::kPhi);
  s.add("step", ad::Tensor::scalar(12.0), Role::kOptimizer);
  s.add("vec", ad::Tensor::from({3}, {-0.0, 1e-300, std::numeric_limits<double>::max()}), Role::kPhi);
  return s;
}

TEST(Encode, LayoutIsLittleEndian) {
  ParamStore s;
  s.add("ab", ad::Tensor::from({1}, {1.0}), Role::kPhi);
  const std::string bytes = encode_checkpoint(s);
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 + 2 + 1 + 4 + 1 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "PFLY");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
  EXPECT_EQ(bytes.substr(14, 2), "ab");
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1);   // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[17]), 1);   // dim 0
  EXPECT_EQ(static_cast<unsigned char>(bytes[21]), 1);   // role phi
  EXPECT_EQ(static_cast<unsigned char>(bytes[29]), 0x3f);  // 1.0 high byte
}

TEST(RoundTrip, BitIdentical) {
  const ParamStore s = mixed_store();
  EXPECT_TRUE(decode_checkpoint(encode_checkpoint(s)).bit_equal(s));
  test::ScratchDir dir("ckpt_rt");
  save_checkpoint(dir / "a.ckpt", s);
  EXPECT_TRUE(load_checkpoint(dir / "a.ckpt").bit_equal(s));
  const ParamStore phi = load_checkpoint(dir / "a.ckpt", Role::kPhi);
  EXPECT_EQ(phi.size(), 2u);
  EXPECT_TRUE(phi.bit_equal(select_role(s, Role::kPhi)));
}

TEST(RoundTrip, OptimizerStateSurvives) {
  AdapterParams phi = init_adapter(BackboneConfig{}, 2);
  AdamW opt(phi.store, {});
  for (const auto& e : phi.store) {
    ad::Tensor t = e.tensor;
    ad::Tape tape;
    ad::TapeScope scope(tape);
    ad::backward(ad::sum(ad::mul(t, t)));
  }
  opt.step();
  const ParamStore state = decode_checkpoint(encode_checkpoint(opt.state()));
  AdamW restored(phi.store, {});
  restored.load_state(state);
  EXPECT_EQ(restored.steps(), 1);
  EXPECT_TRUE(restored.state().bit_equal(opt.state()));
}

TEST(Decode, CorruptMagic) {
  std::string bytes = encode_checkpoint(mixed_store());
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), MagicError);
}

TEST(Decode, WrongVersion) {
  std::string bytes = encode_checkpoint(mixed_store());
  bytes[4] = 2;
  EXPECT_THROW(decode_checkpoint(bytes), VersionError);
}

TEST(Decode, EveryTruncationIsDetected) {
  const std::string bytes = encode_checkpoint(mixed_store());
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, n)), CheckpointError) << n;
  for (std::size_t n = 4; n < bytes.size(); n += 7)
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, n)), TruncatedError) << n;
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Decode, UnknownRoleTag) {
  ParamStore s;
  s.add("x", ad::Tensor::scalar(1.0), Role::kPhi);
  std::string bytes = encode_checkpoint(s);
  bytes[12 + 2 + 1 + 1 + 4] = 9;
  EXPECT_THROW(decode_checkpoint(bytes), RoleError);
}

TEST(Load, PhiOnlyFileIntoThetaSlot) {
  test::ScratchDir dir("ckpt_role");
  save_checkpoint(dir / "phi.ckpt", init_adapter(BackboneConfig{}, 1).store);
  EXPECT_THROW(load_checkpoint(dir / "phi.ckpt", Role::kThetaFrozen), RoleError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IOError);
}

TEST(Save, ExclusiveCreateUnlessOverwrite) {
  test::ScratchDir dir("ckpt_excl");
  const ParamStore s = mixed_store();
  save_checkpoint(dir / "a.ckpt", s);
  EXPECT_THROW(save_checkpoint(dir / "a.ckpt", s), IOError);
  EXPECT_NO_THROW(save_checkpoint(dir / "a.ckpt", s, true));
  save_checkpoint(dir / "nested/deeper/b.ckpt", s);
  EXPECT_TRUE(std::filesystem::exists(dir / "nested/deeper/b.ckpt"));
}

TEST(Stores, MergeRejectsDuplicates) {
  const ParamStore s = mixed_store();
  EXPECT_THROW(merge_stores(s, s), Error);
  const ParamStore m = merge_stores(select_role(s, Role::kPhi), select_role(s, Role::kOptimizer));
  EXPECT_EQ(m.size(), 3u);
}

TEST(Hash, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace propfly
