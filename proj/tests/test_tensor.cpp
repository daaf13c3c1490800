#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "padim/binary_io.hpp"
#include "padim/error.hpp"
#include "padim/tensor.hpp"
#include "test_util.hpp"

using namespace padim;

namespace {

std::vector<std::uint8_t> header(std::vector<std::uint64_t> dims) {
  std::vector<std::uint8_t> b{'P', 'F', 'T', '1'};
  detail::put_u32(b, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) detail::put_u64(b, d);
  return b;
}

}  // namespace

TEST(Tensor, ReadsTwoByTwo) {
  auto bytes = header({2, 2});
  const float v[] = {1, 2, 3, 4};
  detail::put_f32s(bytes, v);
  const auto t = decode_tensor(bytes);
  EXPECT_EQ(t.shape(), (Shape{2, 2}));
  EXPECT_EQ(t, TensorF32({2, 2}, {1, 2, 3, 4}));
}

TEST(Tensor, MinimalTensor) {
  auto bytes = header({1});
  const float v[] = {0};
  detail::put_f32s(bytes, v);
  EXPECT_EQ(decode_tensor(bytes), TensorF32({1}, {0.0f}));
}

TEST(Tensor, TruncatedPayload) {
  auto bytes = header({4});
  const float v[] = {1, 2, 3};
  detail::put_f32s(bytes, v);
  try {
    decode_tensor(bytes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("payload length mismatch"), std::string::npos);
  }
}

TEST(Tensor, TrailingBytesRejected) {
  auto bytes = header({1});
  const float v[] = {1, 2};
  detail::put_f32s(bytes, v);
  EXPECT_THROW(decode_tensor(bytes), DataError);
}

TEST(Tensor, BadMagicAndHeader) {
  auto bytes = header({1});
  bytes[0] = 'X';
  detail::put_u32(bytes, 0);
  EXPECT_THROW(decode_tensor(bytes), DataError);
  auto zero_dim = header({2, 0});
  EXPECT_THROW(decode_tensor(zero_dim), DataError);
  auto no_dims = header({});
  EXPECT_THROW(decode_tensor(no_dims), DataError);
  EXPECT_THROW(decode_tensor(std::vector<std::uint8_t>{'P', 'F'}), DataError);
}

TEST(Tensor, InvariantsEnforcedOnConstruction) {
  EXPECT_THROW(TensorF32(Shape{2, 2}, std::vector<float>{1, 2, 3}), DataError);
  EXPECT_THROW(TensorF32(Shape{0}), DataError);
  EXPECT_THROW(TensorF32(Shape{}), DataError);
}

TEST(Tensor, FileRoundTrips) {
  testutil::TempDir dir;
  const TensorF32 a({3}, {1, 2, 3});
  write_tensor(a, dir / "a.pft");
  EXPECT_EQ(read_tensor(dir / "a.pft"), a);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.pft"), 4u + 4u + 8u + 12u);

  const TensorF32 zeros({2, 3, 4});
  write_tensor(zeros, dir / "z.pft");
  EXPECT_EQ(read_tensor(dir / "z.pft"), zeros);
}

TEST(Tensor, UnwritablePath) {
  testutil::TempDir dir;
  EXPECT_ANY_THROW(write_tensor(TensorF32({1}), dir / "missing" / "sub" / "x.pft"));
}

TEST(Tensor, RoundTripPropertyBitExact) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Shape shape(1 + uniform_index(rng, 4));
    for (auto& d : shape) d = 1 + uniform_index(rng, 6);
    TensorF32 t(shape);
    for (auto& v : t.values()) {
      // Arbitrary bit patterns, including NaN payloads, infinities and denormals.
      const auto bits = static_cast<std::uint32_t>(rng());
      std::memcpy(&v, &bits, 4);
    }
    const auto bytes = encode_tensor(t);
    const auto back = decode_tensor(bytes);
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.data(), t.data(), t.size() * 4), 0);
  }
}

TEST(Tensor, LittleEndianLayout) {
  const auto bytes = encode_tensor(TensorF32({1}, {1.0f}));
  ASSERT_EQ(bytes.size(), 20u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PFT1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);
  // 1.0f = 0x3f800000
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[19], 0x3f);
}
