#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "diffq/codec.hpp"
#include "diffq/rng.hpp"

using namespace diffq;
using namespace diffq::codec;

namespace {

HardenedTensor fixture_140()
{
    HardenedTensor t;
    t.name = "layer";
    t.kind = TensorKind::quantized;
    t.b_min = 2;
    t.q.shape = {16};
    t.q.group_size = 8;
    t.q.scale = {-0.5, 0.75};
    t.q.bits = {3, 5};
    for (std::uint32_t i = 0; i < 8; ++i) {
        t.q.indices.push_back(i);
    }
    for (std::uint32_t i = 0; i < 8; ++i) {
        t.q.indices.push_back(31 - 4 * i);
    }
    return t;
}

/// Random hardened model; floats are f32-representable so values round-trip exactly.
HardenedModel random_model(Rng& rng, std::size_t max_tensors = 4)
{
    HardenedModel m;
    const std::size_t n = rng.next_below(max_tensors + 1);
    for (std::size_t k = 0; k < n; ++k) {
        HardenedTensor t;
        t.name = "t" + std::to_string(k) + std::string(rng.next_below(4), 'x');
        const std::size_t d = 1 + rng.next_below(200);
        Shape shape = rng.next_below(2) ? Shape{d} : Shape{1, d};
        if (rng.next_below(5) == 0) {
            t.kind = TensorKind::raw;
            t.raw = Tensor(shape);
            for (auto& v : t.raw.data()) {
                v = static_cast<double>(static_cast<float>(rng.next_gaussian()));
            }
        } else {
            const std::size_t groups[] = {1, 4, 8, 16};
            t.kind = TensorKind::quantized;
            t.b_min = 1 + static_cast<int>(rng.next_below(4));
            const int b_max = t.b_min + 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(32 - t.b_min)));
            t.q.shape = shape;
            t.q.group_size = groups[rng.next_below(4)];
            const float lo = static_cast<float>(-rng.next_unit());
            t.q.scale = {lo, lo + static_cast<float>(rng.next_unit())};
            for (std::size_t s = 0; s < quant::num_groups(d, t.q.group_size); ++s) {
                t.q.bits.push_back(t.b_min + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(b_max - t.b_min + 1))));
            }
            for (std::size_t i = 0; i < d; ++i) {
                const int b = t.q.bits_of(i);
                t.q.indices.push_back(static_cast<std::uint32_t>(rng.next_u64() >> (64 - b)));
            }
        }
        m.tensors.push_back(std::move(t));
    }
    return m;
}

}  // namespace

TEST(BitStream, MsbFirstAndPadded)
{
    BitWriter w;
    w.write(0b101, 3);
    w.write(0b1, 1);
    w.write(0xF, 4);
    w.write(0b11, 2);
    EXPECT_EQ(w.bit_count(), 10u);
    const auto bytes = w.take();
    ASSERT_EQ(bytes.size(), 2u);
    EXPECT_EQ(bytes[0], 0b10111111);
    EXPECT_EQ(bytes[1], 0b11000000);
    BitReader r(bytes, 0);
    EXPECT_EQ(r.read(3), 0b101u);
    EXPECT_EQ(r.read(5), 0b11111u);
    EXPECT_EQ(r.read(2), 0b11u);
    EXPECT_THROW(r.read(7), FormatError);
}

TEST(Pack, EmptyModelIsTenBytes)
{
    const auto bytes = pack(HardenedModel{});
    EXPECT_EQ(bytes, (std::vector<std::uint8_t>{'D', 'F', 'Q', '1', 1, 0, 0, 0, 0, 0}));
    EXPECT_EQ(unpack(bytes), HardenedModel{});
}

TEST(Pack, RawTensorRecord)
{
    HardenedTensor t;
    t.name = "b";
    t.kind = TensorKind::raw;
    t.raw = Tensor::vector({1.0, -2.0, 0.5});
    HardenedModel m{{t}};
    const auto bytes = pack(m);
    // header 10 + name_len 2 + name 1 + kind 1 + ndim 1 + dim 4 + 3 floats
    ASSERT_EQ(bytes.size(), 10u + 2 + 1 + 1 + 1 + 4 + 12);
    EXPECT_EQ(bytes[13], 0);
    float f = 0.0f;
    std::memcpy(&f, &bytes[19], 4);
    EXPECT_EQ(f, 1.0f);
    EXPECT_EQ(bytes[27 + 2], 0x00);
    EXPECT_EQ(bytes[27 + 3], 0x3F);
    EXPECT_EQ(unpack(bytes), m);
}

TEST(Pack, FixtureLayout)
{
    const HardenedModel m{{fixture_140()}};
    EXPECT_EQ(true_size_bits(m.tensors[0]), 140u);
    const auto bytes = pack(m);
    const std::size_t framing = 2 + 5 + 1 + 1 + 4 + 4 + 1; // name_len, name, kind, ndim, dim, g, b_min
    const std::size_t payload = 4 + 4 + 1 + 1 + 8;          // min, max, maxC, codes, weights
    EXPECT_EQ(payload, 18u);
    ASSERT_EQ(bytes.size(), kFileHeaderBytes + framing + payload);
    const std::size_t codes_at = kFileHeaderBytes + framing + 9;
    EXPECT_EQ(bytes[codes_at - 1], 2);       // maxC
    EXPECT_EQ(bytes[codes_at], 0b01110000); // codes 1 and 3 over 2 bits
    // group 0: 0..7 in 3 bits = 000 001 010 011 100 101 110 111
    EXPECT_EQ(bytes[codes_at + 1], 0b00000101);
    EXPECT_EQ(bytes[codes_at + 2], 0b00111001);
    EXPECT_EQ(bytes[codes_at + 3], 0b01110111);
    // group 1 begins with 31 in 5 bits
    EXPECT_EQ(bytes[codes_at + 4] >> 3, 31);
    EXPECT_EQ(unpack(bytes), m);
}

TEST(Pack, RejectsIndexOutOfRange)
{
    auto t = fixture_140();
    t.q.indices[12] = 32;
    try {
        pack(HardenedModel{{t}});
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("layer"), std::string::npos) << msg;
        EXPECT_NE(msg.find("group 1"), std::string::npos) << msg;
    }
    auto u = fixture_140();
    u.q.bits[0] = 1;
    EXPECT_THROW(pack(HardenedModel{{u}}), std::invalid_argument);
}

TEST(Unpack, BitwidthAtMinimumDecodes)
{
    HardenedTensor t;
    t.name = "m";
    t.kind = TensorKind::quantized;
    t.b_min = 2;
    t.q.shape = {5};
    t.q.group_size = 8;
    t.q.scale = {0.0, 3.0};
    t.q.bits = {2};
    t.q.indices = {0, 1, 2, 3, 1};
    const auto bytes = pack(HardenedModel{{t}});
    // maxC = 0: no code bytes; weights 10 bits -> 2 bytes
    EXPECT_EQ(bytes.back(), 0b01000000);
    EXPECT_EQ(bytes[bytes.size() - 2], 0b00011011);
    const auto back = unpack(bytes);
    EXPECT_EQ(back.tensors[0], t);
    EXPECT_EQ(back.tensors[0].values().values(), (std::vector<double>{0.0, 1.0, 2.0, 3.0, 1.0}));
}

TEST(Unpack, Errors)
{
    auto bytes = pack(HardenedModel{{fixture_140()}});
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        unpack(bad_magic);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
        EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
    }
    auto bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_THROW(unpack(bad_version), FormatError);
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
        EXPECT_THROW(unpack(std::span(bytes).first(cut)), FormatError) << cut;
    }
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_THROW(unpack(trailing), FormatError);
    auto bad_max_c = bytes;
    bad_max_c[kFileHeaderBytes + 26] = 9;
    EXPECT_THROW(unpack(bad_max_c), FormatError);
    auto bad_kind = bytes;
    bad_kind[kFileHeaderBytes + 7] = 5;
    EXPECT_THROW(unpack(bad_kind), FormatError);
}

TEST(Unpack, OutOfRangeBitwidthRejected)
{
    auto t = fixture_140();
    t.b_min = 30;
    t.q.bits = {30, 31};
    auto bytes = pack(HardenedModel{{t}});
    const std::size_t b_min_at = kFileHeaderBytes + 2 + 5 + 1 + 1 + 4 + 4;
    bytes[b_min_at] = 32;
    try {
        unpack(bytes);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("bitwidth"), std::string::npos) << e.what();
    }
}

TEST(RoundTrip, RandomModelsProperty)
{
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const auto m = random_model(rng);
        const auto bytes = pack(m);
        const auto back = unpack(bytes);
        ASSERT_EQ(back, m) << "trial " << trial;
        ASSERT_EQ(pack(back), bytes) << "trial " << trial;
        for (std::size_t k = 0; k < m.tensors.size(); ++k) {
            ASSERT_EQ(back.tensors[k].values(), m.tensors[k].values());
        }
    }
}

TEST(Inspect, FixtureReportsTrueBitsAndFileSize)
{
    const auto bytes = pack(HardenedModel{{fixture_140()}});
    const auto ins = inspect(bytes);
    EXPECT_EQ(ins.true_bits, 140u);
    EXPECT_EQ(ins.file_bytes, bytes.size());
    ASSERT_EQ(ins.tensors.size(), 1u);
    EXPECT_EQ(ins.tensors[0].report.max_code_bits, 2);
    EXPECT_EQ(ins.tensors[0].file_bytes, bytes.size() - kFileHeaderBytes);
    EXPECT_EQ(ins.tensors[0].framing_bits, ins.tensors[0].file_bytes * 8 - 140);
    EXPECT_DOUBLE_EQ(ins.true_size_mb, 140.0 / 8388608.0);
    const auto text = format_inspection(ins);
    EXPECT_NE(text.find("true_bits=140"), std::string::npos) << text;
    EXPECT_NE(text.find("file_bytes=" + std::to_string(bytes.size())), std::string::npos) << text;
}

TEST(Inspect, MeanBits)
{
    HardenedTensor t = fixture_140();
    t.q.bits = {8, 8};
    t.b_min = 2;
    EXPECT_DOUBLE_EQ(inspect(pack(HardenedModel{{t}})).mean_bits, 8.0);

    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_model(rng);
        const auto ins = inspect(pack(m));
        double bits = 0.0;
        double weights = 0.0;
        std::uint64_t file_bits = 0;
        for (const auto& ht : m.tensors) {
            const std::size_t d = ht.num_weights();
            weights += static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) {
                bits += ht.kind == TensorKind::raw ? 32.0 : ht.q.bits_of(i);
            }
        }
        for (const auto& ti : ins.tensors) {
            file_bits += ti.file_bytes * 8;
            EXPECT_EQ(ti.file_bytes * 8, ti.report.true_bits + ti.framing_bits);
        }
        EXPECT_LE(ins.true_bits, ins.file_bytes * 8);
        EXPECT_EQ(file_bits + kFileHeaderBytes * 8, ins.file_bytes * 8);
        if (weights > 0) {
            EXPECT_NEAR(ins.mean_bits, bits / weights, 1e-12);
        }
    }
}

TEST(SizeFormula, MaxCodeBits)
{
    EXPECT_EQ(max_code_bits(std::vector<int>{3, 5}, 2), 2);
    EXPECT_EQ(max_code_bits(std::vector<int>{2, 2}, 2), 0);
    EXPECT_EQ(max_code_bits(std::vector<int>{3}, 2), 1);
    EXPECT_EQ(max_code_bits(std::vector<int>{32}, 1), 5);
    EXPECT_EQ(max_code_bits(std::vector<int>{32}, 0), 6);
    EXPECT_THROW(max_code_bits(std::vector<int>{1}, 2), std::invalid_argument);
}
