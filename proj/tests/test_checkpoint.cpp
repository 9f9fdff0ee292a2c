#include "test_util.hpp"

#include "viewret/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace viewret;

namespace {

Checkpoint small_checkpoint()
{
    Rng rng(1);
    Checkpoint c;
    c.add("a", viewret::testing::random_tensor({2, 3}, rng));
    c.add("b.weight", viewret::testing::random_tensor({4}, rng));
    c.add("c", viewret::testing::random_tensor({1, 2, 2, 1}, rng));
    return c;
}

} // namespace

TEST(Checkpoint, RoundTripIsBitExact)
{
    const Checkpoint c = small_checkpoint();
    const auto dir = viewret::testing::temp_dir("ckpt");
    save_checkpoint(c, dir / "m.ckpt");
    const Checkpoint d = load_checkpoint(dir / "m.ckpt");
    ASSERT_EQ(d.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(d.entries()[i].name, c.entries()[i].name);
        EXPECT_EQ(d.entries()[i].dims, c.entries()[i].dims);
        EXPECT_EQ(0, std::memcmp(d.entries()[i].values.data(), c.entries()[i].values.data(),
                                 c.entries()[i].values.size() * sizeof(float)));
    }
    EXPECT_EQ(serialize_checkpoint(d), serialize_checkpoint(c));
}

TEST(Checkpoint, HeaderLayout)
{
    Checkpoint c;
    c.add("w", Tensor::from({2}, std::vector<float>{1.0f, -2.0f}));
    const std::string bytes = serialize_checkpoint(c);
    // magic(4) version(4) count(4) namelen(2) name(1) ndim(1) dim(4) payload(8)
    ASSERT_EQ(bytes.size(), 28u);
    EXPECT_EQ(bytes.substr(0, 4), "VMCK");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[12], 1);
    EXPECT_EQ(bytes[14], 'w');
    EXPECT_EQ(bytes[15], 1);
    EXPECT_EQ(bytes[16], 2);
    float v;
    std::memcpy(&v, bytes.data() + 24, 4);
    EXPECT_EQ(v, -2.0f);
}

TEST(Checkpoint, EveryTruncationIsAFormatError)
{
    const std::string bytes = serialize_checkpoint(small_checkpoint());
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, n)), FormatError) << n;
    }
}

TEST(Checkpoint, RejectsBadMagicVersionAndTrailingBytes)
{
    std::string bytes = serialize_checkpoint(small_checkpoint());
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    try {
        deserialize_checkpoint(bad);
        FAIL() << "version 2 accepted";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), FormatError);
}

TEST(Checkpoint, RejectsDuplicateNames)
{
    Checkpoint c;
    c.add("a", Tensor({1}));
    EXPECT_THROW(c.add("a", Tensor({1})), ConfigError);
}

TEST(Checkpoint, ShapeMismatchOnImport)
{
    Checkpoint c;
    c.add("a", Tensor({3}));
    Tensor t({4});
    EXPECT_THROW(c.get("a", t), ShapeError);
    EXPECT_THROW(c.get("missing", t), FormatError);
}

TEST(Checkpoint, FullModelSizeAudit)
{
    Rng rng(2);
    const auto enc = EncoderParams::init(rng);
    const auto proj = ProjectionParams::init(rng);
    const auto clf = ClassifierParams::init(rng);
    Checkpoint c;
    export_params(c, enc);
    export_params(c, proj);
    export_params(c, clf);

    // Parameter count by layer arithmetic.
    const std::size_t conv = (1 * 16 * 9 + 16) + (16 * 32 * 9 + 32) + (32 * 64 * 9 + 64) + (64 * 64 * 9 + 64);
    const std::size_t bn = 4 * (16 + 32 + 64 + 64);
    const std::size_t projection = (16384 * 512 + 512) + (512 * 512 + 512);
    const std::size_t classifier = (32768 * 2048 + 2048) + (2048 * 1024 + 1024) + (1024 * 512 + 512) + (512 * 2 + 2);
    const std::size_t params = conv + bn + projection + classifier;
    EXPECT_EQ(c.parameter_count(), params);

    std::size_t header = 12;
    for (const auto& e : c.entries()) {
        header += 2 + e.name.size() + 1 + 4 * e.dims.size();
    }
    const std::string bytes = serialize_checkpoint(c);
    EXPECT_EQ(bytes.size(), header + 4 * params);
}

TEST(Checkpoint, EvalForwardAfterReloadIsBitIdentical)
{
    Rng rng(3);
    auto enc = EncoderParams::init(rng);
    // Give BN non-trivial running statistics.
    for (auto& b : enc.blocks) {
        for (std::size_t c = 0; c < b.bn.channels(); ++c) {
            b.bn.running_mean[c] = static_cast<float>(rng.uniform(-0.1, 0.1));
            b.bn.running_var[c] = static_cast<float>(rng.uniform(0.5, 2.0));
            b.bn.gamma[c] = static_cast<float>(rng.uniform(0.5, 1.5));
        }
    }
    const auto proj = ProjectionParams::init(rng);
    Checkpoint c;
    export_params(c, enc);
    export_params(c, proj);
    const Checkpoint d = deserialize_checkpoint(serialize_checkpoint(c));
    EncoderParams enc2;
    ProjectionParams proj2;
    import_params(d, enc2);
    import_params(d, proj2);

    Frame f(64, 64);
    for (float& v : f.pixels) {
        v = static_cast<float>(rng.uniform());
    }
    const Tensor h1 = encode(f, enc);
    const Tensor h2 = encode(f, enc2);
    EXPECT_EQ(0, std::memcmp(h1.data().data(), h2.data().data(), h1.size() * sizeof(float)));
    const Tensor z1 = project(h1, proj);
    const Tensor z2 = project(h2, proj2);
    EXPECT_EQ(0, std::memcmp(z1.data().data(), z2.data().data(), z1.size() * sizeof(float)));
}

TEST(Checkpoint, SupervisedRoundTrip)
{
    Rng rng(4);
    const auto sup = SupervisedParams::init(rng);
    Checkpoint c;
    export_params(c, sup);
    SupervisedParams back;
    import_params(deserialize_checkpoint(serialize_checkpoint(c)), back);
    EXPECT_TRUE(std::equal(sup.weights.data().begin(), sup.weights.data().end(), back.weights.data().begin()));
    EXPECT_TRUE(c.contains("supervised.encoder.conv1.weight"));
}
