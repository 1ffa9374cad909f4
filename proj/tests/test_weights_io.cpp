#include "mmdstyle/weights_io.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

using namespace mmdstyle;

namespace {

using Bytes = std::vector<std::uint8_t>;

// written out by hand from the layout
const Bytes kGolden = {
    'M', 'M', 'D', 'W', 1, 0, 0, 0, 1, 0, 0, 0,  // header
    1, 0, 't',                                   // name
    1, 2, 0, 0, 0,                               // ndim, dims
    0x00, 0x00, 0x80, 0x3F,                      // 1.0f
    0x00, 0x00, 0x20, 0xC0,                      // -2.5f
};

WeightContainer sample(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
    WeightContainer out;
    for (auto [name, dims] : std::vector<std::pair<std::string, std::vector<std::uint32_t>>>{
             {"conv1_1.weight", {4, 3, 3, 3}}, {"conv1_1.bias", {4}}, {"scalar", {}},
             {"empty", {0, 5}}, {"unicodé", {2, 2}}}) {
        WeightTensor t{name, dims, {}};
        t.data.resize(t.element_count());
        for (float& v : t.data) v = dist(rng);
        out.add(std::move(t));
    }
    return out;
}

ContainerFormatError::Kind kind_of(const Bytes& b) {
    try {
        read_container(b);
    } catch (const ContainerFormatError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected ContainerFormatError";
    return ContainerFormatError::Kind::BadMagic;
}

}  // namespace

TEST(Container, WritesGoldenBytes) {
    WeightContainer c;
    c.add({"t", {2}, {1.0f, -2.5f}});
    EXPECT_EQ(write_container(c), kGolden);
    EXPECT_EQ(read_container(kGolden), c);
}

TEST(Container, EmptyContainerIsTwelveBytes) {
    const auto b = write_container(WeightContainer{});
    EXPECT_EQ(b.size(), kContainerHeaderBytes);
    EXPECT_TRUE(read_container(b).empty());
}

TEST(Container, RoundTripIsBitExact) {
    const auto c = sample(1);
    const auto b = write_container(c);
    const auto back = read_container(b);
    ASSERT_EQ(back.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(back.entries()[i].name, c.entries()[i].name);
        EXPECT_EQ(back.entries()[i].dims, c.entries()[i].dims);
        ASSERT_EQ(back.entries()[i].data.size(), c.entries()[i].data.size());
        EXPECT_EQ(std::memcmp(back.entries()[i].data.data(), c.entries()[i].data.data(),
                              4 * c.entries()[i].data.size()),
                  0);
    }
    EXPECT_EQ(write_container(back), b);
}

TEST(Container, OneChangedFloatChangesFourBytes) {
    auto c = sample(2);
    const auto before = write_container(c);
    WeightContainer edited;
    for (auto t : c.entries()) {
        if (t.name == "conv1_1.bias") t.data[2] = std::nextafter(t.data[2], 100.0f) * -1.5f;
        edited.add(std::move(t));
    }
    const auto after = write_container(edited);
    ASSERT_EQ(before.size(), after.size());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < before.size(); ++i) diff += before[i] != after[i];
    EXPECT_LE(diff, 4u);
    EXPECT_GE(diff, 1u);
}

TEST(Container, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "mmdstyle_weights_test.mmdw";
    const auto c = sample(3);
    save_container(c, path);
    EXPECT_EQ(load_container(path), c);
    std::filesystem::remove(path);
    EXPECT_THROW(load_container(path), std::runtime_error);
}

TEST(Container, RejectsBadMagicAndVersion) {
    Bytes b = kGolden;
    b[0] = 'X';
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::BadMagic);
    b = kGolden;
    b[4] = 2;
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::UnsupportedVersion);
}

TEST(Container, TruncationNamesTheTensor) {
    Bytes b = kGolden;
    b.resize(b.size() - 3);
    try {
        read_container(b);
        FAIL();
    } catch (const ContainerFormatError& e) {
        EXPECT_EQ(e.kind(), ContainerFormatError::Kind::Truncated);
        EXPECT_NE(std::string(e.what()).find("'t'"), std::string::npos) << e.what();
    }
    for (std::size_t n = 0; n < kGolden.size(); ++n) {
        EXPECT_THROW(read_container(std::span(kGolden.data(), n)), ContainerFormatError) << n;
    }
}

TEST(Container, RejectsTrailingDuplicateEmptyAndNonFinite) {
    Bytes b = kGolden;
    b.push_back(0);
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::TrailingBytes);

    b = kGolden;
    b[8] = 2;
    b.insert(b.end(), kGolden.begin() + 12, kGolden.end());
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::DuplicateName);

    b = kGolden;
    b[12] = 0;
    b.erase(b.begin() + 14);
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::EmptyName);

    b = kGolden;
    b[23] = 0x7F;
    b[22] = 0xC0;  // quiet NaN
    EXPECT_EQ(kind_of(b), ContainerFormatError::Kind::NonFinite);
}

TEST(Container, AddValidates) {
    WeightContainer c;
    EXPECT_THROW(c.add({"", {1}, {0.0f}}), std::invalid_argument);
    EXPECT_THROW(c.add({"a", {2}, {0.0f}}), std::invalid_argument);
    EXPECT_THROW(c.add({"a", {1}, {std::numeric_limits<float>::infinity()}}),
                 std::invalid_argument);
    c.add({"a", {1}, {0.0f}});
    EXPECT_THROW(c.add({"a", {1}, {0.0f}}), std::invalid_argument);
    EXPECT_NE(c.find("a"), nullptr);
    EXPECT_EQ(c.find("b"), nullptr);
}

TEST(Container, MutationFuzzNeverCrashes) {
    const Bytes base = write_container(sample(4));
    std::mt19937_64 rng(5);
    std::size_t decoded = 0;
    for (int i = 0; i < 10000; ++i) {
        Bytes b = base;
        const int edits = 1 + static_cast<int>(rng() % 4);
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng() % (b.size() + 1);
            switch (rng() % 4) {
            case 0: if (pos < b.size()) b[pos] = static_cast<std::uint8_t>(rng()); break;
            case 1: b.resize(pos); break;
            case 2: b.insert(b.begin() + static_cast<long>(pos), static_cast<std::uint8_t>(rng())); break;
            default: if (pos < b.size()) b[pos] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
            }
        }
        try {
            const auto c = read_container(b);
            ++decoded;
            EXPECT_EQ(write_container(c), b);
        } catch (const ContainerFormatError&) {
        }
    }
    EXPECT_GT(decoded, 0u);
}
