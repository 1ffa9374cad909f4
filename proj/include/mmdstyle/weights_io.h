#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdstyle {

// MMDW container, all integers little-endian:
//   "MMDW" | u32 version (1) | u32 tensor count |
//   per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
//               product(dims) x f32 payload
inline constexpr std::uint8_t kContainerMagic[4] = {0x4D, 0x4D, 0x44, 0x57};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 12;

struct WeightTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t element_count() const;
};

class WeightContainer {
public:
    WeightContainer() = default;

    /// Appends an entry; throws std::invalid_argument on an empty or duplicate
    /// name, a dims/data size mismatch, or a non-finite value.
    void add(WeightTensor tensor);

    const std::vector<WeightTensor>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    /// nullptr if absent.
    const WeightTensor* find(std::string_view name) const;

    friend bool operator==(const WeightContainer&, const WeightContainer&);

private:
    std::vector<WeightTensor> entries_;
};

bool operator==(const WeightTensor& a, const WeightTensor& b);

class ContainerFormatError : public std::runtime_error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, DuplicateName, EmptyName,
                      NonFinite, TrailingBytes };

    ContainerFormatError(Kind kind, std::size_t offset, std::string detail);

    Kind kind() const { return kind_; }
    std::size_t offset() const { return offset_; }

private:
    Kind kind_;
    std::size_t offset_;
};

WeightContainer read_container(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_container(const WeightContainer& container);

WeightContainer load_container(const std::filesystem::path& path);
void save_container(const WeightContainer& container, const std::filesystem::path& path);

}  // namespace mmdstyle
