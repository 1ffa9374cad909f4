#include "mmdstyle/weights_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>

namespace mmdstyle {

namespace {

const char* kind_name(ContainerFormatError::Kind kind) {
    using Kind = ContainerFormatError::Kind;
    switch (kind) {
        case Kind::BadMagic: return "bad magic";
        case Kind::UnsupportedVersion: return "unsupported version";
        case Kind::Truncated: return "truncated";
        case Kind::DuplicateName: return "duplicate name";
        case Kind::EmptyName: return "empty name";
        case Kind::NonFinite: return "non-finite value";
        case Kind::TrailingBytes: return "trailing bytes";
    }
    return "format error";
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    bool has(std::size_t n) const { return remaining() >= n; }

    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t uint(std::size_t width) {
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += width;
        return v;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void put_uint(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::size_t WeightTensor::element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
}

bool operator==(const WeightTensor& a, const WeightTensor& b) {
    return a.name == b.name && a.dims == b.dims && a.data.size() == b.data.size() &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool operator==(const WeightContainer& a, const WeightContainer& b) {
    return a.entries_ == b.entries_;
}

void WeightContainer::add(WeightTensor tensor) {
    if (tensor.name.empty()) throw std::invalid_argument("weight tensor name must be non-empty");
    if (tensor.name.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw std::invalid_argument("weight tensor name too long: " + tensor.name.substr(0, 32));
    }
    if (find(tensor.name) != nullptr) {
        throw std::invalid_argument("duplicate weight tensor name: " + tensor.name);
    }
    if (tensor.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
        throw std::invalid_argument(tensor.name + ": too many dimensions");
    }
    if (tensor.element_count() != tensor.data.size()) {
        throw std::invalid_argument(tensor.name + ": dims describe " +
                                    std::to_string(tensor.element_count()) + " values, data has " +
                                    std::to_string(tensor.data.size()));
    }
    if (!std::all_of(tensor.data.begin(), tensor.data.end(),
                     [](float v) { return std::isfinite(v); })) {
        throw std::invalid_argument(tensor.name + ": non-finite value");
    }
    entries_.push_back(std::move(tensor));
}

const WeightTensor* WeightContainer::find(std::string_view name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const WeightTensor& t) { return t.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

ContainerFormatError::ContainerFormatError(Kind kind, std::size_t offset, std::string detail)
    : std::runtime_error(std::string("MMDW ") + kind_name(kind) + " at byte " +
                         std::to_string(offset) + (detail.empty() ? "" : ": " + detail)),
      kind_(kind),
      offset_(offset) {}

WeightContainer read_container(std::span<const std::uint8_t> bytes) {
    using Kind = ContainerFormatError::Kind;
    Reader in(bytes);

    if (!in.has(4)) throw ContainerFormatError(Kind::Truncated, in.offset(), "header");
    if (!std::equal(std::begin(kContainerMagic), std::end(kContainerMagic), bytes.begin())) {
        throw ContainerFormatError(Kind::BadMagic, 0, "");
    }
    in.take(4);
    if (!in.has(8)) throw ContainerFormatError(Kind::Truncated, in.offset(), "header");
    const auto version_at = in.offset();
    const auto version = in.uint(4);
    if (version != kContainerVersion) {
        throw ContainerFormatError(Kind::UnsupportedVersion, version_at,
                                   "version " + std::to_string(version));
    }
    const auto count = in.uint(4);

    WeightContainer container;
    for (std::uint64_t t = 0; t < count; ++t) {
        const std::string where = "tensor #" + std::to_string(t);
        if (!in.has(2)) throw ContainerFormatError(Kind::Truncated, in.offset(), where + " name length");
        const auto name_at = in.offset();
        const auto name_len = static_cast<std::size_t>(in.uint(2));
        if (!in.has(name_len)) throw ContainerFormatError(Kind::Truncated, in.offset(), where + " name");
        const auto name_bytes = in.take(name_len);
        WeightTensor tensor;
        tensor.name.assign(name_bytes.begin(), name_bytes.end());
        if (tensor.name.empty()) throw ContainerFormatError(Kind::EmptyName, name_at, where);
        const std::string quoted = "tensor '" + tensor.name + "'";
        if (container.find(tensor.name) != nullptr) {
            throw ContainerFormatError(Kind::DuplicateName, name_at, quoted);
        }

        if (!in.has(1)) throw ContainerFormatError(Kind::Truncated, in.offset(), quoted);
        const auto ndim = static_cast<std::size_t>(in.uint(1));
        if (!in.has(4 * ndim)) throw ContainerFormatError(Kind::Truncated, in.offset(), quoted);
        std::uint64_t elements = 1;
        for (std::size_t d = 0; d < ndim; ++d) {
            tensor.dims.push_back(static_cast<std::uint32_t>(in.uint(4)));
            elements *= tensor.dims.back();
            // a payload larger than the input can never be complete
            if (elements > in.remaining() / 4 + 1) elements = in.remaining() / 4 + 1;
        }
        if (!in.has(4 * elements)) {
            throw ContainerFormatError(Kind::Truncated, in.offset(), quoted + " payload");
        }
        tensor.data.resize(elements);
        for (auto& v : tensor.data) {
            const auto at = in.offset();
            v = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4)));
            if (!std::isfinite(v)) throw ContainerFormatError(Kind::NonFinite, at, quoted);
        }
        container.add(std::move(tensor));
    }
    if (in.remaining() != 0) {
        throw ContainerFormatError(Kind::TrailingBytes, in.offset(),
                                   std::to_string(in.remaining()) + " extra bytes");
    }
    return container;
}

std::vector<std::uint8_t> write_container(const WeightContainer& container) {
    std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
    put_uint(out, kContainerVersion, 4);
    put_uint(out, container.size(), 4);
    for (const auto& t : container.entries()) {
        put_uint(out, t.name.size(), 2);
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_uint(out, t.dims.size(), 1);
        for (auto d : t.dims) put_uint(out, d, 4);
        for (float v : t.data) put_uint(out, std::bit_cast<std::uint32_t>(v), 4);
    }
    return out;
}

WeightContainer load_container(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open weights file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                    std::istreambuf_iterator<char>());
    return read_container(bytes);
}

void save_container(const WeightContainer& container, const std::filesystem::path& path) {
    const auto bytes = write_container(container);
    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write weights file " + path.string());
    file.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    if (!file) throw std::runtime_error("short write to " + path.string());
}

}  // namespace mmdstyle
