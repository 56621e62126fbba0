#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "omt/mapped_file.hpp"
#include "omt/quant.hpp"

namespace omt::gguf {

inline constexpr std::uint32_t kMagic = 0x46554747;  // "GGUF" read as little-endian u32
inline constexpr std::uint32_t kVersion = 3;
inline constexpr std::uint64_t kDefaultAlignment = 32;
inline constexpr std::string_view kAlignmentKey = "general.alignment";

// Tag values are the on-disk ids.
enum class MetaType : std::uint32_t {
  U8 = 0,
  I8 = 1,
  U16 = 2,
  I16 = 3,
  U32 = 4,
  I32 = 5,
  F32 = 6,
  Bool = 7,
  String = 8,
  Array = 9,
  U64 = 10,
  I64 = 11,
  F64 = 12,
};

std::string_view meta_type_name(MetaType t) noexcept;

struct MetaValue;

struct MetaArray {
  MetaType elem_type = MetaType::U8;
  std::vector<MetaValue> items;

  bool operator==(const MetaArray&) const = default;
};

struct MetaValue {
  // Alternative index equals the MetaType tag.
  using Storage = std::variant<std::uint8_t, std::int8_t, std::uint16_t, std::int16_t, std::uint32_t, std::int32_t,
                               float, bool, std::string, MetaArray, std::uint64_t, std::int64_t, double>;
  Storage value;

  MetaValue() = default;
  template <typename T>
    requires(!std::is_same_v<std::remove_cvref_t<T>, MetaValue> && std::is_constructible_v<Storage, T>)
  MetaValue(T&& v) : value(std::forward<T>(v)) {}  // NOLINT(google-explicit-constructor)
  MetaValue(const char* s) : value(std::string(s)) {}  // NOLINT(google-explicit-constructor)

  MetaType type() const noexcept { return static_cast<MetaType>(value.index()); }

  // Throw TypeMismatch when the stored tag differs.
  const std::string& as_string() const;
  const MetaArray& as_array() const;
  bool as_bool() const;
  // Any integer tag, range-checked. Throws TypeMismatch otherwise.
  std::int64_t as_int() const;
  std::uint64_t as_uint() const;
  // Any numeric tag.
  double as_number() const;

  bool operator==(const MetaValue& other) const;
};

MetaValue make_array(MetaType elem_type, std::vector<MetaValue> items);
MetaValue string_array(const std::vector<std::string>& items);

struct TensorInfo {
  std::string name;
  std::vector<std::uint64_t> dims;  // dims[0] is the innermost extent
  quant::QuantType type = quant::QuantType::F32;
  std::uint64_t offset = 0;  // relative to data_offset

  std::uint64_t element_count() const noexcept;
  // Unknown type ids have no geometry; payload size is not known.
  bool opaque() const noexcept;
  // Throws UnsupportedQuantType for opaque tensors, GeometryMismatch for
  // extents that do not fill whole blocks.
  std::uint64_t byte_size() const;

  bool operator==(const TensorInfo&) const = default;
};

using Metadata = std::vector<std::pair<std::string, MetaValue>>;

class GgufFile {
 public:
  std::uint32_t version = kVersion;
  std::uint64_t alignment = kDefaultAlignment;
  Metadata metadata;
  std::vector<TensorInfo> tensors;
  std::uint64_t data_offset = 0;
  std::uint64_t total_size = 0;

  const MetaValue* find(std::string_view key) const noexcept;
  const TensorInfo* find_tensor(std::string_view name) const noexcept;
  std::span<const std::byte> bytes() const noexcept;
  const std::shared_ptr<const ByteRegion>& source() const noexcept { return source_; }

 private:
  friend GgufFile parse(std::shared_ptr<const ByteRegion> source);
  std::shared_ptr<const ByteRegion> source_;
  std::unordered_map<std::string, std::size_t> key_index_;
  std::unordered_map<std::string, std::size_t> tensor_index_;
};

// Indexes header, metadata and tensor directory. Payload bytes are never read.
GgufFile parse(std::shared_ptr<const ByteRegion> source);
// Memory-maps the file and parses it.
GgufFile open(const std::filesystem::path& path);

const MetaValue& metadata_get(const GgufFile& file, std::string_view key, MetaType expected);

// Zero-copy view. For opaque tensors the span runs to the next tensor start
// (or the end of the file). Throws NotFound, or TruncatedFile when the
// tensor extends past the end of the source.
quant::TensorView tensor_view(const GgufFile& file, std::string_view name);

struct TensorSpec {
  std::string name;
  std::vector<std::uint64_t> dims;
  quant::QuantType type = quant::QuantType::F32;
  std::vector<std::byte> payload;
  // Explicit data-relative offset; by default tensors are packed in order,
  // each start rounded up to the alignment.
  std::optional<std::uint64_t> offset;
};

struct WriteSpec {
  std::uint64_t alignment = kDefaultAlignment;
  Metadata metadata;
  std::vector<TensorSpec> tensors;
};

// Offsets the writer assigns to each tensor, and the total data region size.
struct Layout {
  std::vector<std::uint64_t> offsets;
  std::uint64_t data_offset = 0;
  std::uint64_t file_size = 0;
};

// When alignment differs from the default and metadata lacks the alignment
// key, the key is inserted first so the file is self-describing.
Layout plan_layout(const WriteSpec& spec);
std::vector<std::byte> write(const WriteSpec& spec);
void write(const WriteSpec& spec, std::ostream& out);
void write_file(const WriteSpec& spec, const std::filesystem::path& path);

struct Violation {
  std::string code;  // Overlap, Truncated, Misaligned, BlockSize
  std::string subject;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  struct Stats {
    std::uint64_t tensor_count = 0;
    std::uint64_t metadata_count = 0;
    std::uint64_t file_bytes = 0;
    std::uint64_t declared_bytes = 0;  // data_offset + furthest tensor end
  } stats;

  bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate(const GgufFile& file);

}  // namespace omt::gguf
