#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "omt/error.hpp"
#include "omt/gguf.hpp"
#include "omt/text.hpp"

namespace omt::gguf {
namespace {

constexpr int kMaxDims = 4;
constexpr int kMaxArrayDepth = 8;

class Cursor {
 public:
  explicit Cursor(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint64_t pos() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }

  template <typename T>
  T read(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string read_string(const char* what) {
    const auto len = read<std::uint64_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), static_cast<std::size_t>(len));
    pos_ += len;
    if (!text::is_valid_utf8(s)) fail(Errc::MalformedMetadata, std::string(what) + " is not valid UTF-8");
    return s;
  }

  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) {
      fail(Errc::TruncatedFile, std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
    }
  }

 private:
  std::span<const std::byte> bytes_;
  std::uint64_t pos_ = 0;
};

// Smallest encoded size of one value of `t`, used to reject absurd counts
// before allocating.
std::uint64_t min_encoded_size(MetaType t) {
  switch (t) {
    case MetaType::U8:
    case MetaType::I8:
    case MetaType::Bool:
      return 1;
    case MetaType::U16:
    case MetaType::I16:
      return 2;
    case MetaType::U32:
    case MetaType::I32:
    case MetaType::F32:
      return 4;
    case MetaType::String:
    case MetaType::U64:
    case MetaType::I64:
    case MetaType::F64:
      return 8;
    case MetaType::Array:
      return 12;
  }
  return 1;
}

MetaType read_tag(Cursor& c, const char* what) {
  const auto raw = c.read<std::uint32_t>(what);
  if (raw > static_cast<std::uint32_t>(MetaType::F64)) {
    fail(Errc::MalformedMetadata, "unknown value tag " + std::to_string(raw) + " in " + what);
  }
  return static_cast<MetaType>(raw);
}

MetaValue read_value(Cursor& c, MetaType t, int depth) {
  switch (t) {
    case MetaType::U8:
      return c.read<std::uint8_t>("u8 value");
    case MetaType::I8:
      return c.read<std::int8_t>("i8 value");
    case MetaType::U16:
      return c.read<std::uint16_t>("u16 value");
    case MetaType::I16:
      return c.read<std::int16_t>("i16 value");
    case MetaType::U32:
      return c.read<std::uint32_t>("u32 value");
    case MetaType::I32:
      return c.read<std::int32_t>("i32 value");
    case MetaType::F32:
      return c.read<float>("f32 value");
    case MetaType::Bool: {
      const auto b = c.read<std::uint8_t>("bool value");
      if (b > 1) fail(Errc::MalformedMetadata, "bool value " + std::to_string(b));
      return b == 1;
    }
    case MetaType::String:
      return c.read_string("string value");
    case MetaType::U64:
      return c.read<std::uint64_t>("u64 value");
    case MetaType::I64:
      return c.read<std::int64_t>("i64 value");
    case MetaType::F64:
      return c.read<double>("f64 value");
    case MetaType::Array: {
      if (depth >= kMaxArrayDepth) fail(Errc::MalformedMetadata, "arrays nested too deeply");
      MetaArray arr;
      arr.elem_type = read_tag(c, "array element tag");
      const auto count = c.read<std::uint64_t>("array length");
      if (count > c.remaining() / min_encoded_size(arr.elem_type)) {
        fail(Errc::TruncatedFile, "array of " + std::to_string(count) + " elements exceeds the file");
      }
      arr.items.reserve(static_cast<std::size_t>(count));
      for (std::uint64_t i = 0; i < count; ++i) arr.items.push_back(read_value(c, arr.elem_type, depth + 1));
      return arr;
    }
  }
  fail(Errc::MalformedMetadata, "unknown value tag");
}

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace

std::string_view meta_type_name(MetaType t) noexcept {
  switch (t) {
    case MetaType::U8: return "u8";
    case MetaType::I8: return "i8";
    case MetaType::U16: return "u16";
    case MetaType::I16: return "i16";
    case MetaType::U32: return "u32";
    case MetaType::I32: return "i32";
    case MetaType::F32: return "f32";
    case MetaType::Bool: return "bool";
    case MetaType::String: return "string";
    case MetaType::Array: return "array";
    case MetaType::U64: return "u64";
    case MetaType::I64: return "i64";
    case MetaType::F64: return "f64";
  }
  return "?";
}

const std::string& MetaValue::as_string() const {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  fail(Errc::TypeMismatch, "expected string, found " + std::string(meta_type_name(type())));
}

const MetaArray& MetaValue::as_array() const {
  if (const auto* a = std::get_if<MetaArray>(&value)) return *a;
  fail(Errc::TypeMismatch, "expected array, found " + std::string(meta_type_name(type())));
}

bool MetaValue::as_bool() const {
  if (const auto* b = std::get_if<bool>(&value)) return *b;
  fail(Errc::TypeMismatch, "expected bool, found " + std::string(meta_type_name(type())));
}

std::int64_t MetaValue::as_int() const {
  return std::visit(
      [this](const auto& v) -> std::int64_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
          if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
              fail(Errc::TypeMismatch, "value out of signed range");
            }
          }
          return static_cast<std::int64_t>(v);
        } else {
          fail(Errc::TypeMismatch, "expected integer, found " + std::string(meta_type_name(type())));
        }
      },
      value);
}

std::uint64_t MetaValue::as_uint() const {
  const bool is_u64 = std::holds_alternative<std::uint64_t>(value);
  if (is_u64) return std::get<std::uint64_t>(value);
  const std::int64_t v = as_int();
  if (v < 0) fail(Errc::TypeMismatch, "negative value where unsigned expected");
  return static_cast<std::uint64_t>(v);
}

double MetaValue::as_number() const {
  if (const auto* f = std::get_if<float>(&value)) return *f;
  if (const auto* d = std::get_if<double>(&value)) return *d;
  return static_cast<double>(as_int());
}

bool MetaValue::operator==(const MetaValue& other) const {
  if (value.index() != other.value.index()) return false;
  // Bitwise for floats so NaN payloads round-trip as equal.
  if (const auto* f = std::get_if<float>(&value)) {
    return std::bit_cast<std::uint32_t>(*f) == std::bit_cast<std::uint32_t>(std::get<float>(other.value));
  }
  if (const auto* d = std::get_if<double>(&value)) {
    return std::bit_cast<std::uint64_t>(*d) == std::bit_cast<std::uint64_t>(std::get<double>(other.value));
  }
  return value == other.value;
}

MetaValue make_array(MetaType elem_type, std::vector<MetaValue> items) {
  for (const auto& v : items) {
    if (v.type() != elem_type) fail(Errc::InvalidSpec, "array elements must share one tag");
  }
  return MetaArray{elem_type, std::move(items)};
}

MetaValue string_array(const std::vector<std::string>& items) {
  MetaArray arr{MetaType::String, {}};
  arr.items.reserve(items.size());
  for (const auto& s : items) arr.items.emplace_back(s);
  return arr;
}

std::uint64_t TensorInfo::element_count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

bool TensorInfo::opaque() const noexcept { return !quant::type_info(type).has_value(); }

std::uint64_t TensorInfo::byte_size() const {
  const auto info = quant::type_info(type);
  if (!info) fail(Errc::UnsupportedQuantType, name + " has unknown type id " + quant::type_name(type));
  const std::uint64_t row = dims.empty() ? 1 : dims[0];
  if (row % info->block_elems != 0) {
    fail(Errc::GeometryMismatch, name + ": row length " + std::to_string(row) + " is not a multiple of " +
                                     std::to_string(info->block_elems));
  }
  return quant::byte_size(type, element_count());
}

const MetaValue* GgufFile::find(std::string_view key) const noexcept {
  const auto it = key_index_.find(std::string(key));
  return it == key_index_.end() ? nullptr : &metadata[it->second].second;
}

const TensorInfo* GgufFile::find_tensor(std::string_view name) const noexcept {
  const auto it = tensor_index_.find(std::string(name));
  return it == tensor_index_.end() ? nullptr : &tensors[it->second];
}

std::span<const std::byte> GgufFile::bytes() const noexcept {
  return source_ ? source_->bytes() : std::span<const std::byte>{};
}

GgufFile parse(std::shared_ptr<const ByteRegion> source) {
  if (!source) fail(Errc::InvalidArgument, "no source");
  const auto bytes = source->bytes();
  Cursor c(bytes);
  GgufFile f;
  f.total_size = bytes.size();

  if (bytes.size() < 4) fail(Errc::TruncatedFile, "file shorter than the magic");
  if (c.read<std::uint32_t>("magic") != kMagic) {
    std::string got;
    for (int i = 0; i < 4; ++i) {
      const char ch = static_cast<char>(bytes[i]);
      got += (ch >= 0x20 && ch < 0x7f) ? ch : '?';
    }
    fail(Errc::UnsupportedMagic, "magic is \"" + got + "\", expected \"GGUF\"");
  }
  f.version = c.read<std::uint32_t>("version");
  if (f.version != kVersion) {
    fail(Errc::UnsupportedVersion, "version " + std::to_string(f.version) + " (only 3 is supported)");
  }
  const auto n_tensors = c.read<std::uint64_t>("tensor count");
  const auto n_kv = c.read<std::uint64_t>("metadata count");
  // key length + tag + smallest value
  if (n_kv > c.remaining() / 13) fail(Errc::TruncatedFile, "metadata count exceeds the file");

  f.metadata.reserve(static_cast<std::size_t>(n_kv));
  for (std::uint64_t i = 0; i < n_kv; ++i) {
    std::string key = c.read_string("metadata key");
    const MetaType t = read_tag(c, "metadata tag");
    MetaValue v = read_value(c, t, 0);
    if (!f.key_index_.emplace(key, f.metadata.size()).second) {
      fail(Errc::MalformedMetadata, "duplicate metadata key " + key);
    }
    f.metadata.emplace_back(std::move(key), std::move(v));
  }

  if (const MetaValue* a = f.find(kAlignmentKey)) {
    std::uint64_t al = 0;
    try {
      al = a->as_uint();
    } catch (const Error&) {
      fail(Errc::MalformedMetadata, "general.alignment is not an unsigned integer");
    }
    if (al == 0 || !std::has_single_bit(al)) {
      fail(Errc::MalformedMetadata, "general.alignment " + std::to_string(al) + " is not a power of two");
    }
    f.alignment = al;
  }

  // name length + n_dims + one dim + type + offset
  if (n_tensors > c.remaining() / 28) fail(Errc::TruncatedFile, "tensor count exceeds the file");
  f.tensors.reserve(static_cast<std::size_t>(n_tensors));
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    TensorInfo t;
    t.name = c.read_string("tensor name");
    const auto n_dims = c.read<std::uint32_t>("tensor rank");
    if (n_dims == 0 || n_dims > kMaxDims) {
      fail(Errc::MalformedMetadata, t.name + " has rank " + std::to_string(n_dims));
    }
    t.dims.resize(n_dims);
    for (auto& d : t.dims) d = c.read<std::uint64_t>("tensor dims");
    t.type = static_cast<quant::QuantType>(c.read<std::uint32_t>("tensor type"));
    t.offset = c.read<std::uint64_t>("tensor offset");
    if (!f.tensor_index_.emplace(t.name, f.tensors.size()).second) {
      fail(Errc::DuplicateTensorName, "tensor " + t.name + " appears twice");
    }
    f.tensors.push_back(std::move(t));
  }
  f.data_offset = align_up(c.pos(), f.alignment);
  f.source_ = std::move(source);
  return f;
}

GgufFile open(const std::filesystem::path& path) { return parse(std::make_shared<MappedFile>(path)); }

const MetaValue& metadata_get(const GgufFile& file, std::string_view key, MetaType expected) {
  const MetaValue* v = file.find(key);
  if (!v) fail(Errc::NotFound, "metadata key " + std::string(key));
  if (v->type() != expected) {
    fail(Errc::TypeMismatch, std::string(key) + " is " + std::string(meta_type_name(v->type())) + ", not " +
                                 std::string(meta_type_name(expected)));
  }
  return *v;
}

quant::TensorView tensor_view(const GgufFile& file, std::string_view name) {
  const TensorInfo* t = file.find_tensor(name);
  if (!t) fail(Errc::NotFound, "tensor " + std::string(name));
  const std::uint64_t start = file.data_offset + t->offset;
  std::uint64_t len = 0;
  if (t->opaque()) {
    std::uint64_t end = file.total_size;
    for (const auto& other : file.tensors) {
      const std::uint64_t s = file.data_offset + other.offset;
      if (s > start && s < end) end = s;
    }
    len = end > start ? end - start : 0;
  } else {
    len = t->byte_size();
  }
  if (start > file.total_size || len > file.total_size - start) {
    fail(Errc::TruncatedFile, t->name + " extends past the end of the file");
  }
  quant::TensorView v;
  v.name = t->name;
  v.type = t->type;
  v.dims = t->dims;
  v.data = file.bytes().subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
  return v;
}

}  // namespace omt::gguf
