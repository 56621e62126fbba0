#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "omt/error.hpp"
#include "omt/gguf.hpp"
#include "omt/text.hpp"

namespace omt::gguf {
namespace {

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

class Sink {
 public:
  explicit Sink(std::ostream* out) : out_(out) {}

  template <typename T>
  void put(T v) {
    raw(&v, sizeof(T));
  }

  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }

  void raw(const void* p, std::size_t n) {
    if (out_ && n > 0) out_->write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    pos_ += n;
  }

  void pad_to(std::uint64_t target) {
    static const char zeros[64] = {};
    while (pos_ < target) raw(zeros, static_cast<std::size_t>(std::min<std::uint64_t>(64, target - pos_)));
  }

  std::uint64_t pos() const noexcept { return pos_; }

 private:
  std::ostream* out_;
  std::uint64_t pos_ = 0;
};

void put_value(Sink& s, const MetaValue& v) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::string>) {
          s.put_string(x);
        } else if constexpr (std::is_same_v<T, MetaArray>) {
          s.put<std::uint32_t>(static_cast<std::uint32_t>(x.elem_type));
          s.put<std::uint64_t>(x.items.size());
          for (const auto& item : x.items) put_value(s, item);
        } else if constexpr (std::is_same_v<T, bool>) {
          s.put<std::uint8_t>(x ? 1 : 0);
        } else {
          s.put<T>(x);
        }
      },
      v.value);
}

void check_value(const std::string& key, const MetaValue& v) {
  if (const auto* s = std::get_if<std::string>(&v.value)) {
    if (!text::is_valid_utf8(*s)) fail(Errc::InvalidSpec, key + ": string is not valid UTF-8");
  } else if (const auto* a = std::get_if<MetaArray>(&v.value)) {
    for (const auto& item : a->items) {
      if (item.type() != a->elem_type) fail(Errc::InvalidSpec, key + ": array elements must share one tag");
      check_value(key, item);
    }
  }
}

Metadata effective_metadata(const WriteSpec& spec) {
  Metadata md;
  bool has_key = false;
  for (const auto& [k, v] : spec.metadata) has_key = has_key || k == kAlignmentKey;
  if (!has_key && spec.alignment != kDefaultAlignment) {
    md.emplace_back(std::string(kAlignmentKey), static_cast<std::uint32_t>(spec.alignment));
  }
  md.insert(md.end(), spec.metadata.begin(), spec.metadata.end());
  return md;
}

// Serializes everything before the data region; returns its unpadded size.
std::uint64_t put_header(Sink& s, const Metadata& md, const WriteSpec& spec, const Layout& layout) {
  s.put<std::uint32_t>(kMagic);
  s.put<std::uint32_t>(kVersion);
  s.put<std::uint64_t>(spec.tensors.size());
  s.put<std::uint64_t>(md.size());
  for (const auto& [k, v] : md) {
    s.put_string(k);
    s.put<std::uint32_t>(static_cast<std::uint32_t>(v.type()));
    put_value(s, v);
  }
  for (std::size_t i = 0; i < spec.tensors.size(); ++i) {
    const auto& t = spec.tensors[i];
    s.put_string(t.name);
    s.put<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) s.put<std::uint64_t>(d);
    s.put<std::uint32_t>(static_cast<std::uint32_t>(t.type));
    s.put<std::uint64_t>(layout.offsets.empty() ? 0 : layout.offsets[i]);
  }
  return s.pos();
}

}  // namespace

Layout plan_layout(const WriteSpec& spec) {
  if (spec.alignment == 0 || !std::has_single_bit(spec.alignment)) {
    fail(Errc::InvalidSpec, "alignment " + std::to_string(spec.alignment) + " is not a power of two");
  }
  const Metadata md = effective_metadata(spec);
  std::unordered_set<std::string> keys;
  for (const auto& [k, v] : md) {
    if (!keys.insert(k).second) fail(Errc::InvalidSpec, "duplicate metadata key " + k);
    if (!text::is_valid_utf8(k)) fail(Errc::InvalidSpec, "metadata key is not valid UTF-8");
    check_value(k, v);
    if (k == kAlignmentKey && v.as_uint() != spec.alignment) {
      fail(Errc::InvalidSpec, "general.alignment disagrees with the spec alignment");
    }
  }
  std::unordered_set<std::string> names;
  for (const auto& t : spec.tensors) {
    if (!names.insert(t.name).second) fail(Errc::DuplicateTensorName, "tensor " + t.name + " appears twice");
    if (t.dims.empty() || t.dims.size() > 4) fail(Errc::InvalidSpec, t.name + ": rank must be 1..4");
    const auto info = quant::type_info(t.type);
    if (!info) fail(Errc::UnsupportedQuantType, t.name + ": unknown type id " + quant::type_name(t.type));
    TensorInfo ti{t.name, t.dims, t.type, 0};
    const std::uint64_t want = ti.byte_size();
    if (t.payload.size() != want) {
      fail(Errc::GeometryMismatch, t.name + ": payload is " + std::to_string(t.payload.size()) +
                                       " bytes, dims and type imply " + std::to_string(want));
    }
  }

  Layout layout;
  Sink counter(nullptr);
  const std::uint64_t header = put_header(counter, md, spec, layout);
  layout.data_offset = align_up(header, spec.alignment);
  std::uint64_t next = 0;
  std::uint64_t end = 0;
  for (const auto& t : spec.tensors) {
    const std::uint64_t off = t.offset ? *t.offset : align_up(next, spec.alignment);
    layout.offsets.push_back(off);
    next = off + t.payload.size();
    end = std::max(end, next);
  }
  layout.file_size = layout.data_offset + end;
  return layout;
}

void write(const WriteSpec& spec, std::ostream& out) {
  const Layout layout = plan_layout(spec);
  const Metadata md = effective_metadata(spec);
  Sink s(&out);
  put_header(s, md, spec, layout);
  s.pad_to(layout.data_offset);
  // Payloads in offset order so explicit offsets can be honored on a stream.
  std::vector<std::size_t> order(spec.tensors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return layout.offsets[a] < layout.offsets[b]; });
  for (std::size_t i : order) {
    const auto& p = spec.tensors[i].payload;
    const std::uint64_t at = layout.data_offset + layout.offsets[i];
    if (at < s.pos()) {
      // Overlapping explicit offsets: only the part past what is already
      // written can be appended on a stream.
      const std::uint64_t skip = s.pos() - at;
      if (skip < p.size()) s.raw(p.data() + skip, static_cast<std::size_t>(p.size() - skip));
      continue;
    }
    s.pad_to(at);
    s.raw(p.data(), p.size());
  }
  s.pad_to(layout.file_size);
  if (!out) fail(Errc::IoError, "write failed");
}

std::vector<std::byte> write(const WriteSpec& spec) {
  std::ostringstream out(std::ios::binary);
  write(spec, out);
  const std::string s = out.str();
  std::vector<std::byte> bytes(s.size());
  std::memcpy(bytes.data(), s.data(), s.size());
  return bytes;
}

void write_file(const WriteSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot create " + path.string());
  write(spec, out);
  out.flush();
  if (!out) fail(Errc::IoError, "write to " + path.string() + " failed");
}

}  // namespace omt::gguf
