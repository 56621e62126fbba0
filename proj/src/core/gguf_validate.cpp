#include <algorithm>

#include "omt/error.hpp"
#include "omt/gguf.hpp"

namespace omt::gguf {

ValidationReport validate(const GgufFile& file) {
  ValidationReport r;
  r.stats.tensor_count = file.tensors.size();
  r.stats.metadata_count = file.metadata.size();
  r.stats.file_bytes = file.total_size;
  r.stats.declared_bytes = file.tensors.empty() ? std::min(file.data_offset, file.total_size) : file.data_offset;

  auto add = [&](std::string code, std::string subject, std::string message) {
    r.violations.push_back({std::move(code), std::move(subject), std::move(message)});
  };

  if (file.data_offset % file.alignment != 0) {
    add("Misaligned", "data", "data region starts at " + std::to_string(file.data_offset));
  }

  struct Extent {
    std::uint64_t begin;
    std::uint64_t end;
    const std::string* name;
  };
  std::vector<Extent> extents;
  for (const auto& t : file.tensors) {
    if (t.offset % file.alignment != 0) {
      add("Misaligned", t.name,
          "offset " + std::to_string(t.offset) + " is not a multiple of " + std::to_string(file.alignment));
    }
    if (t.opaque()) continue;  // unknown geometry: nothing more to check
    const auto info = *quant::type_info(t.type);
    if (t.dims[0] % info.block_elems != 0) {
      add("BlockSize", t.name,
          "row length " + std::to_string(t.dims[0]) + " is not a multiple of the " + std::string(info.name) +
              " block of " + std::to_string(info.block_elems));
      continue;
    }
    const std::uint64_t size = t.byte_size();
    const std::uint64_t begin = file.data_offset + t.offset;
    const std::uint64_t end = begin + size;
    r.stats.declared_bytes = std::max(r.stats.declared_bytes, end);
    if (end > file.total_size || end < begin) {
      add("Truncated", t.name,
          "needs bytes up to " + std::to_string(end) + " but the file has " + std::to_string(file.total_size));
    }
    if (size > 0) extents.push_back({begin, end, &t.name});
  }

  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  // Sweep keeping the extent that reaches furthest, so every overlapping
  // pair is reported at least once.
  const Extent* reach = nullptr;
  for (const auto& e : extents) {
    if (reach && e.begin < reach->end) {
      add("Overlap", e.name->c_str(), "overlaps " + *reach->name);
    }
    if (!reach || e.end > reach->end) reach = &e;
  }
  return r;
}

}  // namespace omt::gguf
