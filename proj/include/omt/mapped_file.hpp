#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace omt {

// Random-access readable bytes backing a parsed model file.
class ByteRegion {
 public:
  virtual ~ByteRegion() = default;
  virtual std::span<const std::byte> bytes() const noexcept = 0;
};

// Read-only, demand-paged mapping of a whole file.
class MappedFile final : public ByteRegion {
 public:
  explicit MappedFile(const std::filesystem::path& path);
  ~MappedFile() override;
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::byte> bytes() const noexcept override { return {data_, size_}; }

 private:
  const std::byte* data_ = nullptr;
  std::size_t size_ = 0;
};

class OwnedBytes final : public ByteRegion {
 public:
  explicit OwnedBytes(std::vector<std::byte> data) : data_(std::move(data)) {}
  std::span<const std::byte> bytes() const noexcept override { return data_; }

 private:
  std::vector<std::byte> data_;
};

// Non-owning view; the caller keeps the memory alive for the file's lifetime.
class BorrowedBytes final : public ByteRegion {
 public:
  explicit BorrowedBytes(std::span<const std::byte> data) : data_(data) {}
  std::span<const std::byte> bytes() const noexcept override { return data_; }

 private:
  std::span<const std::byte> data_;
};

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

}  // namespace omt
