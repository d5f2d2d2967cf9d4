#pragma once

// Little-endian byte encoding shared by the embedding and checkpoint
// containers. Independent of host byte order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace protex::detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);

  const std::string& str() const noexcept { return buf_; }
  std::string take() noexcept { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Cursor over an in-memory blob. Reads past the end throw CountMismatch
/// naming `source`.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source)
      : data_(data), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  const std::string& source() const noexcept { return source_; }

 private:
  void need(std::size_t n) const;

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string source_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view data);

}  // namespace protex::detail
