#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparseprof/errors.hpp"

namespace sparseprof {

static_assert(std::endian::native == std::endian::little, "codec assumes a little-endian host");

/// Appends fixed-width little-endian fields.
class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto at = out_.size();
    out_.resize(at + sizeof(T));
    std::memcpy(out_.data() + at, &v, sizeof(T));
  }
  void pad(std::size_t n) { out_.insert(out_.end(), n, 0); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void tag(std::string_view magic) { out_.insert(out_.end(), magic.begin(), magic.end()); }
  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

  std::size_t size() const { return out_.size(); }

 private:
  std::vector<std::uint8_t>& out_;
};

/// Bounds-checked little-endian decoding. Offsets reported in errors are
/// relative to `base`, the position of the span within its file.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in, std::uint64_t base = 0) : in_(in), base_(base) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  /// Reads `n` pad bytes and rejects any that are nonzero.
  void zeros(std::size_t n) {
    auto at = offset();
    need(n);
    for (std::size_t i = 0; i < n; ++i)
      if (in_[pos_ + i] != 0) throw FormatError("nonzero padding", at + i);
    pos_ += n;
  }
  void expect_tag(std::string_view magic) {
    auto at = offset();
    need(magic.size());
    if (std::memcmp(in_.data() + pos_, magic.data(), magic.size()) != 0) throw FormatError("bad magic", at);
    pos_ += magic.size();
  }
  std::string str(std::size_t max_len = 1u << 20) {
    auto at = offset();
    auto n = get<std::uint32_t>();
    if (n > max_len) throw FormatError("string length out of range", at);
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::uint64_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  bool at_end() const { return pos_ == in_.size(); }
  void seek(std::size_t pos) {
    if (pos > in_.size()) throw FormatError("seek past end", base_ + in_.size());
    pos_ = pos;
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("truncated", offset());
  }

  std::span<const std::uint8_t> in_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

/// POSIX file with positioned I/O; concurrent pread/pwrite on disjoint
/// ranges from multiple threads is safe.
class File {
 public:
  enum class Mode { read, create };

  File(const std::filesystem::path& path, Mode mode);
  ~File();
  File(File&& o) noexcept : fd_(o.fd_), path_(std::move(o.path_)) { o.fd_ = -1; }
  File& operator=(File&&) = delete;
  File(const File&) = delete;

  void pwrite(std::span<const std::uint8_t> data, std::uint64_t offset) const;
  void pread(std::span<std::uint8_t> data, std::uint64_t offset) const;
  std::vector<std::uint8_t> read_range(std::uint64_t offset, std::uint64_t size) const;
  std::uint64_t size() const;
  void sync() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  int fd_ = -1;
  std::filesystem::path path_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

/// Output written under a temporary sibling name and renamed into place by
/// commit(). Destroying an uncommitted AtomicOutput removes the temporary.
class AtomicOutput {
 public:
  explicit AtomicOutput(std::filesystem::path final_path);
  ~AtomicOutput();
  AtomicOutput(AtomicOutput&&) noexcept;
  AtomicOutput(const AtomicOutput&) = delete;

  const std::filesystem::path& temp_path() const { return temp_; }
  const std::filesystem::path& final_path() const { return final_; }
  void commit();

 private:
  std::filesystem::path final_;
  std::filesystem::path temp_;
  bool done_ = false;
};

}  // namespace sparseprof
