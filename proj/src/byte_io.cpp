#include "sparseprof/byte_io.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <system_error>

namespace sparseprof {

namespace {

std::string sys_msg(const char* what, const std::filesystem::path& p) {
  return std::string(what) + " " + p.string() + ": " + std::generic_category().message(errno);
}

}  // namespace

File::File(const std::filesystem::path& path, Mode mode) : path_(path) {
  int flags = mode == Mode::read ? O_RDONLY : (O_RDWR | O_CREAT | O_TRUNC);
  fd_ = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError(sys_msg("cannot open", path));
}

File::~File() {
  if (fd_ >= 0) ::close(fd_);
}

void File::pwrite(std::span<const std::uint8_t> data, std::uint64_t offset) const {
  std::size_t done = 0;
  while (done < data.size()) {
    auto n = ::pwrite(fd_, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(sys_msg("write failed on", path_));
    }
    done += static_cast<std::size_t>(n);
  }
}

void File::pread(std::span<std::uint8_t> data, std::uint64_t offset) const {
  std::size_t done = 0;
  while (done < data.size()) {
    auto n = ::pread(fd_, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(sys_msg("read failed on", path_));
    }
    if (n == 0) throw FormatError("truncated", offset + done);
    done += static_cast<std::size_t>(n);
  }
}

std::vector<std::uint8_t> File::read_range(std::uint64_t offset, std::uint64_t size) const {
  if (offset > this->size() || size > this->size() - offset) throw FormatError("range past end of file", offset);
  std::vector<std::uint8_t> buf(size);
  pread(buf, offset);
  return buf;
}

std::uint64_t File::size() const {
  struct stat st{};
  if (::fstat(fd_, &st) != 0) throw IoError(sys_msg("cannot stat", path_));
  return static_cast<std::uint64_t>(st.st_size);
}

void File::sync() const {
  if (::fsync(fd_) != 0) throw IoError(sys_msg("fsync failed on", path_));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  File f(path, File::Mode::read);
  return f.read_range(0, f.size());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  File f(path, File::Mode::create);
  f.pwrite(data, 0);
}

AtomicOutput::AtomicOutput(std::filesystem::path final_path) : final_(std::move(final_path)) {
  static std::atomic<unsigned> counter{0};
  temp_ = final_;
  temp_ += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
}

AtomicOutput::AtomicOutput(AtomicOutput&& o) noexcept
    : final_(std::move(o.final_)), temp_(std::move(o.temp_)), done_(o.done_) {
  o.done_ = true;
}

AtomicOutput::~AtomicOutput() {
  if (!done_) {
    std::error_code ec;
    std::filesystem::remove(temp_, ec);
  }
}

void AtomicOutput::commit() {
  std::error_code ec;
  std::filesystem::rename(temp_, final_, ec);
  if (ec) throw IoError("cannot rename " + temp_.string() + " to " + final_.string() + ": " + ec.message());
  done_ = true;
}

}  // namespace sparseprof
