#include "rollcall/event_log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>

#include "rollcall/detail/text.hpp"

namespace rollcall {

std::string_view to_string(LogKind kind) {
  switch (kind) {
    case LogKind::Accept: return "ACCEPT";
    case LogKind::Reject: return "REJECT";
    case LogKind::Survey: return "SURVEY";
    case LogKind::Close: return "CLOSE";
  }
  return "REJECT";
}

std::string format_log_line(const LogRecord& r) {
  return std::to_string(r.at_ms) + " " + std::string(to_string(r.kind)) + " " + r.payload;
}

std::optional<LogRecord> parse_log_line(std::string_view line) {
  const auto sp1 = line.find(' ');
  if (sp1 == std::string_view::npos) return std::nullopt;
  const auto sp2 = line.find(' ', sp1 + 1);
  if (sp2 == std::string_view::npos) return std::nullopt;

  const auto at = detail::parse_int(line.substr(0, sp1));
  if (!at) return std::nullopt;
  const auto word = line.substr(sp1 + 1, sp2 - sp1 - 1);
  LogRecord r{*at, LogKind::Accept, std::string(line.substr(sp2 + 1))};
  if (word == "ACCEPT") r.kind = LogKind::Accept;
  else if (word == "REJECT") r.kind = LogKind::Reject;
  else if (word == "SURVEY") r.kind = LogKind::Survey;
  else if (word == "CLOSE") r.kind = LogKind::Close;
  else return std::nullopt;
  return r;
}

std::vector<LogRecord> read_log(std::istream& in) {
  std::vector<LogRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (in.eof()) break;  // no trailing newline: torn write
    auto record = parse_log_line(line);
    if (!record) throw LogError("malformed log line " + std::to_string(line_no));
    out.push_back(std::move(*record));
  }
  return out;
}

std::vector<LogRecord> read_log_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LogError("cannot open log file " + path.string());
  return read_log(in);
}

std::string MemoryEventLog::text() const {
  std::string out;
  for (const auto& r : records_) {
    out += format_log_line(r);
    out += '\n';
  }
  return out;
}

FileEventLog::FileEventLog(const std::filesystem::path& path, bool sync) : sync_(sync) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw LogError("cannot open log " + path.string() + ": " + std::strerror(errno));
  try {
    drop_torn_tail();
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

void FileEventLog::drop_torn_tail() {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) throw LogError(std::string("fstat failed: ") + std::strerror(errno));
  off_t end = st.st_size;
  char buf[512];
  while (end > 0) {
    const off_t start = end > static_cast<off_t>(sizeof buf) ? end - static_cast<off_t>(sizeof buf) : 0;
    const auto want = static_cast<std::size_t>(end - start);
    if (::pread(fd_, buf, want, start) != static_cast<ssize_t>(want))
      throw LogError(std::string("log read failed: ") + std::strerror(errno));
    for (std::size_t i = want; i > 0; --i) {
      if (buf[i - 1] == '\n') {
        const off_t keep = start + static_cast<off_t>(i);
        if (keep != st.st_size && ::ftruncate(fd_, keep) != 0)
          throw LogError(std::string("truncate failed: ") + std::strerror(errno));
        return;
      }
    }
    end = start;
  }
  if (st.st_size > 0 && ::ftruncate(fd_, 0) != 0)
    throw LogError(std::string("truncate failed: ") + std::strerror(errno));
}

FileEventLog::~FileEventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void FileEventLog::append(const LogRecord& record) {
  std::string line = format_log_line(record);
  line.push_back('\n');
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    const auto n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw LogError(std::string("log write failed: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (sync_ && ::fsync(fd_) != 0) throw LogError(std::string("fsync failed: ") + std::strerror(errno));
}

}  // namespace rollcall
