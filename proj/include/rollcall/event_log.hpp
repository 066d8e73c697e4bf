#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rollcall/experiment.hpp"

namespace rollcall {

enum class LogKind { Accept, Reject, Survey, Close };

std::string_view to_string(LogKind kind);

/// One persisted counter event: `<arrival_ms> <KIND> <payload>`.
/// ACCEPT/REJECT/SURVEY payloads are raw wire lines; CLOSE payloads are
/// `<kind> <index> <count>`.
struct LogRecord {
  Millis at_ms = 0;
  LogKind kind = LogKind::Accept;
  std::string payload;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

std::string format_log_line(const LogRecord& record);
std::optional<LogRecord> parse_log_line(std::string_view line);

/// Reads complete lines only; a final line without '\n' is a torn write
/// and is dropped.
std::vector<LogRecord> read_log(std::istream& in);
std::vector<LogRecord> read_log_file(const std::filesystem::path& path);

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only destination for counter events. append() returns only once
/// the line is as durable as the sink can make it.
class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void append(const LogRecord& record) = 0;
};

class MemoryEventLog final : public EventSink {
 public:
  void append(const LogRecord& record) override { records_.push_back(record); }
  const std::vector<LogRecord>& records() const { return records_; }
  std::string text() const;

 private:
  std::vector<LogRecord> records_;
};

/// O_APPEND file; each record is written with a single write(2) and, when
/// sync is on, fsync'd before append returns. Opening an existing file cuts
/// off a torn final line so new records start on a fresh line.
class FileEventLog final : public EventSink {
 public:
  explicit FileEventLog(const std::filesystem::path& path, bool sync = true);
  ~FileEventLog() override;
  FileEventLog(const FileEventLog&) = delete;
  FileEventLog& operator=(const FileEventLog&) = delete;

  void append(const LogRecord& record) override;

 private:
  void drop_torn_tail();

  int fd_ = -1;
  bool sync_;
};

}  // namespace rollcall
