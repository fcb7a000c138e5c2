#ifndef FEDLITE_EVENT_LOG_H_
#define FEDLITE_EVENT_LOG_H_

#include <chrono>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fedlite {

// One structured log line. `ts` is seconds on the owning component's
// monotonic clock, `round` is 0 for events outside any round.
struct LogEvent {
  double ts = 0;
  uint64_t round = 0;
  std::string event;
  std::string learner_id;
  double duration_ms = 0;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const LogEvent& e);
LogEvent event_from_json(const nlohmann::json& j);

// Append-only event log. Keeps every event in memory and, when a path is
// given, also writes one JSON object per line, flushed per event.
class EventLog {
 public:
  explicit EventLog(const std::string& path = "");

  // Seconds since the log was created.
  double now() const;
  void record(LogEvent event);
  // Convenience: stamps now().
  void record(uint64_t round, std::string event, std::string learner_id = "",
              double duration_ms = 0,
              nlohmann::json extra = nlohmann::json::object());

  std::vector<LogEvent> events() const;
  const std::string& path() const { return path_; }

 private:
  std::chrono::steady_clock::time_point start_;
  std::string path_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::vector<LogEvent> events_;
};

// Reads a JSON-lines log. Throws IoFailure / SchemaError.
std::vector<LogEvent> read_event_log(const std::string& path);

}  // namespace fedlite

#endif  // FEDLITE_EVENT_LOG_H_
