#include "fedlite/event_log.h"

#include "fedlite/errors.h"

namespace fedlite {

nlohmann::json to_json(const LogEvent& e) {
  nlohmann::json j = {{"ts", e.ts},
                      {"round", e.round},
                      {"event", e.event},
                      {"learner_id", e.learner_id},
                      {"duration_ms", e.duration_ms}};
  for (const auto& [key, value] : e.extra.items()) j[key] = value;
  return j;
}

LogEvent event_from_json(const nlohmann::json& j) {
  LogEvent e;
  try {
    e.ts = j.at("ts").get<double>();
    e.round = j.at("round").get<uint64_t>();
    e.event = j.at("event").get<std::string>();
    e.learner_id = j.value("learner_id", "");
    e.duration_ms = j.value("duration_ms", 0.0);
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("bad event log entry: ") + ex.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "ts" && key != "round" && key != "event" && key != "learner_id" &&
        key != "duration_ms") {
      e.extra[key] = value;
    }
  }
  return e;
}

EventLog::EventLog(const std::string& path)
    : start_(std::chrono::steady_clock::now()), path_(path) {
  if (!path.empty()) {
    out_.open(path, std::ios::out | std::ios::trunc);
    if (!out_) throw IoFailure("cannot open event log " + path);
  }
}

double EventLog::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
      .count();
}

void EventLog::record(LogEvent event) {
  std::lock_guard lock(mu_);
  if (out_.is_open()) {
    out_ << to_json(event).dump() << '\n';
    out_.flush();
  }
  events_.push_back(std::move(event));
}

void EventLog::record(uint64_t round, std::string event, std::string learner_id,
                      double duration_ms, nlohmann::json extra) {
  record(LogEvent{now(), round, std::move(event), std::move(learner_id),
                  duration_ms, std::move(extra)});
}

std::vector<LogEvent> EventLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<LogEvent> read_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read event log " + path);
  std::vector<LogEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError("event log " + path + ": " + ex.what());
    }
    out.push_back(event_from_json(j));
  }
  return out;
}

}  // namespace fedlite
