#include "fedlite/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fedlite/errors.h"

namespace fedlite {

double metric_value(const RoundMetrics& m, std::string_view name) {
  if (name == "train_task_dispatch") return m.train_task_dispatch_s;
  if (name == "train_round") return m.train_round_s;
  if (name == "aggregation") return m.aggregation_s;
  if (name == "eval_task_dispatch") return m.eval_task_dispatch_s;
  if (name == "eval_round") return m.eval_round_s;
  if (name == "federation_round") return m.federation_round_s;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

RoundMetrics metrics_from_timeline(uint64_t round, const RoundTimeline& t) {
  RoundMetrics m;
  m.round = round;
  m.train_task_dispatch_s = t.train_dispatch_end - t.start;
  m.train_round_s = t.train_end - t.start;
  m.aggregation_s = t.aggregation_end - t.aggregation_begin;
  m.eval_task_dispatch_s = t.eval_dispatch_end - t.aggregation_end;
  m.eval_round_s = t.eval_end - t.aggregation_end;
  m.federation_round_s = t.eval_end - t.start;
  return m;
}

RoundTimeline round_timeline(std::span<const LogEvent> events, uint64_t round) {
  constexpr double kUnset = -std::numeric_limits<double>::infinity();
  std::optional<double> start, agg_begin, agg_end;
  double dispatch_end = kUnset, train_end = kUnset, eval_sent = kUnset,
         eval_end = kUnset;
  bool any_reply = false;
  for (const auto& e : events) {
    if (e.round != round) continue;
    const std::string_view name = e.event;
    if (name == ev::kRoundStart) {
      start = e.ts;
    } else if (name == ev::kTrainAck || name == ev::kTrainDispatchFailed) {
      dispatch_end = std::max(dispatch_end, e.ts);
    } else if (name == ev::kTaskCompleted || name == ev::kTrainTimeout) {
      train_end = std::max(train_end, e.ts);
    } else if (name == ev::kAggregationBegin) {
      agg_begin = e.ts;
    } else if (name == ev::kAggregationEnd) {
      agg_end = e.ts;
    } else if (name == ev::kEvalRequestSent) {
      eval_sent = std::max(eval_sent, e.ts);
    } else if (name == ev::kEvalReply || name == ev::kEvalFailed) {
      any_reply = any_reply || name == ev::kEvalReply;
      eval_end = std::max(eval_end, e.ts);
    }
  }
  const std::string where = " in round " + std::to_string(round);
  if (!start) throw IncompleteRound("no round_start" + where);
  if (dispatch_end == kUnset) throw IncompleteRound("no train Ack" + where);
  if (train_end == kUnset) throw IncompleteRound("no task completion" + where);
  if (!agg_begin || !agg_end) throw IncompleteRound("no aggregation" + where);
  if (eval_sent == kUnset) throw IncompleteRound("no EvaluateModel sent" + where);
  if (!any_reply) throw IncompleteRound("no EvalReply" + where);
  return RoundTimeline{*start,  dispatch_end, train_end, *agg_begin,
                       *agg_end, eval_sent,   eval_end};
}

RoundMetrics compute_round_metrics(std::span<const LogEvent> events, uint64_t round) {
  return metrics_from_timeline(round, round_timeline(events, round));
}

std::vector<RoundMetrics> compute_all_rounds(std::span<const LogEvent> events) {
  std::set<uint64_t> rounds;
  for (const auto& e : events) {
    if (e.event == ev::kRoundEnd) rounds.insert(e.round);
  }
  std::vector<RoundMetrics> out;
  for (uint64_t r : rounds) out.push_back(compute_round_metrics(events, r));
  return out;
}

bool timeline_monotone(const RoundTimeline& t) {
  return t.start <= t.train_dispatch_end && t.train_dispatch_end <= t.train_end &&
         t.train_end <= t.aggregation_begin &&
         t.aggregation_begin <= t.aggregation_end &&
         t.aggregation_end <= t.eval_dispatch_end &&
         t.eval_dispatch_end <= t.eval_end;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("no values to summarize");
  double sum = 0;
  for (double v : values) sum += v;
  std::sort(values.begin(), values.end());
  return Summary{sum / static_cast<double>(values.size()),
                 quantile_sorted(values, 0.5), quantile_sorted(values, 0.95)};
}

RunSummary aggregate_run(std::span<const RoundMetrics> rounds, bool exclude_warmup) {
  if (rounds.empty()) throw EmptyInput("no rounds to aggregate");
  std::vector<RoundMetrics> used(rounds.begin(), rounds.end());
  std::sort(used.begin(), used.end(),
            [](const auto& a, const auto& b) { return a.round < b.round; });
  if (exclude_warmup && used.size() > 1) used.erase(used.begin());
  RunSummary out;
  for (const auto& m : used) out.rounds.push_back(m.round);
  for (std::string_view name : kMetricNames) {
    std::vector<double> values;
    for (const auto& m : used) values.push_back(metric_value(m, name));
    out.metrics.emplace(std::string(name), summarize(std::move(values)));
  }
  return out;
}

double CsvRow::seconds() const {
  if (failed()) throw SchemaError("failed row has no seconds value");
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw SchemaError("seconds '" + value + "' is not a number");
  }
  return v;
}

std::string format_seconds(double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", seconds);
  return buf;
}

std::vector<CsvRow> metric_rows(const std::string& run_id,
                                const std::string& framework,
                                uint64_t model_params, uint32_t learners,
                                std::span<const RoundMetrics> rounds) {
  std::vector<CsvRow> rows;
  for (const auto& m : rounds) {
    for (std::string_view name : kMetricNames) {
      rows.push_back(CsvRow{run_id, framework, model_params, learners, m.round,
                            std::string(name), format_seconds(metric_value(m, name))});
    }
  }
  return rows;
}

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// RFC 4180 records. Throws SchemaError on an unterminated quote.
std::vector<std::vector<std::string>> split_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      record.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (in_quotes) throw SchemaError("unterminated quoted field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

uint64_t parse_uint(const std::string& s, const char* column) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw SchemaError(std::string("column ") + column + ": '" + s +
                      "' is not a non-negative integer");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw SchemaError(std::string("column ") + column + ": '" + s + "' out of range");
  }
}

}  // namespace

void append_csv(const std::string& path, std::span<const CsvRow> rows) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const bool fresh = !fs::exists(path, ec) || fs::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoFailure("cannot write " + path);
  if (fresh) {
    for (size_t i = 0; i < kCsvColumns.size(); ++i) {
      out << (i ? "," : "") << kCsvColumns[i];
    }
    out << '\n';
  }
  for (const auto& r : rows) {
    out << quote(r.run_id) << ',' << quote(r.framework) << ',' << r.model_params
        << ',' << r.learners << ',' << r.round << ',' << quote(r.metric) << ','
        << quote(r.value) << '\n';
  }
  if (!out) throw IoFailure("cannot write " + path);
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  const auto records = split_records(text);
  if (records.empty()) throw SchemaError("CSV is empty");
  const auto& header = records.front();
  if (header.size() != kCsvColumns.size() ||
      !std::equal(header.begin(), header.end(), kCsvColumns.begin())) {
    throw SchemaError("CSV header does not match the expected columns");
  }
  std::vector<CsvRow> rows;
  for (size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i];
    if (f.size() != kCsvColumns.size()) {
      throw SchemaError("CSV line " + std::to_string(i + 1) + " has " +
                        std::to_string(f.size()) + " columns");
    }
    CsvRow row;
    row.run_id = f[0];
    row.framework = f[1];
    row.model_params = parse_uint(f[2], "model_params");
    const uint64_t learners = parse_uint(f[3], "learners");
    if (learners > UINT32_MAX) throw SchemaError("learners out of range");
    row.learners = static_cast<uint32_t>(learners);
    row.round = parse_uint(f[4], "round");
    row.metric = f[5];
    row.value = f[6];
    if (!row.failed()) {
      if (std::find(kMetricNames.begin(), kMetricNames.end(), row.metric) ==
          kMetricNames.end()) {
        throw SchemaError("unknown metric '" + row.metric + "'");
      }
      row.seconds();  // validates
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw SchemaError("CSV has no data rows");
  return rows;
}

std::vector<CsvRow> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_csv(text.str());
}

}  // namespace fedlite
