#ifndef FEDLITE_METRICS_H_
#define FEDLITE_METRICS_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlite/event_log.h"

namespace fedlite {

// Controller event names the metrics are computed from.
namespace ev {
inline constexpr std::string_view kRoundStart = "round_start";
inline constexpr std::string_view kTrainAck = "train_ack";
inline constexpr std::string_view kTrainDispatchFailed = "train_dispatch_failed";
inline constexpr std::string_view kTaskCompleted = "task_completed";
inline constexpr std::string_view kTrainTimeout = "train_timeout";
inline constexpr std::string_view kAggregationBegin = "aggregation_begin";
inline constexpr std::string_view kAggregationEnd = "aggregation_end";
inline constexpr std::string_view kEvalRequestSent = "eval_request_sent";
inline constexpr std::string_view kEvalReply = "eval_reply";
inline constexpr std::string_view kEvalFailed = "eval_failed";
inline constexpr std::string_view kRoundEnd = "round_end";
inline constexpr std::string_view kRoundAborted = "round_aborted";
}  // namespace ev

// Wall-clock seconds of one federation round.
struct RoundMetrics {
  uint64_t round = 0;
  double train_task_dispatch_s = 0;
  double train_round_s = 0;
  double aggregation_s = 0;
  double eval_task_dispatch_s = 0;
  double eval_round_s = 0;
  double federation_round_s = 0;

  bool operator==(const RoundMetrics&) const = default;
};

// Metric names in CSV order.
inline constexpr std::array<std::string_view, 6> kMetricNames = {
    "train_task_dispatch", "train_round", "aggregation",
    "eval_task_dispatch",  "eval_round",  "federation_round"};

double metric_value(const RoundMetrics& m, std::string_view name);

// Absolute timestamps of one round, the inputs of RoundMetrics.
struct RoundTimeline {
  double start = 0;
  double train_dispatch_end = 0;  // last Ack (or dispatch failure)
  double train_end = 0;           // last completion (or train timeout)
  double aggregation_begin = 0;
  double aggregation_end = 0;
  double eval_dispatch_end = 0;   // last EvaluateModel issued
  double eval_end = 0;            // last EvalReply (or eval failure)
};

RoundMetrics metrics_from_timeline(uint64_t round, const RoundTimeline& t);

// Extracts round `round` from the log. Throws IncompleteRound when a required
// event is missing (including a round with no EvalReply at all).
RoundTimeline round_timeline(std::span<const LogEvent> events, uint64_t round);
RoundMetrics compute_round_metrics(std::span<const LogEvent> events, uint64_t round);

// Metrics for every round that has a round_end event, in round order.
std::vector<RoundMetrics> compute_all_rounds(std::span<const LogEvent> events);

// start <= dispatch end <= train end <= aggregation end <= eval dispatch end
// <= eval end.
bool timeline_monotone(const RoundTimeline& t);

struct Summary {
  double mean = 0;
  double median = 0;
  double p95 = 0;  // linear interpolation between closest ranks
};

struct RunSummary {
  std::vector<uint64_t> rounds;  // rounds the statistics cover
  std::map<std::string, Summary, std::less<>> metrics;
};

Summary summarize(std::vector<double> values);

// With `exclude_warmup`, the lowest-numbered round is dropped unless it is the
// only one. Throws EmptyInput on an empty list.
RunSummary aggregate_run(std::span<const RoundMetrics> rounds, bool exclude_warmup);

// One CSV row. `value` is the seconds figure, or the error text on a
// metric == "failed" row.
struct CsvRow {
  std::string run_id;
  std::string framework;
  uint64_t model_params = 0;
  uint32_t learners = 0;
  uint64_t round = 0;
  std::string metric;
  std::string value;

  double seconds() const;
  bool failed() const { return metric == "failed"; }
  bool operator==(const CsvRow&) const = default;
};

inline constexpr std::array<std::string_view, 7> kCsvColumns = {
    "run_id", "framework", "model_params", "learners", "round", "metric", "seconds"};

std::vector<CsvRow> metric_rows(const std::string& run_id,
                                const std::string& framework,
                                uint64_t model_params, uint32_t learners,
                                std::span<const RoundMetrics> rounds);

std::string format_seconds(double seconds);

// Appends rows, writing the header first when the file is new or empty.
void append_csv(const std::string& path, std::span<const CsvRow> rows);
// Throws SchemaError on a wrong header, wrong column count, a bad number,
// or a file without data rows.
std::vector<CsvRow> read_csv(const std::string& path);
std::vector<CsvRow> parse_csv(std::string_view text);

}  // namespace fedlite

#endif  // FEDLITE_METRICS_H_
