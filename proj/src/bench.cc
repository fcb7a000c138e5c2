#include "fedlite/bench.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "fedlite/model_engine.h"

namespace fedlite {
namespace fs = std::filesystem;

void SweepSpec::validate() const {
  if (learner_counts.empty() || model_sizes.empty() || parallel_agg.empty()) {
    throw ConfigError("sweep: learners, sizes and parallel lists must be non-empty");
  }
  for (uint32_t n : learner_counts) {
    if (n == 0) throw ConfigError("sweep: learner counts must be positive");
  }
  for (const auto& s : model_sizes) architecture_for_size(s);
  if (rounds == 0) throw ConfigError("sweep: rounds must be positive");
  if (out_dir.empty()) throw ConfigError("sweep: an output directory is required");
}

std::string configuration_label(bool parallel) {
  return parallel ? "fedlite+parallel" : "fedlite";
}

size_t parallel_worker_count() {
  return std::max<size_t>(2, std::thread::hardware_concurrency());
}

std::string size_label(uint64_t model_params) {
  for (const char* s : {"100k", "1M", "10M"}) {
    if (parameter_count(architecture_for_size(s)) == model_params) return s;
  }
  return std::to_string(model_params);
}

SweepResult run_sweep(const SweepSpec& spec) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(fs::path(spec.out_dir) / "runs", ec);
  if (ec) throw IoFailure("cannot create " + spec.out_dir + ": " + ec.message());
  SweepResult result;
  result.csv_path = (fs::path(spec.out_dir) / "results.csv").string();
  fs::remove(result.csv_path, ec);

  for (bool parallel : spec.parallel_agg) {
    for (const auto& size : spec.model_sizes) {
      for (uint32_t learners : spec.learner_counts) {
        CellResult cell;
        cell.framework = configuration_label(parallel);
        cell.learners = learners;
        cell.model_size = size;
        cell.model_params = parameter_count(architecture_for_size(size));
        cell.run_id = cell.framework + "-" + size + "-" + std::to_string(learners);

        FederationEnvironment env;
        env.learners = learners;
        env.model_size = size;
        env.config.max_rounds = spec.rounds;
        env.config.seed = spec.seed;
        env.config.aggregation_workers = parallel ? parallel_worker_count() : 1;
        env.spawn = spec.spawn;
        env.bin_dir = spec.bin_dir;
        env.run_id = cell.run_id;
        env.framework = cell.framework;
        env.run_dir = (fs::path(spec.out_dir) / "runs" / cell.run_id).string();
        fs::remove_all(env.run_dir, ec);
        if (spec.customize) spec.customize(env);

        std::vector<CsvRow> rows;
        try {
          const auto run = run_federation(env, spec.cell_timeout_s);
          if (!run.completed) {
            throw Error("did not finish within " + std::to_string(spec.cell_timeout_s) + " s");
          }
          if (run.rounds.size() != spec.rounds) {
            throw Error("measured " + std::to_string(run.rounds.size()) + " of " +
                        std::to_string(spec.rounds) + " rounds");
          }
          cell.rounds = run.rounds;
          for (const auto& e : run.events) {
            if (e.event == ev::kAggregationEnd) {
              cell.round_digests.push_back(e.extra.at("model_digest").get<uint64_t>());
            }
          }
          rows = run.rows;
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
          rows = {CsvRow{cell.run_id, cell.framework, cell.model_params, learners, 0,
                         "failed", cell.error}};
        }
        append_csv(result.csv_path, rows);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

std::map<CellKey, double> metric_means(const std::vector<CsvRow>& rows,
                                       std::string_view metric) {
  // Lowest round per run: the warm-up round.
  std::map<std::string, std::set<uint64_t>> rounds_of;
  for (const auto& r : rows) {
    if (!r.failed() && r.metric == metric) rounds_of[r.run_id].insert(r.round);
  }
  std::map<CellKey, std::pair<double, size_t>> sums;
  for (const auto& r : rows) {
    if (r.failed() || r.metric != metric) continue;
    const auto& rounds = rounds_of[r.run_id];
    if (rounds.size() > 1 && r.round == *rounds.begin()) continue;
    auto& [sum, n] = sums[CellKey{r.framework, r.model_params, r.learners}];
    sum += r.seconds();
    ++n;
  }
  std::map<CellKey, double> out;
  for (const auto& [key, sn] : sums) out[key] = sn.first / static_cast<double>(sn.second);
  return out;
}

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b"};

std::string fmt(double v, int precision = 1) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// x: learner count (categorical, evenly spaced); y: seconds, log10 axis.
std::string render_svg(const std::string& title,
                       const std::map<std::string, std::map<uint32_t, double>>& series) {
  constexpr double kW = 640, kH = 420, kLeft = 80, kRight = 170, kTop = 40, kBottom = 60;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::set<uint32_t> xs;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [_, points] : series) {
    for (const auto& [x, y] : points) {
      xs.insert(x);
      if (y > 0) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      }
    }
  }
  if (!(lo <= hi)) lo = hi = 1;
  const int dlo = static_cast<int>(std::floor(std::log10(lo)));
  int dhi = static_cast<int>(std::ceil(std::log10(hi)));
  if (dhi == dlo) ++dhi;
  const std::vector<uint32_t> xv(xs.begin(), xs.end());
  auto px = [&](uint32_t x) {
    const size_t i = std::find(xv.begin(), xv.end(), x) - xv.begin();
    return xv.size() == 1 ? kLeft + pw / 2 : kLeft + pw * static_cast<double>(i) / (xv.size() - 1);
  };
  auto py = [&](double y) { return kTop + ph * (dhi - std::log10(y)) / (dhi - dlo); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kLeft + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << escape_xml(title) << "</text>\n";
  for (int d = dlo; d <= dhi; ++d) {
    const double y = py(std::pow(10.0, d));
    s << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(y) << "\" x2=\"" << kLeft + pw
      << "\" y2=\"" << fmt(y) << "\" stroke=\"#ddd\"/>\n"
      << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(y + 4)
      << "\" text-anchor=\"end\">1e" << d << "</text>\n";
  }
  for (uint32_t x : xv) {
    s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << kTop + ph + 18
      << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\""
    << ph << "\" fill=\"none\" stroke=\"black\"/>\n"
    << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 18
    << "\" text-anchor=\"middle\">learners</text>\n"
    << "<text transform=\"translate(20," << kTop + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">seconds (log scale)</text>\n";
  size_t k = 0;
  for (const auto& [label, points] : series) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::string path;
    for (const auto& [x, y] : points) {
      if (y <= 0) continue;
      path += fmt(px(x)) + "," + fmt(py(y)) + " ";
      s << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3.5\" fill=\""
        << color << "\"/>\n";
    }
    s << "<polyline points=\"" << path << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    const double ly = kTop + 10 + 20.0 * k;
    s << "<line x1=\"" << kLeft + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 32
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(label)
      << "</text>\n";
    ++k;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

PlotOutput plot_results(const std::string& csv_path, const std::string& out_dir) {
  const auto rows = read_csv(csv_path);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create " + out_dir + ": " + ec.message());

  std::set<uint64_t> sizes;
  std::set<std::string> frameworks;
  std::set<uint32_t> learner_counts;
  std::map<std::tuple<std::string, uint64_t, uint32_t>, std::string> failures;
  for (const auto& r : rows) {
    sizes.insert(r.model_params);
    frameworks.insert(r.framework);
    learner_counts.insert(r.learners);
    if (r.failed()) failures[{r.framework, r.model_params, r.learners}] = r.value;
  }

  PlotOutput out;
  for (auto metric : kMetricNames) {
    const auto means = metric_means(rows, metric);
    for (uint64_t params : sizes) {
      std::map<std::string, std::map<uint32_t, double>> series;
      for (const auto& [key, mean] : means) {
        if (key.model_params == params) series[key.framework][key.learners] = mean;
      }
      if (series.empty()) continue;
      const auto path =
          (fs::path(out_dir) / (size_label(params) + "_" + std::string(metric) + ".svg"))
              .string();
      std::ofstream f(path);
      if (!f) throw IoFailure("cannot write " + path);
      f << render_svg(std::string(metric) + " (" + size_label(params) + " parameters)", series);
      out.plots.push_back(path);
    }
  }

  // Mean federation round per cell, warm-up excluded; failed cells are N/A.
  const auto means = metric_means(rows, "federation_round");
  std::ostringstream t;
  t << "mean federation_round seconds (round 1 excluded)\n";
  for (uint64_t params : sizes) {
    t << "\nmodel " << size_label(params) << " (" << params << " parameters)\n";
    t << "learners";
    for (const auto& fw : frameworks) t << "\t" << fw;
    t << "\n";
    for (uint32_t n : learner_counts) {
      t << n;
      for (const auto& fw : frameworks) {
        const auto it = means.find(CellKey{fw, params, n});
        if (it != means.end()) {
          t << "\t" << format_seconds(it->second);
        } else {
          t << "\t" << (failures.count({fw, params, n}) ? "N/A" : "-");
        }
      }
      t << "\n";
    }
  }
  out.table = (fs::path(out_dir) / "table.txt").string();
  std::ofstream f(out.table);
  if (!f) throw IoFailure("cannot write " + out.table);
  f << t.str();
  return out;
}

}  // namespace fedlite
