#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lastshot/matrix.hpp"

namespace lastshot {

/// Mean metric with a normal-approximation 95% interval over tasks.
struct EvalReport {
  std::string metric;  // "accuracy" or "mse"
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample_std / sqrt(n)
  std::size_t n_tasks = 0;
  std::vector<double> per_task;  // retained when requested
  std::string config_hash;

  static EvalReport from_values(const std::string& metric,
                                const std::vector<double>& values,
                                bool retain = true) {
    if (values.empty()) throw ConfigError("EvalReport: needs >= 1 task");
    EvalReport r;
    r.metric = metric;
    r.n_tasks = values.size();
    double s = 0.0;
    for (double v : values) s += v;
    r.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - r.mean) * (v - r.mean);
      double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
      r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
    }
    if (retain) r.per_task = values;
    return r;
  }
};

/// One results.csv line; column set is fixed.
struct ResultRow {
  std::string run_id;
  std::string config_hash;
  std::string learner;
  std::string teacher;
  int way = 0;
  int shot = 0;
  int queries_train = 0;
  double lambda = 0.0;
  double tau = 0.0;
  std::string mode;
  std::string split;
  std::string metric;
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n_tasks = 0;
  std::uint64_t seed = 0;
  std::int64_t wall_ms = 0;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kResultsHeader =
    "run_id,config_hash,learner,teacher,C,K,Q_train,lambda,tau,mode,split,"
    "metric,mean,ci95,n_tasks,seed,wall_ms";

inline std::string result_row_line(const ResultRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.config_hash << ',' << r.learner << ','
     << r.teacher << ',' << r.way << ',' << r.shot << ',' << r.queries_train
     << ',' << format_double(r.lambda) << ',' << format_double(r.tau) << ','
     << r.mode << ',' << r.split << ',' << r.metric << ','
     << format_double(r.mean) << ',' << format_double(r.ci95) << ','
     << r.n_tasks << ',' << r.seed << ',' << r.wall_ms;
  return os.str();
}

inline void emit_results(const std::vector<ResultRow>& rows,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("emit_results: cannot open " + path);
  out << kResultsHeader << '\n';
  for (const ResultRow& r : rows) out << result_row_line(r) << '\n';
  out.close();
  if (!out) throw IoError("emit_results: write failed for " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<ResultRow> parse_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_results: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw IoError("parse_results: bad header in " + path);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 17) throw IoError("parse_results: bad row in " + path);
    ResultRow r;
    r.run_id = f[0];
    r.config_hash = f[1];
    r.learner = f[2];
    r.teacher = f[3];
    r.way = std::stoi(f[4]);
    r.shot = std::stoi(f[5]);
    r.queries_train = std::stoi(f[6]);
    r.lambda = std::stod(f[7]);
    r.tau = std::stod(f[8]);
    r.mode = f[9];
    r.split = f[10];
    r.metric = f[11];
    r.mean = std::stod(f[12]);
    r.ci95 = std::stod(f[13]);
    r.n_tasks = std::stoull(f[14]);
    r.seed = std::stoull(f[15]);
    r.wall_ms = std::stoll(f[16]);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Plot-data series: one (x, mean, ci95) point per line, tab separated.
struct PlotPoint {
  std::string series;
  double x = 0.0;
  double mean = 0.0;
  double ci95 = 0.0;
};

inline void emit_plotdata(const std::vector<PlotPoint>& points,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("emit_plotdata: cannot open " + path);
  out << "series\tx\tmean\tci95\n";
  for (const PlotPoint& p : points)
    out << p.series << '\t' << format_double(p.x) << '\t'
        << format_double(p.mean) << '\t' << format_double(p.ci95) << '\n';
  out.close();
  if (!out) throw IoError("emit_plotdata: write failed for " + path);
}

}  // namespace lastshot
