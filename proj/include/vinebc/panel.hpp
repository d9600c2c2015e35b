#pragma once

// Space-time panels: n_time rows by d * s columns, column (i, j) holding
// variable i at location j. Long-format text in and out, location and
// adjacency sidecars, period splits and graph-distance bins.

#include <chrono>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vinebc/core.hpp"

namespace vinebc {

using Date = std::chrono::sys_days;

inline Date make_date(int y, unsigned m, unsigned d) {
  return Date(std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d});
}

/// Parses an ISO-8601 calendar date (YYYY-MM-DD).
inline Date parse_date(const std::string& text) {
  const std::string s = detail::trim(text);
  int y = 0;
  unsigned m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream is(s);
  if (!(is >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-' || is.peek() != EOF)
    throw DataError("bad date '" + text + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("bad date '" + text + "'");
  return Date(ymd);
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

/// 1..366.
inline int day_of_year(Date d) {
  const std::chrono::year_month_day ymd{d};
  return static_cast<int>((d - Date(ymd.year() / std::chrono::January / 1)).count()) + 1;
}

inline int year_of(Date d) { return static_cast<int>(std::chrono::year_month_day{d}.year()); }

inline long epoch_days(Date d) { return static_cast<long>(d.time_since_epoch().count()); }

enum class Period { none, rc, mc, mp, rp };

inline std::string_view to_string(Period p) {
  switch (p) {
    case Period::none: return "none";
    case Period::rc: return "rc";
    case Period::mc: return "mc";
    case Period::mp: return "mp";
    case Period::rp: return "rp";
  }
  return "?";
}

struct VariableInfo {
  std::string name;
  std::string family;  // marginal family tag, e.g. gaussian, gamma, beta, hurdle_gamma
};

struct Location {
  std::string id;
  double lat = std::numeric_limits<double>::quiet_NaN();
  double lon = std::numeric_limits<double>::quiet_NaN();
};

/// Column k = (i - 1) * s + j for 1-based variable i and location j.
inline std::size_t column_index(std::size_t i, std::size_t j, std::size_t s) {
  if (s == 0 || i < 1 || j < 1 || j > s) throw DomainError("column_index: index out of range");
  return (i - 1) * s + j;
}

struct PanelDataset {
  Eigen::MatrixXd values;  // rows = time, columns = column_index - 1
  std::vector<VariableInfo> variables;
  std::vector<Location> locations;
  std::vector<Date> dates;
  Period period = Period::none;

  std::size_t n_time() const { return dates.size(); }
  std::size_t n_vars() const { return variables.size(); }
  std::size_t n_locs() const { return locations.size(); }

  /// 0-based column of variable i at location j (both 0-based).
  std::size_t col(std::size_t i, std::size_t j) const {
    if (i >= n_vars() || j >= n_locs()) throw DomainError("panel column out of range");
    return i * n_locs() + j;
  }

  double operator()(std::size_t t, std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(col(i, j)));
  }

  std::size_t variable_index(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i].name == name) return i;
    throw DataError("unknown variable '" + name + "'");
  }

  /// Throws if the invariants do not hold.
  void check() const {
    if (static_cast<std::size_t>(values.cols()) != n_vars() * n_locs())
      throw DataError("panel has " + std::to_string(values.cols()) + " columns, expected d*s");
    if (static_cast<std::size_t>(values.rows()) != n_time()) throw DataError("panel row count differs from dates");
    for (std::size_t t = 1; t < dates.size(); ++t)
      if (dates[t] <= dates[t - 1]) throw DataError("panel dates not strictly increasing at " + format_date(dates[t]));
  }

  /// Rows with `keep[t]`, same columns.
  PanelDataset select_rows(const std::vector<std::size_t>& rows) const {
    PanelDataset out;
    out.variables = variables;
    out.locations = locations;
    out.period = period;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(rows[r]));
      out.dates.push_back(dates[rows[r]]);
    }
    return out;
  }
};

struct PanelSchema {
  std::string date = "date";
  std::string variable = "variable";
  std::string location = "location";
  std::string value = "value";
  char delimiter = ',';
  /// Fill missing cells with the previous value of the same column. Leading
  /// gaps stay errors.
  bool forward_fill = false;
};

namespace detail {

inline std::vector<std::string> read_header(std::istream& is, char sep, std::size_t& lineno) {
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      auto h = split(line, sep);
      for (auto& x : h) x = trim(x);
      if (!h.empty() && h[0].size() >= 3 && h[0].compare(0, 3, "\xEF\xBB\xBF") == 0) h[0].erase(0, 3);
      return h;
    }
  }
  throw DataError("empty file");
}

inline std::size_t header_pos(const std::vector<std::string>& h, const std::string& name) {
  for (std::size_t k = 0; k < h.size(); ++k)
    if (h[k] == name) return k;
  throw DataError("missing column '" + name + "' in header");
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  return f;
}

}  // namespace detail

/// `location,lat,lon` sidecar. Order defines the location index.
inline std::vector<Location> read_locations(std::istream& is, char sep = ',') {
  std::size_t lineno = 0;
  const auto h = detail::read_header(is, sep, lineno);
  const std::size_t pid = detail::header_pos(h, "location"), plat = detail::header_pos(h, "lat"),
                    plon = detail::header_pos(h, "lon");
  std::vector<Location> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, sep);
    if (f.size() < h.size()) throw DataError("locations line " + std::to_string(lineno) + ": too few fields");
    Location l{detail::trim(f[pid]), detail::parse_double(f[plat], "latitude"),
               detail::parse_double(f[plon], "longitude")};
    if (!seen.insert(l.id).second) throw DataError("duplicate location '" + l.id + "'");
    out.push_back(std::move(l));
  }
  return out;
}

inline void write_locations(std::ostream& os, const std::vector<Location>& locs) {
  os << "location,lat,lon\n";
  for (const auto& l : locs) os << l.id << ',' << detail::format_double(l.lat) << ',' << detail::format_double(l.lon) << '\n';
}

/// Reads a long-format panel. With `locations` given, they fix the location
/// order and unknown ids are errors; otherwise locations and variables are
/// ordered by first appearance.
inline PanelDataset read_panel(std::istream& is, const PanelSchema& schema = {},
                               const std::optional<std::vector<Location>>& locations = std::nullopt) {
  std::size_t lineno = 0;
  const auto h = detail::read_header(is, schema.delimiter, lineno);
  const std::size_t pd = detail::header_pos(h, schema.date), pv = detail::header_pos(h, schema.variable),
                    pl = detail::header_pos(h, schema.location), px = detail::header_pos(h, schema.value);
  PanelDataset p;
  std::map<std::string, std::size_t> var_idx, loc_idx;
  if (locations) {
    p.locations = *locations;
    for (std::size_t j = 0; j < p.locations.size(); ++j) loc_idx[p.locations[j].id] = j;
  }
  struct Cell {
    Date date;
    std::size_t i, j;
    double v;
  };
  std::vector<Cell> cells;
  std::set<Date> dates;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, schema.delimiter);
    if (f.size() < h.size()) throw DataError("panel line " + std::to_string(lineno) + ": too few fields");
    const std::string var = detail::trim(f[pv]), loc = detail::trim(f[pl]);
    auto vi = var_idx.find(var);
    if (vi == var_idx.end()) {
      vi = var_idx.emplace(var, p.variables.size()).first;
      p.variables.push_back({var, ""});
    }
    auto li = loc_idx.find(loc);
    if (li == loc_idx.end()) {
      if (locations) throw DataError("panel line " + std::to_string(lineno) + ": unknown location '" + loc + "'");
      li = loc_idx.emplace(loc, p.locations.size()).first;
      p.locations.push_back({loc});
    }
    const std::string raw = detail::trim(f[px]);
    double v = std::numeric_limits<double>::quiet_NaN();
    if (!raw.empty() && raw != "NA" && raw != "nan" && raw != "NaN") v = detail::parse_double(raw, "value");
    const Date d = parse_date(f[pd]);
    dates.insert(d);
    cells.push_back({d, vi->second, li->second, v});
  }
  if (cells.empty()) throw DataError("panel has no data rows");
  p.dates.assign(dates.begin(), dates.end());
  const std::size_t s = p.locations.size();
  p.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(p.dates.size()),
                                       static_cast<Eigen::Index>(p.variables.size() * s),
                                       std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> filled(p.dates.size() * p.variables.size() * s, false);
  for (const auto& c : cells) {
    const auto t = static_cast<std::size_t>(std::lower_bound(p.dates.begin(), p.dates.end(), c.date) - p.dates.begin());
    const std::size_t k = c.i * s + c.j;
    if (filled[t * p.variables.size() * s + k])
      throw DataError("duplicate cell (" + p.variables[c.i].name + ", " + p.locations[c.j].id + ", " +
                      format_date(c.date) + ")");
    filled[t * p.variables.size() * s + k] = true;
    p.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = c.v;
  }
  std::string missing;
  std::size_t n_missing = 0;
  for (Eigen::Index k = 0; k < p.values.cols(); ++k) {
    for (Eigen::Index t = 0; t < p.values.rows(); ++t) {
      double& x = p.values(t, k);
      if (std::isfinite(x)) continue;
      if (schema.forward_fill && t > 0 && std::isfinite(p.values(t - 1, k))) {
        x = p.values(t - 1, k);
        continue;
      }
      if (n_missing++ < 10) {
        const auto i = static_cast<std::size_t>(k) / s, j = static_cast<std::size_t>(k) % s;
        missing += " (" + p.variables[i].name + ", " + p.locations[j].id + ", " +
                   format_date(p.dates[static_cast<std::size_t>(t)]) + ")";
      }
    }
  }
  if (n_missing) throw DataError("panel has " + std::to_string(n_missing) + " missing cells:" + missing);
  p.check();
  return p;
}

inline PanelDataset load_panel(const std::string& path, const PanelSchema& schema = {},
                               const std::optional<std::vector<Location>>& locations = std::nullopt) {
  auto f = detail::open_in(path);
  return read_panel(f, schema, locations);
}

inline void write_panel(std::ostream& os, const PanelDataset& p) {
  os << "date,variable,location,value\n";
  for (std::size_t t = 0; t < p.n_time(); ++t) {
    const std::string d = format_date(p.dates[t]);
    for (std::size_t i = 0; i < p.n_vars(); ++i)
      for (std::size_t j = 0; j < p.n_locs(); ++j)
        os << d << ',' << p.variables[i].name << ',' << p.locations[j].id << ',' << detail::format_double(p(t, i, j))
           << '\n';
  }
}

inline void save_panel(const std::string& path, const PanelDataset& p) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  write_panel(f, p);
}

struct DateRange {
  Date first, last;  // inclusive
  bool contains(Date d) const { return first <= d && d <= last; }
};

/// Rows in `calib` tagged calib_tag, rows in `proj` tagged proj_tag.
inline std::pair<PanelDataset, PanelDataset> split_periods(const PanelDataset& p, DateRange calib, DateRange proj,
                                                           Period calib_tag = Period::rc,
                                                           Period proj_tag = Period::rp) {
  if (calib.first > calib.last || proj.first > proj.last) throw ConfigError("date range ends before it starts");
  if (calib.first <= proj.last && proj.first <= calib.last) throw ConfigError("calibration and projection ranges overlap");
  std::vector<std::size_t> rc, rp;
  for (std::size_t t = 0; t < p.n_time(); ++t) {
    if (calib.contains(p.dates[t])) rc.push_back(t);
    if (proj.contains(p.dates[t])) rp.push_back(t);
  }
  if (rc.empty()) throw DataError("calibration range selects no rows");
  if (rp.empty()) throw DataError("projection range selects no rows");
  auto a = p.select_rows(rc), b = p.select_rows(rp);
  a.period = calib_tag;
  b.period = proj_tag;
  return {std::move(a), std::move(b)};
}

/// Undirected location graph over indices 0..s-1.
struct GridAdjacency {
  std::size_t n_locs = 0;
  std::set<std::pair<std::size_t, std::size_t>> edges;  // first < second

  void add(std::size_t a, std::size_t b) {
    if (a == b) throw DataError("adjacency has a self-loop");
    if (a >= n_locs || b >= n_locs) throw DataError("adjacency names an unknown location");
    edges.emplace(std::min(a, b), std::max(a, b));
  }

  std::vector<std::vector<std::size_t>> neighbours() const {
    std::vector<std::vector<std::size_t>> nb(n_locs);
    for (auto [a, b] : edges) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
    return nb;
  }

  /// Graph distances from `src`; -1 where unreachable.
  std::vector<int> distances(std::size_t src) const {
    const auto nb = neighbours();
    std::vector<int> dist(n_locs, -1);
    std::queue<std::size_t> q;
    dist[src] = 0;
    q.push(src);
    while (!q.empty()) {
      const std::size_t x = q.front();
      q.pop();
      for (std::size_t y : nb[x])
        if (dist[y] < 0) dist[y] = dist[x] + 1, q.push(y);
    }
    return dist;
  }

  bool connected() const {
    if (n_locs == 0) return true;
    const auto d = distances(0);
    return std::none_of(d.begin(), d.end(), [](int x) { return x < 0; });
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs() const { return {edges.begin(), edges.end()}; }
};

/// `loc_a,loc_b` sidecar, resolved against the panel's location ids.
inline GridAdjacency read_adjacency(std::istream& is, const std::vector<Location>& locations, char sep = ',') {
  std::map<std::string, std::size_t> idx;
  for (std::size_t j = 0; j < locations.size(); ++j) idx[locations[j].id] = j;
  std::size_t lineno = 0;
  const auto h = detail::read_header(is, sep, lineno);
  const std::size_t pa = detail::header_pos(h, "loc_a"), pb = detail::header_pos(h, "loc_b");
  GridAdjacency g;
  g.n_locs = locations.size();
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, sep);
    if (f.size() < h.size()) throw DataError("adjacency line " + std::to_string(lineno) + ": too few fields");
    const auto a = idx.find(detail::trim(f[pa])), b = idx.find(detail::trim(f[pb]));
    if (a == idx.end() || b == idx.end())
      throw DataError("adjacency line " + std::to_string(lineno) + ": unknown location");
    g.add(a->second, b->second);
  }
  if (!g.connected()) throw DataError("adjacency graph is disconnected");
  return g;
}

inline void write_adjacency(std::ostream& os, const GridAdjacency& g, const std::vector<Location>& locations) {
  os << "loc_a,loc_b\n";
  for (auto [a, b] : g.edges) os << locations[a].id << ',' << locations[b].id << '\n';
}

/// Rook adjacency of a rows x cols grid, locations numbered row-major.
inline GridAdjacency rook_grid(std::size_t rows, std::size_t cols) {
  GridAdjacency g;
  g.n_locs = rows * cols;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (c + 1 < cols) g.add(r * cols + c, r * cols + c + 1);
      if (r + 1 < rows) g.add(r * cols + c, (r + 1) * cols + c);
    }
  return g;
}

/// B_r: unordered location pairs at graph distance r, for every r >= 1 that occurs.
inline std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> shortest_path_bins(const GridAdjacency& g) {
  std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> bins;
  for (std::size_t a = 0; a < g.n_locs; ++a) {
    const auto d = g.distances(a);
    for (std::size_t b = a + 1; b < g.n_locs; ++b) {
      if (d[b] < 0) throw DataError("adjacency graph is disconnected");
      bins[d[b]].emplace_back(a, b);
    }
  }
  return bins;
}

}  // namespace vinebc
