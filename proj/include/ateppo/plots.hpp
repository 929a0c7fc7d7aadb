#pragma once

// Plain SVG output: learning curves (mean +- sample std across runs) and 2-D
// trajectories coloured by task. Numbers are printed with fixed precision so
// identical inputs give identical files.

#include "ateppo/trainer.hpp"

#include <cstdio>
#include <map>

namespace ateppo {

struct CurveBand {
  std::vector<double> epoch;
  std::vector<double> mean;
  std::vector<double> lo;  // mean - sample std
  std::vector<double> hi;  // mean + sample std
};

/// Aggregates mean_return per epoch over runs. Epochs missing from some runs
/// use the runs that have them; the std of a single value is 0.
inline CurveBand aggregate_curves(const std::vector<std::vector<CurveRow>>& runs,
                                  double CurveRow::*field = &CurveRow::mean_return) {
  std::map<int, std::vector<double>> by_epoch;
  for (const auto& run : runs)
    for (const auto& r : run) by_epoch[r.epoch].push_back(r.*field);
  CurveBand b;
  for (const auto& [e, vals] : by_epoch) {
    const double n = static_cast<double>(vals.size());
    double m = 0.0;
    for (double v : vals) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : vals) ss += (v - m) * (v - m);
    const double sd = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    b.epoch.push_back(e);
    b.mean.push_back(m);
    b.lo.push_back(m - sd);
    b.hi.push_back(m + sd);
  }
  return b;
}

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline const char* color(int i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[static_cast<std::size_t>(i) % 8];
}

struct Frame {
  double x0, x1, y0, y1;  // data range
  double W = 640, H = 420, L = 60, R = 20, T = 30, B = 50;
  double px(double x) const { return L + (x - x0) / (x1 - x0) * (W - L - R); }
  double py(double y) const { return H - B - (y - y0) / (y1 - y0) * (H - T - B); }
};

inline Frame make_frame(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
  if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
  const double padx = 0.02 * (x1 - x0), pady = 0.05 * (y1 - y0);
  return {x0 - padx, x1 + padx, y0 - pady, y1 + pady};
}

inline void header(std::ostream& o, const Frame& f, const std::string& title, const std::string& xlabel,
                   const std::string& ylabel) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.W << "\" height=\"" << f.H << "\" viewBox=\"0 0 "
    << f.W << ' ' << f.H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(f.W / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  const double bx0 = f.L, bx1 = f.W - f.R, by0 = f.T, by1 = f.H - f.B;
  o << "<rect x=\"" << num(bx0) << "\" y=\"" << num(by0) << "\" width=\"" << num(bx1 - bx0) << "\" height=\""
    << num(by1 - by0) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(by1 + 16) << "\" text-anchor=\"middle\" font-size=\"10\">"
      << num(xv) << "</text>\n";
    o << "<text x=\"" << num(bx0 - 4) << "\" y=\"" << num(f.py(yv) + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
      << num(yv) << "</text>\n";
  }
  o << "<text x=\"" << num((bx0 + bx1) / 2) << "\" y=\"" << num(f.H - 12) << "\" text-anchor=\"middle\" font-size=\"12\">"
    << xlabel << "</text>\n";
  o << "<text x=\"14\" y=\"" << num((by0 + by1) / 2) << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
    << num((by0 + by1) / 2) << ")\">" << ylabel << "</text>\n";
}

}  // namespace svg

/// One band per label. Empty input gives an axes-only plot; a single point is
/// drawn as a marker.
inline std::string curve_svg(const std::vector<std::pair<std::string, CurveBand>>& series, const std::string& title,
                             const std::string& ylabel = "mean return") {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& [_, b] : series)
    for (std::size_t i = 0; i < b.epoch.size(); ++i) {
      if (!any) x0 = x1 = b.epoch[i], y0 = b.lo[i], y1 = b.hi[i], any = true;
      x0 = std::min(x0, b.epoch[i]), x1 = std::max(x1, b.epoch[i]);
      y0 = std::min(y0, b.lo[i]), y1 = std::max(y1, b.hi[i]);
    }
  const svg::Frame f = svg::make_frame(x0, x1, y0, y1);
  std::ostringstream o;
  svg::header(o, f, title, "epoch", ylabel);
  int idx = 0;
  for (const auto& [label, b] : series) {
    const char* c = svg::color(idx);
    if (b.epoch.size() == 1) {
      o << "<circle cx=\"" << svg::num(f.px(b.epoch[0])) << "\" cy=\"" << svg::num(f.py(b.mean[0]))
        << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    } else if (b.epoch.size() > 1) {
      o << "<polygon fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < b.epoch.size(); ++i) o << svg::num(f.px(b.epoch[i])) << ',' << svg::num(f.py(b.hi[i])) << ' ';
      for (std::size_t i = b.epoch.size(); i-- > 0;) o << svg::num(f.px(b.epoch[i])) << ',' << svg::num(f.py(b.lo[i])) << ' ';
      o << "\"/>\n<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < b.epoch.size(); ++i) o << svg::num(f.px(b.epoch[i])) << ',' << svg::num(f.py(b.mean[i])) << ' ';
      o << "\"/>\n";
    }
    o << "<text x=\"" << svg::num(f.L + 8) << "\" y=\"" << svg::num(f.T + 14 + 14 * idx) << "\" font-size=\"11\" fill=\"" << c
      << "\">" << label << "</text>\n";
    ++idx;
  }
  o << "</svg>\n";
  return o.str();
}

struct TrajectoryPath {
  int episode = 0;
  int task = 0;
  std::vector<Vec2> points;
};

/// Reads the envs trajectory CSV (episode,t,task,x,y,ax,ay,reward), appending
/// each episode's final executed position.
inline std::vector<TrajectoryPath> read_trajectories_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line != "episode,t,task,x,y,ax,ay,reward") throw std::runtime_error(path + ": unexpected trajectory header");
  std::vector<TrajectoryPath> out;
  Vec2 last_action = Vec2::Zero();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw std::runtime_error(path + ": malformed row '" + line + "'");
    const int ep = std::stoi(f[0]);
    if (out.empty() || out.back().episode != ep) {
      if (!out.empty() && !out.back().points.empty()) out.back().points.push_back(out.back().points.back() + last_action);
      out.push_back({ep, std::stoi(f[2]), {}});
    }
    out.back().points.emplace_back(parse_double(f[3]), parse_double(f[4]));
    last_action = Vec2(parse_double(f[5]), parse_double(f[6]));
  }
  if (!out.empty() && !out.back().points.empty()) out.back().points.push_back(out.back().points.back() + last_action);
  return out;
}

inline std::vector<TrajectoryPath> to_paths(std::span<const Trajectory> trajs) {
  std::vector<TrajectoryPath> out;
  for (const auto& t : trajs) {
    TrajectoryPath p{t.episode, t.task.index, {t.states.begin(), t.states.end()}};
    p.points.push_back(t.final_position);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string trajectory_svg(const std::vector<TrajectoryPath>& paths, const std::vector<Vec2>& goals,
                                  const std::string& title) {
  double x0 = -0.2, x1 = 0.2, y0 = -0.2, y1 = 0.2;
  auto grow = [&](const Vec2& p) {
    x0 = std::min(x0, p.x()), x1 = std::max(x1, p.x()), y0 = std::min(y0, p.y()), y1 = std::max(y1, p.y());
  };
  for (const auto& p : paths)
    for (const auto& q : p.points) grow(q);
  for (const auto& g : goals) grow(g);
  // equal aspect: pad the shorter side
  const double span = std::max(x1 - x0, y1 - y0);
  const double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
  svg::Frame f = svg::make_frame(cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2);
  f.W = 520, f.H = 520;
  std::ostringstream o;
  svg::header(o, f, title, "x", "y");
  for (std::size_t g = 0; g < goals.size(); ++g)
    o << "<circle cx=\"" << svg::num(f.px(goals[g].x())) << "\" cy=\"" << svg::num(f.py(goals[g].y()))
      << "\" r=\"6\" fill=\"none\" stroke=\"" << svg::color(static_cast<int>(g)) << "\" stroke-width=\"2\"/>\n";
  for (const auto& p : paths) {
    o << "<polyline fill=\"none\" stroke=\"" << svg::color(p.task) << "\" stroke-opacity=\"0.6\" points=\"";
    for (const auto& q : p.points) o << svg::num(f.px(q.x())) << ',' << svg::num(f.py(q.y())) << ' ';
    o << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace ateppo
