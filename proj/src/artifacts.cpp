#include "lm/artifacts.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace lm::artifacts {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "artifacts: cannot write " + tmp);
    out << content;
    require(out.good(), "artifacts: short write to " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0,
          "artifacts: cannot move " + tmp + " into place");
}

std::string points_csv(const Tensor<float>& pts) {
  require(pts.rank() == 2, "points_csv: need [n x d] points");
  std::string out;
  for (int64_t j = 0; j < pts.shape[1]; ++j)
    out += (j ? ",x" : "x") + std::to_string(j);
  out += "\n";
  for (int64_t i = 0; i < pts.shape[0]; ++i) {
    for (int64_t j = 0; j < pts.shape[1]; ++j) {
      if (j) out += ",";
      out += fmt(pts.at(i, j));
    }
    out += "\n";
  }
  return out;
}

std::string reconstruction_csv(const Tensor<float>& x, const Tensor<float>& xh) {
  require(x.rank() == 2 && x.shape == xh.shape, "reconstruction_csv: shape mismatch");
  std::string out;
  for (int64_t j = 0; j < x.shape[1]; ++j) out += "x" + std::to_string(j) + ",";
  for (int64_t j = 0; j < x.shape[1]; ++j) out += "xr" + std::to_string(j) + ",";
  out += "row_mse\n";
  for (int64_t i = 0; i < x.shape[0]; ++i) {
    double se = 0;
    std::string line;
    for (int64_t j = 0; j < x.shape[1]; ++j) line += fmt(x.at(i, j)) + ",";
    for (int64_t j = 0; j < x.shape[1]; ++j) {
      line += fmt(xh.at(i, j)) + ",";
      double d = static_cast<double>(x.at(i, j)) - xh.at(i, j);
      se += d * d;
    }
    out += line + fmt(se / x.shape[1]) + "\n";
  }
  return out;
}

std::string report_csv(const metrics::MetricReport& rep, const std::string& run_id,
                       int64_t step) {
  std::string out = "run_id,step,key,value\n";
  for (const auto& [k, v] : rep.values)
    out += run_id + "," + std::to_string(step) + "," + k + "," + fmt(v) + "\n";
  return out;
}

std::string svg_scatter(const std::vector<const Tensor<float>*>& groups) {
  require(!groups.empty() && groups.size() <= 2, "svg_scatter: need one or two point groups");
  // with two groups the first (input) is gray; a lone group is the output
  auto fill_for = [&](size_t gi) { return groups.size() == 2 && gi == 0 ? "#9e9e9e" : "#1f77b4"; };

  auto px = [](const Tensor<float>& t, int64_t i) { return static_cast<double>(t.at(i, 0)); };
  auto py = [](const Tensor<float>& t, int64_t i) {
    return static_cast<double>(t.at(i, t.shape[1] == 3 ? 2 : 1));
  };

  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto* g : groups) {
    require(g->rank() == 2 && (g->shape[1] == 2 || g->shape[1] == 3),
            "svg_scatter: points must have 2 or 3 columns");
    for (int64_t i = 0; i < g->shape[0]; ++i) {
      lo_x = std::min(lo_x, px(*g, i));
      hi_x = std::max(hi_x, px(*g, i));
      lo_y = std::min(lo_y, py(*g, i));
      hi_y = std::max(hi_y, py(*g, i));
    }
  }
  if (lo_x > hi_x) {  // all groups empty
    lo_x = lo_y = -1;
    hi_x = hi_y = 1;
  }
  const double span_x = std::max(hi_x - lo_x, 1e-9), span_y = std::max(hi_y - lo_y, 1e-9);
  const double W = 640, H = 640, pad = 20;

  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" "
      "viewBox=\"0 0 640 640\">\n<rect width=\"640\" height=\"640\" fill=\"white\"/>\n";
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = *groups[gi];
    for (int64_t i = 0; i < g.shape[0]; ++i) {
      double cx = pad + (px(g, i) - lo_x) / span_x * (W - 2 * pad);
      double cy = H - pad - (py(g, i) - lo_y) / span_y * (H - 2 * pad);
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.7\"/>\n",
                    cx, cy, fill_for(gi));
      out += buf;
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace lm::artifacts
