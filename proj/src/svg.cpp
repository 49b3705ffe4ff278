#include "xspod/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace xspod {

namespace {

constexpr double kWidth = 640.0, kHeight = 420.0;
constexpr double kLeft = 64.0, kRight = 150.0, kTop = 36.0, kBottom = 52.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& text)
{
    std::string out;
    for (char c : text) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

double nice_max(double v)
{
    if (!(v > 0.0))
        return 1.0;
    const double mag = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (v <= m * mag)
            return m * mag;
    return 10.0 * mag;
}

} // namespace

SvgChart::SvgChart(std::string title, std::string x_label, std::string y_label)
    : title_(std::move(title))
    , x_label_(std::move(x_label))
    , y_label_(std::move(y_label))
{
}

void SvgChart::set_x_range(double lo, double hi)
{
    x0_ = lo;
    x1_ = hi > lo ? hi : lo + 1.0;
}

void SvgChart::set_y_range(double lo, double hi)
{
    y0_ = lo;
    y1_ = hi > lo ? hi : lo + 1.0;
}

double SvgChart::px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }

double SvgChart::py(double y) const { return kHeight - kBottom - (y - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom); }

void SvgChart::line(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const std::string& color,
                    const std::string& label, bool dashed)
{
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"";
    if (dashed)
        s << " stroke-dasharray=\"6 4\"";
    s << " points=\"";
    for (Eigen::Index i = 0; i < x.size(); ++i)
        s << num(px(x(i))) << ',' << num(py(y(i))) << ' ';
    s << "\"/>";
    body_.push_back(s.str());
    if (!label.empty())
        legend_.emplace_back(color, label);
}

void SvgChart::band(const Eigen::ArrayXd& x, const Eigen::ArrayXd& lo, const Eigen::ArrayXd& hi,
                    const std::string& color)
{
    std::ostringstream s;
    s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (Eigen::Index i = 0; i < x.size(); ++i)
        s << num(px(x(i))) << ',' << num(py(hi(i))) << ' ';
    for (Eigen::Index i = x.size() - 1; i >= 0; --i)
        s << num(px(x(i))) << ',' << num(py(lo(i))) << ' ';
    s << "\"/>";
    body_.push_back(s.str());
}

void SvgChart::points(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const std::string& color,
                      double radius, const std::string& label)
{
    std::ostringstream s;
    s << "<g fill=\"" << color << "\" fill-opacity=\"0.6\">";
    for (Eigen::Index i = 0; i < x.size(); ++i)
        s << "<circle cx=\"" << num(px(x(i))) << "\" cy=\"" << num(py(y(i))) << "\" r=\"" << num(radius) << "\"/>";
    s << "</g>";
    body_.push_back(s.str());
    if (!label.empty())
        legend_.emplace_back(color, label);
}

void SvgChart::bars(const Eigen::ArrayXd& edges, const Eigen::ArrayXd& heights, const std::string& color,
                    const std::string& label)
{
    std::ostringstream s;
    s << "<g fill=\"" << color << "\" fill-opacity=\"0.7\" stroke=\"#333\" stroke-width=\"0.5\">";
    for (Eigen::Index i = 0; i < heights.size(); ++i) {
        const double x = px(edges(i)), w = px(edges(i + 1)) - x;
        const double top = py(heights(i)), base = py(y0_);
        s << "<rect x=\"" << num(x) << "\" y=\"" << num(top) << "\" width=\"" << num(w) << "\" height=\""
          << num(base - top) << "\"/>";
    }
    s << "</g>";
    body_.push_back(s.str());
    if (!label.empty())
        legend_.emplace_back(color, label);
}

void SvgChart::vline(double x, const std::string& color, const std::string& label)
{
    std::ostringstream s;
    s << "<line x1=\"" << num(px(x)) << "\" x2=\"" << num(px(x)) << "\" y1=\"" << num(py(y0_)) << "\" y2=\""
      << num(py(y1_)) << "\" stroke=\"" << color << "\" stroke-dasharray=\"4 3\"/>";
    body_.push_back(s.str());
    if (!label.empty())
        legend_.emplace_back(color, label);
}

void SvgChart::hline(double y, const std::string& color, const std::string& label)
{
    std::ostringstream s;
    s << "<line x1=\"" << num(px(x0_)) << "\" x2=\"" << num(px(x1_)) << "\" y1=\"" << num(py(y)) << "\" y2=\""
      << num(py(y)) << "\" stroke=\"" << color << "\" stroke-dasharray=\"4 3\"/>";
    body_.push_back(s.str());
    if (!label.empty())
        legend_.emplace_back(color, label);
}

std::string SvgChart::render() const
{
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title_)
      << "</text>\n";

    // Axes and ticks.
    const double ax0 = px(x0_), ax1 = px(x1_), ay0 = py(y0_), ay1 = py(y1_);
    s << "<g stroke=\"#333\" stroke-width=\"1\"><line x1=\"" << num(ax0) << "\" y1=\"" << num(ay0) << "\" x2=\""
      << num(ax1) << "\" y2=\"" << num(ay0) << "\"/><line x1=\"" << num(ax0) << "\" y1=\"" << num(ay0)
      << "\" x2=\"" << num(ax0) << "\" y2=\"" << num(ay1) << "\"/></g>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0_ + (x1_ - x0_) * i / 5.0, yv = y0_ + (y1_ - y0_) * i / 5.0;
        s << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(ay0 + 16) << "\" text-anchor=\"middle\">"
          << tick_label(xv) << "</text>";
        s << "<text x=\"" << num(ax0 - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
          << tick_label(yv) << "</text>\n";
    }
    s << "<text x=\"" << num((ax0 + ax1) / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
      << escape(x_label_) << "</text>\n";
    s << "<text transform=\"translate(16 " << num((ay0 + ay1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label_) << "</text>\n";

    for (const auto& b : body_)
        s << b << '\n';

    double ly = kTop + 10;
    for (const auto& [color, label] : legend_) {
        s << "<rect x=\"" << num(kWidth - kRight + 12) << "\" y=\"" << num(ly - 9) << "\" width=\"12\" height=\"10\" fill=\""
          << color << "\"/><text x=\"" << num(kWidth - kRight + 30) << "\" y=\"" << num(ly) << "\">" << escape(label)
          << "</text>\n";
        ly += 18;
    }
    s << "</svg>\n";
    return s.str();
}

std::string pod_curve_svg(const PodFit& fit, const std::vector<DetectionRecord>& records, const std::string& title)
{
    double s_max = 0.0;
    for (const auto& r : records)
        s_max = std::max(s_max, r.defect_size_mm);
    double m90 = std::nan(""), m9095 = std::nan("");
    try {
        m90 = s90(fit, fit.multivariate() ? std::optional<double>(0.0) : std::nullopt);
        m9095 = s90_95(fit, fit.multivariate() ? std::optional<double>(0.0) : std::nullopt);
    } catch (const Error&) {
    }
    if (std::isfinite(m9095))
        s_max = std::max(s_max, m9095 * 1.1);
    s_max = nice_max(s_max);

    SvgChart chart(title, "defect size s [mm]", "POD");
    chart.set_x_range(0.0, s_max);
    chart.set_y_range(0.0, 1.0);
    const int n = 200;
    Eigen::ArrayXd xs = Eigen::ArrayXd::LinSpaced(n, 0.0, s_max), p(n), lo(n), hi(n);
    const std::optional<double> spr = fit.multivariate() ? std::optional<double>(0.0) : std::nullopt;
    for (int i = 0; i < n; ++i) {
        const PodPoint pt = pod_eval(fit, xs(i), spr);
        p(i) = pt.p;
        lo(i) = pt.lo95;
        hi(i) = pt.hi95;
    }
    chart.band(xs, lo, hi, kPalette[0]);
    chart.line(xs, p, kPalette[0], "POD fit");

    // Rug: successes at the top, failures at the bottom.
    Eigen::ArrayXd rx(static_cast<Eigen::Index>(records.size())), ry(rx.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        rx(static_cast<Eigen::Index>(i)) = records[i].defect_size_mm;
        ry(static_cast<Eigen::Index>(i)) = records[i].success ? 1.0 : 0.0;
    }
    chart.points(rx, ry, "#555", 2.0, "observations");
    chart.hline(0.9, "#999", "");
    if (std::isfinite(m90))
        chart.vline(m90, kPalette[1], "s90 = " + tick_label(m90) + " mm");
    if (std::isfinite(m9095))
        chart.vline(m9095, kPalette[2], "s90/95 = " + tick_label(m9095) + " mm");
    return chart.render();
}

std::string f1_scatter_svg(const std::vector<DetectionRecord>& records, double threshold, const std::string& title)
{
    Eigen::ArrayXd x(static_cast<Eigen::Index>(records.size())), y(x.size());
    double s_max = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        x(static_cast<Eigen::Index>(i)) = records[i].defect_size_mm;
        y(static_cast<Eigen::Index>(i)) = records[i].f1;
        s_max = std::max(s_max, records[i].defect_size_mm);
    }
    SvgChart chart(title, "defect size s [mm]", "F1");
    chart.set_x_range(0.0, nice_max(s_max));
    chart.set_y_range(0.0, 1.0);
    chart.points(x, y, kPalette[0], 2.5, "phantoms");
    chart.hline(threshold, kPalette[1], "threshold");
    return chart.render();
}

std::string histogram_svg(const SizeHistogram& h, const std::string& title)
{
    SvgChart chart(title, "defect size s [mm]", "fraction with F1 > threshold");
    chart.set_x_range(h.bin_edges(0), h.bin_edges(h.bin_edges.size() - 1));
    chart.set_y_range(0.0, 1.0);
    chart.bars(h.bin_edges, h.success_fraction, kPalette[0], "success fraction");
    return chart.render();
}

std::string fixed_spr_svg(const PodFit& fit, const std::vector<double>& sprs, double s_max, const std::string& title)
{
    SvgChart chart(title, "defect size s [mm]", "POD");
    chart.set_x_range(0.0, nice_max(s_max));
    chart.set_y_range(0.0, 1.0);
    const int n = 200;
    const Eigen::ArrayXd xs = Eigen::ArrayXd::LinSpaced(n, 0.0, nice_max(s_max));
    for (std::size_t k = 0; k < sprs.size(); ++k) {
        Eigen::ArrayXd p(n), lo(n), hi(n);
        for (int i = 0; i < n; ++i) {
            const PodPoint pt = pod_eval(fit, xs(i), sprs[k]);
            p(i) = pt.p;
            lo(i) = pt.lo95;
            hi(i) = pt.hi95;
        }
        const char* color = kPalette[k % std::size(kPalette)];
        chart.band(xs, lo, hi, color);
        chart.line(xs, p, color, "SPR = " + tick_label(sprs[k]));
    }
    chart.hline(0.9, "#999", "");
    return chart.render();
}

} // namespace xspod
