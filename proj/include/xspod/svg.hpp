#pragma once

#include "xspod/detect.hpp"
#include "xspod/pod.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace xspod {

/// Minimal dependency-free line/area chart.
class SvgChart {
public:
    SvgChart(std::string title, std::string x_label, std::string y_label);

    void set_x_range(double lo, double hi);
    void set_y_range(double lo, double hi);

    void line(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const std::string& color,
              const std::string& label = {}, bool dashed = false);
    void band(const Eigen::ArrayXd& x, const Eigen::ArrayXd& lo, const Eigen::ArrayXd& hi,
              const std::string& color);
    void points(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const std::string& color,
                double radius = 2.0, const std::string& label = {});
    void bars(const Eigen::ArrayXd& edges, const Eigen::ArrayXd& heights, const std::string& color,
              const std::string& label = {});
    void vline(double x, const std::string& color, const std::string& label);
    void hline(double y, const std::string& color, const std::string& label);

    std::string render() const;

private:
    double px(double x) const;
    double py(double y) const;

    std::string title_, x_label_, y_label_;
    double x0_ = 0.0, x1_ = 1.0, y0_ = 0.0, y1_ = 1.0;
    std::vector<std::string> body_;
    std::vector<std::pair<std::string, std::string>> legend_;
};

/// POD curve with its 95% band, the observation rug, and s90 / s90/95 markers.
std::string pod_curve_svg(const PodFit& fit, const std::vector<DetectionRecord>& records,
                          const std::string& title);

/// F1 against defect size, with the success threshold.
std::string f1_scatter_svg(const std::vector<DetectionRecord>& records, double threshold,
                           const std::string& title);

std::string histogram_svg(const SizeHistogram& histogram, const std::string& title);

/// Multivariate POD curves evaluated at fixed SPR values.
std::string fixed_spr_svg(const PodFit& fit, const std::vector<double>& sprs, double s_max,
                          const std::string& title);

} // namespace xspod
