#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "arrayssl/common.hpp"
#include "arrayssl/training.hpp"

namespace arrayssl {

namespace detail {

// Fixed-precision formatting so the emitted SVG is byte-identical across
// runs and platforms for the same input.
inline std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct LogYAxis {
    double lo, hi;  // positive, lo < hi
    double y_top, y_bottom;

    double map(double v) const {
        const double t = (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo));
        return y_bottom - t * (y_bottom - y_top);
    }
};

inline std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                            const std::string& color) {
    std::string pts;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) pts += ' ';
        pts += fmt_coord(xs[i]) + "," + fmt_coord(ys[i]);
    }
    return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
}

}  // namespace detail

// Renders one metrics file as an SVG panel group: train and validation loss
// curves over epochs with a log-scaled y axis.
inline std::string render_loss_panel(const std::vector<EpochRecord>& records,
                                     const std::string& title, double x_offset) {
    if (records.empty()) throw ValueError("render_loss_panel: no records");
    const double panel_w = 360.0, panel_h = 260.0;
    const double left = x_offset + 48.0, right = x_offset + panel_w - 12.0;
    const double top = 36.0, bottom = panel_h - 32.0;

    double lo = records[0].train_loss, hi = records[0].train_loss;
    for (const EpochRecord& r : records) {
        for (double v : {r.train_loss, r.val_loss}) {
            if (!(v > 0) || !std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!(lo > 0) || !std::isfinite(lo)) lo = 1e-6;
    if (!(hi > lo)) hi = lo * 10.0;
    lo /= 1.25;  // breathing room
    hi *= 1.25;
    detail::LogYAxis axis{lo, hi, top, bottom};

    const int64_t last_epoch = records.back().epoch;
    auto x_of = [&](int64_t epoch) {
        if (last_epoch <= 1) return (left + right) / 2.0;
        return left + (right - left) * static_cast<double>(epoch - 1) /
                          static_cast<double>(last_epoch - 1);
    };

    std::vector<double> xs, train_ys, val_ys;
    for (const EpochRecord& r : records) {
        xs.push_back(x_of(r.epoch));
        train_ys.push_back(axis.map(std::max(r.train_loss, lo)));
        val_ys.push_back(axis.map(std::max(r.val_loss, lo)));
    }

    std::string svg;
    svg += "<g>\n";
    svg += "<text x=\"" + detail::fmt_coord((left + right) / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           title + "</text>\n";
    // frame + log-decade gridlines
    svg += "<rect x=\"" + detail::fmt_coord(left) + "\" y=\"" + detail::fmt_coord(top) +
           "\" width=\"" + detail::fmt_coord(right - left) + "\" height=\"" +
           detail::fmt_coord(bottom - top) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (int d = static_cast<int>(std::ceil(std::log10(lo)));
         d <= static_cast<int>(std::floor(std::log10(hi))); ++d) {
        const double y = axis.map(std::pow(10.0, d));
        svg += "<line x1=\"" + detail::fmt_coord(left) + "\" y1=\"" + detail::fmt_coord(y) +
               "\" x2=\"" + detail::fmt_coord(right) + "\" y2=\"" + detail::fmt_coord(y) +
               "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"" + detail::fmt_coord(left - 4) + "\" y=\"" +
               detail::fmt_coord(y + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">1e" +
               std::to_string(d) + "</text>\n";
    }
    svg += detail::polyline(xs, train_ys, "#1f77b4");
    svg += detail::polyline(xs, val_ys, "#d62728");
    // legend
    svg += "<text x=\"" + detail::fmt_coord(left + 6) + "\" y=\"" +
           detail::fmt_coord(top + 14) +
           "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#1f77b4\">train</text>\n";
    svg += "<text x=\"" + detail::fmt_coord(left + 6) + "\" y=\"" +
           detail::fmt_coord(top + 26) +
           "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#d62728\">validation</text>\n";
    svg += "<text x=\"" + detail::fmt_coord((left + right) / 2) + "\" y=\"" +
           detail::fmt_coord(bottom + 20) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">epoch" +
           "</text>\n";
    svg += "</g>\n";
    return svg;
}

// One panel per metrics file, side by side (baseline vs pretrained when two
// are given). Output is deterministic for fixed inputs.
inline std::string render_loss_svg(const std::vector<std::vector<EpochRecord>>& runs,
                                   const std::vector<std::string>& titles) {
    if (runs.empty() || runs.size() != titles.size())
        throw ValueError("render_loss_svg: need one title per metrics set");
    const double panel_w = 360.0, panel_h = 260.0;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(static_cast<int>(panel_w * runs.size())) +
                      "\" height=\"" + std::to_string(static_cast<int>(panel_h)) + "\">\n";
    for (size_t i = 0; i < runs.size(); ++i)
        svg += render_loss_panel(runs[i], titles[i], panel_w * static_cast<double>(i));
    svg += "</svg>\n";
    return svg;
}

}  // namespace arrayssl
