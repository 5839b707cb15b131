#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rotatelab::cli {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

/// Static line chart. Axes span the data range; no interactivity.
std::string line_plot_svg(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<Series>& series);

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel,
                     const std::vector<Series>& series);

}  // namespace rotatelab::cli
