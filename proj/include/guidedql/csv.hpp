#pragma once

#include "guidedql/quasi_family.hpp"

#include <istream>
#include <string>
#include <string_view>

namespace guidedql {

//! Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

//! Reads a CSV with header `x,y` (extra columns ignored). Throws ParseError.
Dataset read_xy_csv(std::istream& in);
Dataset read_xy_csv_file(const std::string& path);

//! Writes `content` to `path` via a temporary file and rename, so a failed
//! run never leaves a partial file behind. Throws Error on I/O failure.
void write_file_atomic(const std::string& path, std::string_view content);

} // namespace guidedql
