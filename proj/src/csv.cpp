#include "guidedql/csv.hpp"

#include "guidedql/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace guidedql {

namespace {

std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> fields(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos)
      return out;
    start = pos + 1;
  }
}

double to_double(std::string_view s, std::size_t line_no)
{
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ": not a finite number: '" +
                     std::string(s) + "'");
  return v;
}

} // namespace

std::string
format_double(double v)
{
  if (v == 0.0)
    return "0";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc())
    return "nan";
  return std::string(buf, ptr);
}

Dataset
read_xy_csv(std::istream& in)
{
  std::string line;
  std::size_t line_no = 0;
  long xi = -1, yi = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty())
      break;
  }
  if (trim(line).empty())
    throw ParseError("empty CSV input");
  {
    auto head = fields(line);
    if (!head.empty() && head[0].starts_with("\xEF\xBB\xBF"))
      head[0].remove_prefix(3);
    for (std::size_t k = 0; k < head.size(); ++k) {
      if (head[k] == "x")
        xi = static_cast<long>(k);
      else if (head[k] == "y")
        yi = static_cast<long>(k);
    }
    if (xi < 0 || yi < 0)
      throw ParseError("CSV header must contain columns x and y");
  }
  Dataset d;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    auto f = fields(line);
    const auto need = static_cast<std::size_t>(std::max(xi, yi)) + 1;
    if (f.size() < need)
      throw ParseError("line " + std::to_string(line_no) + ": expected at least " +
                       std::to_string(need) + " fields");
    d.x.push_back(to_double(f[static_cast<std::size_t>(xi)], line_no));
    d.y.push_back(to_double(f[static_cast<std::size_t>(yi)], line_no));
  }
  if (d.x.empty())
    throw ParseError("CSV has no data rows");
  return d;
}

Dataset
read_xy_csv_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open " + path);
  return read_xy_csv(in);
}

void
write_file_atomic(const std::string& path, std::string_view content)
{
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
      throw Error("write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw Error("cannot move output into place: " + path);
  }
}

} // namespace guidedql
