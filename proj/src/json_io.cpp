#include "lingagg/json_io.hpp"

#include <cmath>
#include <cstdio>

#include "lingagg/error.hpp"

namespace lingagg {
namespace {

void write_number(std::string& out, double v) {
  if (!std::isfinite(v)) throw InputError("cannot serialize non-finite number to JSON");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

void write(std::string& out, const json& v, int indent, int depth) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (v.type()) {
    case json::value_t::number_float:
      write_number(out, v.get<double>());
      break;
    case json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        break;
      }
      // Arrays of scalars stay on one line.
      bool flat = true;
      for (const auto& e : v) flat = flat && !e.is_structured();
      out += '[';
      bool first = true;
      for (const auto& e : v) {
        if (!first) out += ',';
        if (!flat) newline(depth + 1);
        write(out, e, indent, depth + 1);
        first = false;
      }
      if (!flat) newline(depth);
      out += ']';
      break;
    }
    case json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        break;
      }
      out += '{';
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out += ',';
        newline(depth + 1);
        out += json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        write(out, it.value(), indent, depth + 1);
        first = false;
      }
      newline(depth);
      out += '}';
      break;
    }
    default:
      out += v.dump();
  }
}

}  // namespace

std::string dump_json(const json& value, int indent) {
  std::string out;
  write(out, value, indent, 0);
  return out;
}

}  // namespace lingagg
