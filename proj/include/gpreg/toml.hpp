#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpreg/errors.hpp"

namespace gpreg {

// Insertion order is preserved so that serialized documents keep the order
// fields were emitted in, which keeps reruns byte-identical and diffs sane.
using json = nlohmann::ordered_json;

namespace detail {

// TOML subset sufficient for pipeline configs: [table] headers, dotted and
// quoted keys, strings, booleans, integers, floats, (nested, multi-line)
// arrays, and inline tables. Dates and multi-line strings are not accepted.
class TomlParser {
 public:
  explicit TomlParser(const std::string& text) { split_lines(text); }

  json parse() {
    json root = json::object();
    std::vector<std::string> table;  // current [header] path
    std::set<std::string> declared;

    for (std::size_t i = 0; i < lines_.size(); ++i) {
      line_no_ = i + 1;
      std::string line = strip_comment(lines_[i]);
      std::string body = trim(line);
      if (body.empty()) continue;

      if (body.front() == '[') {
        if (body.size() < 2 || body.back() != ']')
          fail("table header must close with ']'");
        table = parse_key_path(body.substr(1, body.size() - 2));
        const std::string joined = join(table);
        if (!declared.insert(joined).second)
          fail("table [" + joined + "] declared twice");
        ensure_table(root, table);
        continue;
      }

      const std::size_t eq = find_assign(body);
      if (eq == std::string::npos) fail("expected 'key = value'");
      std::vector<std::string> key = parse_key_path(body.substr(0, eq));
      std::string value_text = body.substr(eq + 1);

      // multi-line arrays: keep appending lines until brackets balance
      while (open_depth(value_text) > 0 && i + 1 < lines_.size()) {
        ++i;
        value_text += '\n';
        value_text += strip_comment(lines_[i]);
      }

      pos_ = 0;
      text_ = value_text;
      json value = parse_value();
      skip_ws();
      if (pos_ != text_.size()) fail("unexpected text after value");

      std::vector<std::string> full = table;
      full.insert(full.end(), key.begin(), key.end());
      insert(root, full, std::move(value));
    }
    return root;
  }

 private:
  void split_lines(const std::string& text) {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines_.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) {
      if (cur.back() == '\r') cur.pop_back();
      lines_.push_back(cur);
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_no_) + ": " +
                      what);
  }

  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  // cut '#' comments, honoring both quote styles
  static std::string strip_comment(const std::string& s) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == '\\' && quote == '"') {
          ++i;
        } else if (c == quote) {
          quote = 0;
        }
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '#') {
        return s.substr(0, i);
      }
    }
    return s;
  }

  // '=' separating key from value (never inside quotes in the key part)
  static std::size_t find_assign(const std::string& s) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '=') {
        return i;
      }
    }
    return std::string::npos;
  }

  // net [ / { nesting of a value fragment, ignoring bracket chars in strings
  static int open_depth(const std::string& s) {
    int depth = 0;
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == '\\' && quote == '"')
          ++i;
        else if (c == quote)
          quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '[' || c == '{') {
        ++depth;
      } else if (c == ']' || c == '}') {
        --depth;
      }
    }
    return depth;
  }

  static std::string join(const std::vector<std::string>& path) {
    std::string out;
    for (const auto& p : path) {
      if (!out.empty()) out += '.';
      out += p;
    }
    return out;
  }

  std::vector<std::string> parse_key_path(const std::string& raw) {
    const std::string s = trim(raw);
    std::vector<std::string> path;
    std::size_t i = 0;
    auto bare = [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
             c == '-';
    };
    while (true) {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
        ++i;
      if (i >= s.size()) fail("empty key segment in '" + s + "'");
      std::string seg;
      if (s[i] == '"' || s[i] == '\'') {
        const char quote = s[i++];
        while (i < s.size() && s[i] != quote) seg += s[i++];
        if (i >= s.size()) fail("unterminated quoted key in '" + s + "'");
        ++i;
      } else {
        while (i < s.size() && bare(s[i])) seg += s[i++];
        if (seg.empty()) fail("invalid key '" + s + "'");
      }
      path.push_back(seg);
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
        ++i;
      if (i >= s.size()) break;
      if (s[i] != '.') fail("invalid key '" + s + "'");
      ++i;
    }
    return path;
  }

  json* ensure_table(json& root, const std::vector<std::string>& path) {
    json* node = &root;
    for (const auto& seg : path) {
      if (!node->contains(seg)) (*node)[seg] = json::object();
      node = &(*node)[seg];
      if (!node->is_object())
        fail("'" + join(path) + "': '" + seg +
             "' already holds a value, not a table");
    }
    return node;
  }

  void insert(json& root, const std::vector<std::string>& path, json value) {
    json* node = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
      if (!node->is_object())
        fail("key '" + join(path) + "' conflicts with an existing value");
    }
    if (node->contains(path.back()))
      fail("duplicate key '" + join(path) + "'");
    (*node)[path.back()] = std::move(value);
  }

  // --- value grammar over text_ ---

  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  json parse_value() {
    skip_ws();
    if (pos_ >= text_.size()) fail("missing value");
    const char c = text_[pos_];
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    return parse_scalar();
  }

  json parse_string() {
    const char quote = text_[pos_++];
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != quote) {
      char c = text_[pos_++];
      if (quote == '"' && c == '\\') {
        if (pos_ >= text_.size()) fail("dangling escape in string");
        const char e = text_[pos_++];
        switch (e) {
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case 'r': c = '\r'; break;
          default:
            fail(std::string("unsupported escape '\\") + e + "' in string");
        }
      }
      out += c;
    }
    if (pos_ >= text_.size()) fail("unterminated string");
    ++pos_;
    return json(out);
  }

  json parse_array() {
    ++pos_;  // '['
    json arr = json::array();
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == ']') {
      ++pos_;
      return arr;
    }
    while (true) {
      arr.push_back(parse_value());
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated array");
      if (text_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ']') {  // trailing comma
          ++pos_;
          return arr;
        }
        continue;
      }
      if (text_[pos_] == ']') {
        ++pos_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  json parse_inline_table() {
    ++pos_;  // '{'
    json obj = json::object();
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '}') {
      ++pos_;
      return obj;
    }
    while (true) {
      skip_ws();
      std::string key;
      if (pos_ < text_.size() &&
          (text_[pos_] == '"' || text_[pos_] == '\'')) {
        key = parse_string().get<std::string>();
      } else {
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                text_[pos_] == '_' || text_[pos_] == '-'))
          key += text_[pos_++];
        if (key.empty()) fail("invalid key in inline table");
      }
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != '=')
        fail("expected '=' in inline table");
      ++pos_;
      if (obj.contains(key))
        fail("duplicate key '" + key + "' in inline table");
      obj[key] = parse_value();
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated inline table");
      if (text_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (text_[pos_] == '}') {
        ++pos_;
        return obj;
      }
      fail("expected ',' or '}' in inline table");
    }
  }

  json parse_scalar() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ',' || c == ']' || c == '}' ||
          std::isspace(static_cast<unsigned char>(c)))
        break;
      ++pos_;
    }
    std::string tok = text_.substr(start, pos_ - start);
    if (tok == "true") return json(true);
    if (tok == "false") return json(false);

    std::string digits;
    for (char c : tok)
      if (c != '_') digits += c;  // 1_000_000 style separators
    const bool looks_float = digits.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (looks_float) {
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return json(v);
      } else {
        const std::int64_t v = std::stoll(digits, &used);
        if (used == digits.size()) return json(v);
      }
    } catch (const std::exception&) {
      // falls through to the error below
    }
    fail("cannot parse value '" + tok + "'");
  }

  std::vector<std::string> lines_;
  std::size_t line_no_ = 0;
  std::string text_;  // value fragment currently being parsed
  std::size_t pos_ = 0;
};

}  // namespace detail

inline json parse_toml(const std::string& text) {
  return detail::TomlParser(text).parse();
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json load_toml(const std::string& path) {
  return parse_toml(read_text_file(path));
}

}  // namespace gpreg
