// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Sectioned key/value configuration files.
//
//   # comment
//   [section]
//   key = value
//   list = 0.2, 0.1, 0.05
//
// Errors carry the 1-based line of the offending entry.

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msldp/error.hpp"

namespace msldp {

class Config {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static Config parse(const std::string& text) {
        Config c;
        c.text_ = text;
        std::istringstream is(text);
        std::string raw, section;
        int lineno = 0;
        while (std::getline(is, raw)) {
            ++lineno;
            std::string line = trim(strip_comment(raw));
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError("unterminated section header", lineno);
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty() || !valid_name(section, true)) throw ConfigError("bad section name '" + section + "'", lineno);
                if (c.sections_.count(section)) throw ConfigError("duplicate section [" + section + "]", lineno);
                c.sections_[section];
                c.section_lines_[section] = lineno;
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
            if (section.empty()) throw ConfigError("entry outside of any section", lineno);
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty() || !valid_name(key, false)) throw ConfigError("bad key '" + key + "'", lineno);
            if (value.empty()) throw ConfigError("missing value for '" + key + "'", lineno);
            auto& sec = c.sections_[section];
            if (sec.count(key)) throw ConfigError("duplicate key '" + key + "' in [" + section + "]", lineno);
            sec[key] = Entry{value, lineno};
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    const std::string& text() const noexcept { return text_; }

    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
    bool has(const std::string& s, const std::string& k) const {
        auto it = sections_.find(s);
        return it != sections_.end() && it->second.count(k) > 0;
    }
    const Entry* find(const std::string& s, const std::string& k) const {
        auto it = sections_.find(s);
        if (it == sections_.end()) return nullptr;
        auto jt = it->second.find(k);
        return jt == it->second.end() ? nullptr : &jt->second;
    }

    std::string get_string(const std::string& s, const std::string& k, const std::string& def) const {
        const Entry* e = find(s, k);
        return e ? e->value : def;
    }
    std::string require_string(const std::string& s, const std::string& k) const {
        const Entry* e = find(s, k);
        if (!e) throw ConfigError("missing required key '" + k + "' in [" + s + "]", section_line(s));
        return e->value;
    }

    double get_double(const std::string& s, const std::string& k, double def) const {
        const Entry* e = find(s, k);
        return e ? to_double(e->value, e->line) : def;
    }

    std::int64_t get_int(const std::string& s, const std::string& k, std::int64_t def) const {
        const Entry* e = find(s, k);
        if (!e) return def;
        const double d = to_double(e->value, e->line);
        if (d != std::floor(d) || std::abs(d) > 9.0e15) throw ConfigError("'" + k + "' must be an integer", e->line);
        return static_cast<std::int64_t>(d);
    }

    bool get_bool(const std::string& s, const std::string& k, bool def) const {
        const Entry* e = find(s, k);
        if (!e) return def;
        if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
        if (e->value == "false" || e->value == "no" || e->value == "0") return false;
        throw ConfigError("'" + k + "' must be true or false", e->line);
    }

    std::vector<double> get_list(const std::string& s, const std::string& k, std::vector<double> def) const {
        const Entry* e = find(s, k);
        if (!e) return def;
        std::vector<double> out;
        std::stringstream ss(e->value);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(to_double(trim(cell), e->line));
        return out;
    }

    int line_of(const std::string& s, const std::string& k) const {
        const Entry* e = find(s, k);
        return e ? e->line : section_line(s);
    }
    int section_line(const std::string& s) const {
        auto it = section_lines_.find(s);
        return it == section_lines_.end() ? 0 : it->second;
    }

    /// Rejects sections and keys outside `schema` (section -> allowed keys; "*" allows any key).
    void check_schema(const std::map<std::string, std::set<std::string>>& schema) const {
        for (const auto& [sec, entries] : sections_) {
            auto it = schema.find(sec);
            if (it == schema.end()) throw ConfigError("unknown section [" + sec + "]", section_line(sec));
            for (const auto& [key, e] : entries)
                if (!it->second.count(key) && !it->second.count("*")) throw ConfigError("unknown key '" + key + "' in [" + sec + "]", e.line);
        }
    }

    const std::map<std::string, std::map<std::string, Entry>>& sections() const noexcept { return sections_; }

    /// 64-bit FNV-1a of the file text.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : text_) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static double to_double(const std::string& v, int line) {
        if (v == "inf" || v == "+inf") return HUGE_VAL;
        if (v == "-inf") return -HUGE_VAL;
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw ConfigError("bad number '" + v + "'", line);
            return d;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad number '" + v + "'", line);
        }
    }

private:
    static std::string strip_comment(const std::string& s) {
        const auto p = s.find('#');
        return p == std::string::npos ? s : s.substr(0, p);
    }
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    static bool valid_name(const std::string& s, bool allow_dot) {
        for (char ch : s)
            if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || (allow_dot && ch == '.')))
                return false;
        return true;
    }

    std::string text_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::map<std::string, int> section_lines_;
};

}  // namespace msldp
