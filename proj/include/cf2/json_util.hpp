#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cf2/error.hpp"
#include "cf2/tensor.hpp"

namespace cf2::json_util {

using json = nlohmann::json;

inline json read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        // nlohmann reports a byte offset; translate it into a line number.
        const std::string text = ss.str();
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw ParseError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
}

inline void write_file(const std::filesystem::path& path, const json& doc, int indent = -1) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << doc.dump(indent) << '\n';
}

/// Field lookup that names the missing or mistyped field in its error.
inline const json& field(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.is_object()) throw ParseError(ctx + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(ctx + ": missing field '" + key + "'");
    return *it;
}

template <typename T>
T get(const json& obj, const char* key, const std::string& ctx) {
    const json& v = field(obj, key, ctx);
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ParseError(ctx + "." + key + ": " + e.what());
    }
}

inline json to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& ctx, std::size_t expected_cols = SIZE_MAX) {
    if (!j.is_array()) throw ParseError(ctx + ": expected an array of rows");
    const std::size_t rows = j.size();
    std::size_t cols = rows ? j[0].size() : (expected_cols == SIZE_MAX ? 0 : expected_cols);
    std::vector<double> data;
    data.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const json& r = j[i];
        if (!r.is_array() || r.size() != cols) {
            throw ParseError(ctx + "[" + std::to_string(i) + "]: expected a row of " + std::to_string(cols) + " numbers");
        }
        for (const json& v : r) {
            if (!v.is_number()) throw ParseError(ctx + "[" + std::to_string(i) + "]: non-numeric entry");
            data.push_back(v.get<double>());
        }
    }
    return Matrix(rows, cols, std::move(data));
}

}  // namespace cf2::json_util
