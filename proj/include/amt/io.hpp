#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "amt/matrix.hpp"

namespace amt {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat binary feature file: two little-endian u64 dims, then row-major
// little-endian f64 values. This code assumes a little-endian host.

inline void write_features(const std::string& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::uint64_t dims[2] = {m.rows, m.cols};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + path);
}

inline Matrix read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file: " + path);
    std::uint64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) throw IoError("truncated feature file header: " + path);
    Matrix m(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw IoError("truncated feature file body: " + path);
    return m;
}

/// Feature matrix from CSV: one row per line, comma-separated doubles.
inline Matrix read_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature file: " + path);
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++c;
        }
        if (cols == 0) cols = c;
        else if (c != cols) throw IoError("ragged CSV row in " + path);
        ++rows;
    }
    if (rows == 0) throw IoError("empty feature CSV: " + path);
    Matrix m(rows, cols);
    m.data = std::move(values);
    return m;
}

/// Integer class labels, one per line.
inline std::vector<int> read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path);
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        labels.push_back(std::stoi(line));
    }
    if (labels.empty()) throw IoError("empty label file: " + path);
    return labels;
}

inline std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open id list: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

inline void write_id_list(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& id : ids) out << id << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// FNV-1a over raw bytes; used for run-manifest input/output hashes.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash missing file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return fnv1a(ss.str());
}

/// Checkpoint: one flat little-endian f64 blob plus a JSON manifest of
/// named tensors with shapes and offsets (in doubles).
struct CheckpointWriter {
    std::vector<double> blob;
    nlohmann::json manifest = nlohmann::json::object();

    void add(const std::string& name, const std::vector<double>& values,
             const std::vector<std::size_t>& shape) {
        nlohmann::json entry;
        entry["shape"] = shape;
        entry["offset"] = blob.size();
        entry["count"] = values.size();
        manifest[name] = entry;
        blob.insert(blob.end(), values.begin(), values.end());
    }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        const auto bin = dir + "/params.bin";
        std::ofstream out(bin, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + bin);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * sizeof(double)));
        if (!out) throw IoError("write failed: " + bin);
        write_text(dir + "/params.json", manifest.dump(2) + "\n");
    }
};

struct CheckpointReader {
    std::vector<double> blob;
    nlohmann::json manifest;

    explicit CheckpointReader(const std::string& dir) {
        const auto bin = dir + "/params.bin";
        std::ifstream in(bin, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint: " + bin);
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string bytes = ss.str();
        if (bytes.size() % sizeof(double) != 0)
            throw IoError("checkpoint blob size is not a multiple of 8: " + bin);
        blob.resize(bytes.size() / sizeof(double));
        std::memcpy(blob.data(), bytes.data(), bytes.size());
        manifest = nlohmann::json::parse(read_text(dir + "/params.json"));
    }

    std::vector<double> get(const std::string& name) const {
        if (!manifest.contains(name))
            throw IoError("checkpoint tensor missing: " + name);
        const auto& e = manifest.at(name);
        const std::size_t off = e.at("offset").get<std::size_t>();
        const std::size_t cnt = e.at("count").get<std::size_t>();
        if (off + cnt > blob.size())
            throw IoError("checkpoint tensor out of bounds: " + name);
        return std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(off),
                                   blob.begin() + static_cast<std::ptrdiff_t>(off + cnt));
    }
};

}  // namespace amt
