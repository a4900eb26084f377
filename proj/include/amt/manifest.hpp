#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace amt {

struct ManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ManifestFormat { jsonl, csv };

inline ManifestFormat parse_format(const std::string& s) {
    if (s == "jsonl") return ManifestFormat::jsonl;
    if (s == "csv") return ManifestFormat::csv;
    throw ManifestError("unknown manifest format: " + s);
}

/// The set of task families and the labels observed in each. Label ids are
/// dense per family, assigned by sorting the unique label strings, so two
/// manifests with the same labels agree on ids.
struct LabelUniverse {
    std::vector<std::string> families;      // family index -> name
    std::size_t primary_family = 0;         // index into families
    std::vector<std::vector<std::string>> labels;  // family index -> sorted labels

    std::size_t n_families() const { return families.size(); }
    std::size_t n_labels(std::size_t fam) const { return labels[fam].size(); }

    std::optional<std::size_t> family_index(const std::string& name) const {
        for (std::size_t f = 0; f < families.size(); ++f)
            if (families[f] == name) return f;
        return std::nullopt;
    }

    std::optional<int> label_id(std::size_t fam, const std::string& label) const {
        const auto& v = labels[fam];
        auto it = std::lower_bound(v.begin(), v.end(), label);
        if (it != v.end() && *it == label) return static_cast<int>(it - v.begin());
        return std::nullopt;
    }

    const std::string& label_name(std::size_t fam, int id) const {
        return labels[fam].at(static_cast<std::size_t>(id));
    }

    bool operator==(const LabelUniverse&) const = default;
};

/// One dataset item: exactly one primary label, a possibly-empty label set
/// per auxiliary family. aux is indexed by family; the primary family's
/// slot stays empty.
struct Record {
    std::string id;
    int primary_label = -1;
    std::vector<std::vector<int>> aux;  // per family, sorted label ids

    bool operator==(const Record&) const = default;
};

struct Manifest {
    LabelUniverse universe;
    std::vector<Record> records;

    bool operator==(const Manifest&) const = default;
};

namespace detail {

struct FamilySchema {
    std::vector<std::string> families;  // family name order, primary first is not required
    std::vector<std::string> json_keys; // JSONL key / CSV column per family
    std::size_t primary = 0;
};

inline FamilySchema default_schema() {
    return FamilySchema{{"action", "scene", "object"}, {"action", "scenes", "objects"}, 0};
}

inline std::vector<std::string> split_multi(const std::string& cell) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : cell) {
        if (c == '|') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

/// Intermediate row: label strings before the universe exists.
struct RawRecord {
    std::string id;
    std::string primary;
    std::vector<std::vector<std::string>> aux;  // per family (primary slot unused)
};

inline Manifest build_manifest(const FamilySchema& schema, std::vector<RawRecord>&& raws) {
    if (raws.empty())
        throw ManifestError("manifest contains no records");

    const std::size_t nf = schema.families.size();
    // Canonical family order is alphabetical, independent of the source
    // format's column or key order, so round-trips across formats agree.
    std::vector<std::size_t> order(nf);
    for (std::size_t f = 0; f < nf; ++f) order[f] = f;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return schema.families[a] < schema.families[b];
    });

    Manifest m;
    m.universe.families.resize(nf);
    m.universe.labels.assign(nf, {});
    for (std::size_t f = 0; f < nf; ++f) {
        m.universe.families[f] = schema.families[order[f]];
        if (order[f] == schema.primary) m.universe.primary_family = f;
    }

    std::vector<std::set<std::string>> seen(nf);  // canonical index
    std::unordered_set<std::string> ids;
    for (const auto& r : raws) {
        if (!ids.insert(r.id).second)
            throw ManifestError("duplicate record id: " + r.id);
        seen[m.universe.primary_family].insert(r.primary);
        for (std::size_t f = 0; f < nf; ++f)
            for (const auto& l : r.aux[order[f]]) seen[f].insert(l);
    }
    for (std::size_t f = 0; f < nf; ++f)
        m.universe.labels[f].assign(seen[f].begin(), seen[f].end());

    m.records.reserve(raws.size());
    for (auto& r : raws) {
        Record rec;
        rec.id = std::move(r.id);
        rec.primary_label = *m.universe.label_id(m.universe.primary_family, r.primary);
        rec.aux.assign(nf, {});
        for (std::size_t f = 0; f < nf; ++f) {
            std::set<std::string> uniq(r.aux[order[f]].begin(), r.aux[order[f]].end());
            for (const auto& l : uniq)
                rec.aux[f].push_back(*m.universe.label_id(f, l));
            std::sort(rec.aux[f].begin(), rec.aux[f].end());
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

inline FamilySchema schema_from_header(const nlohmann::json& hdr) {
    FamilySchema s;
    for (auto it = hdr.at("families").begin(); it != hdr.at("families").end(); ++it) {
        s.families.push_back(it.key());
        s.json_keys.push_back(it.value().get<std::string>());
    }
    const std::string primary = hdr.at("primary").get<std::string>();
    auto it = std::find(s.families.begin(), s.families.end(), primary);
    if (it == s.families.end())
        throw ManifestError("header primary family '" + primary + "' not in families");
    s.primary = static_cast<std::size_t>(it - s.families.begin());
    return s;
}

}  // namespace detail

inline Manifest ingest(std::istream& in, ManifestFormat format) {
    using detail::FamilySchema;
    using detail::RawRecord;

    FamilySchema schema = detail::default_schema();
    std::vector<RawRecord> raws;
    std::string line;
    std::size_t lineno = 0;

    if (format == ManifestFormat::jsonl) {
        bool first = true;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ManifestError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
            }
            if (first && j.is_object() && j.contains("families")) {
                schema = detail::schema_from_header(j);
                first = false;
                continue;
            }
            first = false;
            RawRecord r;
            r.aux.assign(schema.families.size(), {});
            try {
                r.id = j.at("id").get<std::string>();
                const auto& pj = j.at(schema.json_keys[schema.primary]);
                if (pj.is_array())
                    throw ManifestError("line " + std::to_string(lineno) +
                                        ": record must carry exactly one primary label");
                r.primary = pj.get<std::string>();
                for (std::size_t f = 0; f < schema.families.size(); ++f) {
                    if (f == schema.primary) continue;
                    if (!j.contains(schema.json_keys[f])) continue;
                    for (const auto& l : j.at(schema.json_keys[f]))
                        r.aux[f].push_back(l.get<std::string>());
                }
            } catch (const ManifestError&) {
                throw;
            } catch (const nlohmann::json::exception& e) {
                throw ManifestError("line " + std::to_string(lineno) + ": bad record: " + e.what());
            }
            raws.push_back(std::move(r));
        }
    } else {
        if (!std::getline(in, line))
            throw ManifestError("empty CSV input");
        ++lineno;
        auto cols = detail::split_csv_line(line);
        if (cols.size() < 2 || cols[0] != "id")
            throw ManifestError("CSV header must start with 'id'");
        schema.families.assign(cols.begin() + 1, cols.end());
        schema.json_keys = schema.families;
        schema.primary = 0;  // first family column is the primary by convention
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cells = detail::split_csv_line(line);
            if (cells.size() != cols.size())
                throw ManifestError("line " + std::to_string(lineno) + ": expected " +
                                    std::to_string(cols.size()) + " cells, got " +
                                    std::to_string(cells.size()));
            RawRecord r;
            r.aux.assign(schema.families.size(), {});
            r.id = cells[0];
            auto primaries = detail::split_multi(cells[1 + schema.primary]);
            if (primaries.size() != 1)
                throw ManifestError("line " + std::to_string(lineno) +
                                    ": record must carry exactly one primary label");
            r.primary = primaries[0];
            for (std::size_t f = 0; f < schema.families.size(); ++f) {
                if (f == schema.primary) continue;
                r.aux[f] = detail::split_multi(cells[1 + f]);
            }
            raws.push_back(std::move(r));
        }
    }
    return detail::build_manifest(schema, std::move(raws));
}

inline Manifest ingest(const std::string& path, ManifestFormat format) {
    std::ifstream in(path);
    if (!in)
        throw ManifestError("cannot open manifest file: " + path);
    return ingest(in, format);
}

/// Keep only records whose primary class has at least min_count members.
/// The universe is rebuilt from the survivors.
inline Manifest filter_min_class_size(const Manifest& m, std::size_t min_count,
                                      std::ostream* warn = &std::cerr) {
    if (min_count < 1)
        throw ManifestError("min_count must be >= 1");

    std::vector<std::size_t> class_count(m.universe.n_labels(m.universe.primary_family), 0);
    for (const auto& r : m.records)
        ++class_count[static_cast<std::size_t>(r.primary_label)];

    detail::FamilySchema schema;
    schema.families = m.universe.families;
    schema.primary = m.universe.primary_family;
    std::vector<detail::RawRecord> raws;
    for (const auto& r : m.records) {
        if (class_count[static_cast<std::size_t>(r.primary_label)] < min_count) continue;
        detail::RawRecord raw;
        raw.id = r.id;
        raw.primary = m.universe.label_name(m.universe.primary_family, r.primary_label);
        raw.aux.assign(m.universe.n_families(), {});
        for (std::size_t f = 0; f < m.universe.n_families(); ++f)
            for (int id : r.aux[f]) raw.aux[f].push_back(m.universe.label_name(f, id));
        raws.push_back(std::move(raw));
    }
    if (raws.empty()) {
        if (warn)
            (*warn) << "warning: filter_min_class_size(" << min_count
                    << ") removed every record\n";
        Manifest empty;
        empty.universe.families = m.universe.families;
        empty.universe.primary_family = m.universe.primary_family;
        empty.universe.labels.assign(m.universe.n_families(), {});
        return empty;
    }
    return detail::build_manifest(schema, std::move(raws));
}

inline void emit(const Manifest& m, std::ostream& out, ManifestFormat format) {
    if (m.records.empty())
        throw ManifestError("refusing to emit a manifest with zero records");
    const auto& u = m.universe;

    if (format == ManifestFormat::jsonl) {
        nlohmann::json hdr;
        nlohmann::json fams = nlohmann::json::object();
        for (std::size_t f = 0; f < u.n_families(); ++f)
            fams[u.families[f]] = u.families[f];
        hdr["families"] = fams;
        hdr["primary"] = u.families[u.primary_family];
        out << hdr.dump() << "\n";
        for (const auto& r : m.records) {
            nlohmann::json j;
            j["id"] = r.id;
            j[u.families[u.primary_family]] = u.label_name(u.primary_family, r.primary_label);
            for (std::size_t f = 0; f < u.n_families(); ++f) {
                if (f == u.primary_family) continue;
                nlohmann::json arr = nlohmann::json::array();
                for (int id : r.aux[f]) arr.push_back(u.label_name(f, id));
                j[u.families[f]] = arr;
            }
            out << j.dump() << "\n";
        }
    } else {
        // Primary family goes in the first label column; CSV ingest relies
        // on that convention.
        std::vector<std::size_t> cols{u.primary_family};
        for (std::size_t f = 0; f < u.n_families(); ++f)
            if (f != u.primary_family) cols.push_back(f);
        out << "id";
        for (std::size_t f : cols) out << "," << u.families[f];
        out << "\n";
        for (const auto& r : m.records) {
            out << r.id;
            for (std::size_t f : cols) {
                out << ",";
                if (f == u.primary_family) {
                    out << u.label_name(u.primary_family, r.primary_label);
                } else {
                    for (std::size_t k = 0; k < r.aux[f].size(); ++k) {
                        if (k) out << "|";
                        out << u.label_name(f, r.aux[f][k]);
                    }
                }
            }
            out << "\n";
        }
    }
}

inline void emit(const Manifest& m, const std::string& path, ManifestFormat format) {
    std::ofstream out(path);
    if (!out)
        throw ManifestError("cannot open for writing: " + path);
    emit(m, out, format);
    if (!out)
        throw ManifestError("write failed: " + path);
}

}  // namespace amt
