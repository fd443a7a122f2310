#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "voxenc/errors.hpp"
#include "voxenc/io.hpp"

namespace voxenc {

enum class BrainSpace { volume, surface };

inline std::string to_string(BrainSpace s) {
    return s == BrainSpace::volume ? "volume" : "surface";
}

inline BrainSpace brain_space_from_string(const std::string& s) {
    if (s == "volume") return BrainSpace::volume;
    if (s == "surface") return BrainSpace::surface;
    throw format_error("unknown brain space: " + s);
}

/// One stimulus token/word with its timing.
struct StimulusEvent {
    std::string text;
    double onset = 0.0;    // seconds from run start
    double duration = 0.0; // may be zero

    friend bool operator==(const StimulusEvent& a, const StimulusEvent& b) {
        return a.text == b.text && a.onset == b.onset && a.duration == b.duration;
    }
};

/// One scanning run: a BOLD matrix time-locked to stimulus events.
struct Run {
    std::string id;
    double tr = 2.0;               // seconds per scan
    Eigen::MatrixXd bold;          // n_trs x n_voxels
    Eigen::VectorXd tr_times;      // n_trs, seconds
    std::vector<StimulusEvent> events;

    Eigen::Index n_trs() const { return bold.rows(); }
    Eigen::Index n_voxels() const { return bold.cols(); }
};

/// Time-locked brain/stimulus pairing for one subject. Immutable by
/// convention: every operation returns a new value.
struct Assembly {
    std::string subject;
    BrainSpace space = BrainSpace::volume;
    std::vector<Run> runs;
    std::map<std::string, std::vector<std::uint8_t>> masks; // name -> 0/1 per voxel
    std::map<std::string, Eigen::MatrixXd> motion;          // run id -> n_trs x 6, optional

    Eigen::Index n_voxels() const { return runs.empty() ? 0 : runs.front().n_voxels(); }

    const Run& run(const std::string& id) const {
        for (const auto& r : runs)
            if (r.id == id) return r;
        throw lookup_error("unknown run: " + id);
    }

    const std::vector<std::uint8_t>& mask(const std::string& name) const {
        auto it = masks.find(name);
        if (it == masks.end()) throw lookup_error("unknown mask: " + name);
        return it->second;
    }
};

/// TR counts removed from run edges. Test runs lose extra leading TRs on
/// top of the common head trim.
struct TrimPolicy {
    Eigen::Index head_trs = 0;
    Eigen::Index tail_trs = 0;
    Eigen::Index extra_test_head_trs = 0;
};

inline void validate(const Run& r) {
    if (r.n_trs() < 1) throw validation_error("run " + r.id + ": n_trs must be >= 1");
    if (r.n_voxels() < 1) throw validation_error("run " + r.id + ": n_voxels must be >= 1");
    if (r.tr <= 0) throw validation_error("run " + r.id + ": tr must be positive");
    if (r.tr_times.size() != r.n_trs())
        throw validation_error("run " + r.id + ": tr_times length != bold rows");
    for (Eigen::Index i = 0; i + 1 < r.tr_times.size(); ++i) {
        if (!(r.tr_times[i + 1] > r.tr_times[i]))
            throw validation_error("run " + r.id + ": tr_times not strictly increasing");
        if (std::abs((r.tr_times[i + 1] - r.tr_times[i]) - r.tr) > 1e-6)
            throw validation_error("run " + r.id + ": tr_times spacing differs from tr");
    }
    const double end = r.tr_times[r.tr_times.size() - 1] + r.tr;
    double prev = -1.0;
    for (const auto& e : r.events) {
        if (e.onset < 0.0)
            throw validation_error("run " + r.id + ": event onset < 0");
        if (e.onset >= end)
            throw validation_error("run " + r.id + ": event onset beyond run end");
        if (e.onset < prev)
            throw validation_error("run " + r.id + ": events not sorted by onset");
        prev = e.onset;
    }
}

inline void validate(const Assembly& a) {
    if (a.runs.empty()) throw validation_error("assembly has no runs");
    const Eigen::Index v = a.runs.front().n_voxels();
    for (const auto& r : a.runs) {
        validate(r);
        if (r.n_voxels() != v)
            throw validation_error("run " + r.id + ": voxel count differs across runs");
    }
    std::set<std::string> ids;
    for (const auto& r : a.runs)
        if (!ids.insert(r.id).second)
            throw validation_error("duplicate run id: " + r.id);
    for (const auto& [name, m] : a.masks)
        if (static_cast<Eigen::Index>(m.size()) != v)
            throw validation_error("mask " + name + ": length != n_voxels");
    for (const auto& [id, m] : a.motion) {
        if (m.cols() != 6)
            throw validation_error("motion for run " + id + ": expected 6 columns");
        if (m.rows() != a.run(id).n_trs())
            throw validation_error("motion for run " + id + ": rows != n_trs");
    }
}

/// Sorts events by onset (stable, so ties keep input order).
inline void normalize_events(Run& r) {
    std::stable_sort(r.events.begin(), r.events.end(),
                     [](const StimulusEvent& a, const StimulusEvent& b) {
                         return a.onset < b.onset;
                     });
}

// -------------------------------------------------------------------------
// Directory format: manifest.json plus raw little-endian float32 tensors.

inline void save_assembly(const Assembly& a, const std::filesystem::path& dir) {
    validate(a);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw error("cannot create directory " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["subject"] = a.subject;
    manifest["space"] = to_string(a.space);
    manifest["runs"] = nlohmann::json::array();
    for (const auto& r : a.runs) {
        nlohmann::json jr;
        jr["id"] = r.id;
        jr["tr"] = r.tr;
        jr["n_trs"] = r.n_trs();
        jr["n_voxels"] = r.n_voxels();
        jr["bold_file"] = r.id + ".bold.f32";
        jr["events_file"] = r.id + ".events.json";
        if (a.motion.count(r.id)) jr["motion_file"] = r.id + ".motion.f32";
        manifest["runs"].push_back(jr);

        write_f32(dir / (r.id + ".bold.f32"), r.bold);

        nlohmann::json jev = nlohmann::json::array();
        for (const auto& e : r.events)
            jev.push_back({{"text", e.text}, {"onset", e.onset}, {"duration", e.duration}});
        std::ofstream evout(dir / (r.id + ".events.json"));
        if (!evout) throw error("cannot write events for run " + r.id);
        evout << jev.dump(2) << "\n";

        if (auto it = a.motion.find(r.id); it != a.motion.end())
            write_f32(dir / (r.id + ".motion.f32"), it->second);
    }
    manifest["masks"] = nlohmann::json::array();
    for (const auto& [name, m] : a.masks) {
        manifest["masks"].push_back({{"name", name}, {"mask_file", name + ".mask.u8"}});
        write_u8(dir / (name + ".mask.u8"), m);
    }
    std::ofstream mout(dir / "manifest.json");
    if (!mout) throw error("cannot write manifest in " + dir.string());
    mout << manifest.dump(2) << "\n";
}

inline Assembly load_assembly(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream min(manifest_path);
    if (!min) throw format_error("missing manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        min >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("unparseable manifest " + manifest_path.string() + ": " + e.what());
    }

    Assembly a;
    try {
        a.subject = manifest.at("subject").get<std::string>();
        a.space = brain_space_from_string(manifest.at("space").get<std::string>());
        for (const auto& jr : manifest.at("runs")) {
            Run r;
            r.id = jr.at("id").get<std::string>();
            r.tr = jr.at("tr").get<double>();
            const auto n_trs = jr.at("n_trs").get<Eigen::Index>();
            const auto n_vox = jr.at("n_voxels").get<Eigen::Index>();
            r.bold = read_f32(dir / jr.at("bold_file").get<std::string>(), n_trs, n_vox);
            r.tr_times.resize(n_trs);
            for (Eigen::Index i = 0; i < n_trs; ++i)
                r.tr_times[i] = static_cast<double>(i) * r.tr;

            const auto events_path = dir / jr.at("events_file").get<std::string>();
            std::ifstream evin(events_path);
            if (!evin) throw format_error("missing events file: " + events_path.string());
            nlohmann::json jev;
            try {
                evin >> jev;
            } catch (const nlohmann::json::exception& e) {
                throw format_error("unparseable events " + events_path.string() + ": " + e.what());
            }
            for (const auto& je : jev) {
                StimulusEvent ev;
                ev.text = je.at("text").get<std::string>();
                ev.onset = je.at("onset").get<double>();
                ev.duration = je.value("duration", 0.0);
                r.events.push_back(std::move(ev));
            }
            normalize_events(r);

            if (jr.contains("motion_file"))
                a.motion[r.id] = read_f32(dir / jr.at("motion_file").get<std::string>(), n_trs, 6);
            a.runs.push_back(std::move(r));
        }
        for (const auto& jm : manifest.value("masks", nlohmann::json::array())) {
            const auto name = jm.at("name").get<std::string>();
            if (a.masks.count(name)) throw validation_error("duplicate mask name: " + name);
            a.masks[name] = read_u8(dir / jm.at("mask_file").get<std::string>(),
                                    static_cast<std::size_t>(a.n_voxels()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw format_error("manifest " + manifest_path.string() + ": " + e.what());
    }
    validate(a);
    return a;
}

// -------------------------------------------------------------------------

/// Removes leading/trailing TRs per policy (test runs lose extra leading
/// TRs), drops events outside the retained half-open time span, and
/// re-expresses times relative to the new run start.
inline Assembly apply_trim(const Assembly& a, const TrimPolicy& policy,
                           const std::set<std::string>& test_run_ids = {}) {
    if (policy.head_trs < 0 || policy.tail_trs < 0 || policy.extra_test_head_trs < 0)
        throw validation_error("trim counts must be >= 0");
    Assembly out;
    out.subject = a.subject;
    out.space = a.space;
    out.masks = a.masks;
    for (const auto& r : a.runs) {
        Eigen::Index head = policy.head_trs;
        if (test_run_ids.count(r.id)) head += policy.extra_test_head_trs;
        const Eigen::Index kept = r.n_trs() - head - policy.tail_trs;
        if (kept < 1)
            throw validation_error("trim exceeds length of run " + r.id);

        Run t;
        t.id = r.id;
        t.tr = r.tr;
        t.bold = r.bold.middleRows(head, kept);
        const double start = r.tr_times[head];
        t.tr_times = (r.tr_times.segment(head, kept).array() - start).matrix();
        const double end = t.tr_times[kept - 1] + t.tr;
        for (const auto& e : r.events) {
            const double shifted = e.onset - start;
            if (shifted >= 0.0 && shifted < end)
                t.events.push_back({e.text, shifted, e.duration});
        }
        if (auto it = a.motion.find(r.id); it != a.motion.end())
            out.motion[r.id] = it->second.middleRows(head, kept);
        out.runs.push_back(std::move(t));
    }
    validate(out);
    return out;
}

/// Restricts all runs to the voxels where the named mask is true; every
/// stored mask is re-sliced to the new voxel axis (column order kept).
inline Assembly apply_mask(const Assembly& a, const std::string& mask_name) {
    const auto& m = a.mask(mask_name);
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) keep.push_back(static_cast<Eigen::Index>(i));
    if (keep.empty()) throw validation_error("mask " + mask_name + " selects no voxels");

    Assembly out;
    out.subject = a.subject;
    out.space = a.space;
    out.motion = a.motion;
    for (const auto& r : a.runs) {
        Run s;
        s.id = r.id;
        s.tr = r.tr;
        s.tr_times = r.tr_times;
        s.events = r.events;
        s.bold.resize(r.n_trs(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t j = 0; j < keep.size(); ++j)
            s.bold.col(static_cast<Eigen::Index>(j)) = r.bold.col(keep[j]);
        out.runs.push_back(std::move(s));
    }
    for (const auto& [name, full] : a.masks) {
        std::vector<std::uint8_t> sliced(keep.size());
        for (std::size_t j = 0; j < keep.size(); ++j)
            sliced[j] = full[static_cast<std::size_t>(keep[j])];
        out.masks[name] = std::move(sliced);
    }
    validate(out);
    return out;
}

} // namespace voxenc
