#pragma once

#include "viewret/error.hpp"
#include "viewret/frame.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace viewret {

enum class Leg { left, right };
enum class ExamTime { T1, T2, T3 };

inline constexpr Leg all_legs[] = {Leg::left, Leg::right};
inline constexpr ExamTime all_times[] = {ExamTime::T1, ExamTime::T2, ExamTime::T3};

inline std::string leg_tag(Leg leg) { return leg == Leg::left ? "L" : "R"; }
inline std::string time_tag(ExamTime t) { return "T" + std::to_string(static_cast<int>(t) + 1); }

inline Leg parse_leg(const std::string& s)
{
    if (s == "L") {
        return Leg::left;
    }
    if (s == "R") {
        return Leg::right;
    }
    throw FormatError("unknown leg tag '" + s + "'", 0);
}

inline ExamTime parse_time(const std::string& s)
{
    for (ExamTime t : all_times) {
        if (time_tag(t) == s) {
            return t;
        }
    }
    throw FormatError("unknown exam time '" + s + "'", 0);
}

/// Probe pose: lateral translation (px) and in-plane angle (degrees).
struct Pose {
    double translation = 0.0;
    double angle = 0.0;
};

inline constexpr double pose_translation_weight = 1.0;
inline constexpr double pose_rotation_weight = 2.0;

/// Weighted distance to the canonical pose (0, 0).
inline double pose_distance(const Pose& p)
{
    return pose_translation_weight * std::abs(p.translation) + pose_rotation_weight * std::abs(p.angle);
}

inline std::size_t pose_bucket(const Pose& p, double bucket_width)
{
    return static_cast<std::size_t>(std::floor(pose_distance(p) / bucket_width));
}

/// Index of the pose closest to canonical; first index on ties.
inline std::size_t reference_index(const std::vector<Pose>& poses)
{
    if (poses.empty()) {
        throw InputError("reference_index: no poses");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < poses.size(); ++i) {
        if (pose_distance(poses[i]) < pose_distance(poses[best])) {
            best = i;
        }
    }
    return best;
}

/// Frames of one patient/leg/exam time. Masks and ground truth are optional.
struct ExamSequence {
    std::size_t patient = 0;
    Leg leg = Leg::left;
    ExamTime time = ExamTime::T1;
    std::vector<Frame> frames;
    std::vector<Frame> masks;
    std::vector<std::size_t> annotated;
    double pixel_spacing_cm = 0.1;
    double gain = 1.0;
    std::vector<Pose> poses;
    std::optional<std::size_t> reference;
    double pose_bucket_width = 8.0;
};

struct Dataset {
    std::vector<ExamSequence> exams; // ordered by (patient, leg, time)

    std::vector<std::size_t> patients() const
    {
        std::vector<std::size_t> out;
        for (const auto& e : exams) {
            if (out.empty() || out.back() != e.patient) {
                out.push_back(e.patient);
            }
        }
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    /// Indices into `exams` for one patient and leg, in time order.
    std::vector<std::size_t> exams_of(std::size_t patient, Leg leg) const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < exams.size(); ++i) {
            if (exams[i].patient == patient && exams[i].leg == leg) {
                out.push_back(i);
            }
        }
        return out;
    }

    const ExamSequence* find(std::size_t patient, Leg leg, ExamTime time) const
    {
        for (const auto& e : exams) {
            if (e.patient == patient && e.leg == leg && e.time == time) {
                return &e;
            }
        }
        return nullptr;
    }

    std::size_t frame_count() const
    {
        std::size_t n = 0;
        for (const auto& e : exams) {
            n += e.frames.size();
        }
        return n;
    }
};

// ---------------------------------------------------------------------------
// on-disk layout:
//   root/patient_NNN/leg_{L|R}/exam_{T1|T2|T3}/
//     frames/frame_%04d.pgm   masks/frame_%04d.pgm
//     annotations.json  meta.json  ground_truth.json

inline std::string frame_filename(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", index);
    return buf;
}

inline std::filesystem::path exam_dir(const std::filesystem::path& root, std::size_t patient, Leg leg, ExamTime time)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "patient_%03zu", patient);
    return root / buf / ("leg_" + leg_tag(leg)) / ("exam_" + time_tag(time));
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc)
{
    write_file(path, doc.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path)
{
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what(), e.byte);
    }
}

inline void write_exam(const std::filesystem::path& dir, const ExamSequence& exam)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    for (std::size_t i = 0; i < exam.frames.size(); ++i) {
        write_pgm(dir / "frames" / frame_filename(i), exam.frames[i]);
    }
    if (!exam.masks.empty()) {
        fs::create_directories(dir / "masks");
        for (std::size_t i = 0; i < exam.masks.size(); ++i) {
            write_pgm(dir / "masks" / frame_filename(i), exam.masks[i]);
        }
    }
    nlohmann::ordered_json ann;
    ann["annotated_view_indices"] = exam.annotated;
    write_json(dir / "annotations.json", ann);

    nlohmann::ordered_json meta;
    meta["patient"] = exam.patient;
    meta["leg"] = leg_tag(exam.leg);
    meta["time"] = time_tag(exam.time);
    meta["frame_count"] = exam.frames.size();
    meta["pixel_spacing_cm"] = {exam.pixel_spacing_cm, exam.pixel_spacing_cm};
    meta["gain_jitter"] = exam.gain;
    write_json(dir / "meta.json", meta);

    if (!exam.poses.empty()) {
        nlohmann::ordered_json gt;
        nlohmann::ordered_json poses = nlohmann::ordered_json::array();
        for (const auto& p : exam.poses) {
            poses.push_back({{"translation_px", p.translation},
                             {"angle_deg", p.angle},
                             {"distance", pose_distance(p)},
                             {"bucket", pose_bucket(p, exam.pose_bucket_width)}});
        }
        gt["poses"] = std::move(poses);
        gt["reference_index"] = exam.reference.value_or(reference_index(exam.poses));
        gt["pose_distance"] = {{"translation_weight", pose_translation_weight},
                               {"rotation_weight", pose_rotation_weight},
                               {"bucket_width", exam.pose_bucket_width}};
        write_json(dir / "ground_truth.json", gt);
    }
}

inline std::vector<Frame> read_frame_dir(const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".pgm") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Frame> frames;
    frames.reserve(files.size());
    for (const auto& f : files) {
        frames.push_back(read_pgm(f));
    }
    return frames;
}

/// Loads one exam directory. `masks` and ground truth are read when present.
inline ExamSequence read_exam(const std::filesystem::path& dir, bool with_masks = true)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir / "frames")) {
        throw IoError("missing frames directory: " + (dir / "frames").string());
    }
    ExamSequence exam;
    const auto meta = read_json(dir / "meta.json");
    try {
        exam.patient = meta.at("patient").get<std::size_t>();
        exam.leg = parse_leg(meta.at("leg").get<std::string>());
        exam.time = parse_time(meta.at("time").get<std::string>());
        exam.pixel_spacing_cm = meta.at("pixel_spacing_cm").at(0).get<double>();
        exam.gain = meta.value("gain_jitter", 1.0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / "meta.json").string() + ": " + e.what(), 0);
    }
    exam.frames = read_frame_dir(dir / "frames");
    if (with_masks && fs::is_directory(dir / "masks")) {
        exam.masks = read_frame_dir(dir / "masks");
        if (exam.masks.size() != exam.frames.size()) {
            throw FormatError(dir.string() + ": mask count differs from frame count", 0);
        }
    }
    const auto ann = read_json(dir / "annotations.json");
    try {
        exam.annotated = ann.at("annotated_view_indices").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / "annotations.json").string() + ": " + e.what(), 0);
    }
    for (std::size_t i : exam.annotated) {
        if (i >= exam.frames.size()) {
            throw FormatError(dir.string() + ": annotated index " + std::to_string(i) + " out of range", 0);
        }
    }
    if (fs::exists(dir / "ground_truth.json")) {
        const auto gt = read_json(dir / "ground_truth.json");
        try {
            for (const auto& p : gt.at("poses")) {
                exam.poses.push_back({p.at("translation_px").get<double>(), p.at("angle_deg").get<double>()});
            }
            exam.reference = gt.at("reference_index").get<std::size_t>();
            exam.pose_bucket_width = gt.at("pose_distance").at("bucket_width").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError((dir / "ground_truth.json").string() + ": " + e.what(), 0);
        }
    }
    return exam;
}

inline Dataset load_dataset(const std::filesystem::path& root, bool with_masks = true)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
        throw IoError("dataset directory not found: " + root.string());
    }
    std::vector<fs::path> dirs;
    for (const auto& p : fs::directory_iterator(root)) {
        if (p.is_directory() && p.path().filename().string().rfind("patient_", 0) == 0) {
            for (const auto& l : fs::directory_iterator(p.path())) {
                if (!l.is_directory()) {
                    continue;
                }
                for (const auto& e : fs::directory_iterator(l.path())) {
                    if (e.is_directory() && e.path().filename().string().rfind("exam_", 0) == 0) {
                        dirs.push_back(e.path());
                    }
                }
            }
        }
    }
    if (dirs.empty()) {
        throw IoError("no exams found under " + root.string());
    }
    Dataset ds;
    for (const auto& d : dirs) {
        ds.exams.push_back(read_exam(d, with_masks));
    }
    std::sort(ds.exams.begin(), ds.exams.end(), [](const ExamSequence& a, const ExamSequence& b) {
        return std::tie(a.patient, a.leg, a.time) < std::tie(b.patient, b.leg, b.time);
    });
    return ds;
}

/// Candidate frames for retrieval: an exam directory (its frames/ folder) or
/// any directory of PGM files, in file-name order.
inline std::vector<Frame> load_candidates(const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw IoError("candidate directory not found: " + dir.string());
    }
    std::vector<Frame> frames = read_frame_dir(fs::is_directory(dir / "frames") ? dir / "frames" : dir);
    if (frames.empty()) {
        throw InputError("no .pgm frames in " + dir.string());
    }
    return frames;
}

} // namespace viewret
