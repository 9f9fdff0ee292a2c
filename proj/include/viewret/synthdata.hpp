#pragma once

#include "viewret/dataset.hpp"
#include "viewret/error.hpp"
#include "viewret/frame.hpp"
#include "viewret/parallel.hpp"
#include "viewret/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <vector>

namespace viewret {

/// Parameters of the longitudinal thigh phantom. Areas are in cm^2, sweep
/// translation in pixels, sweep rotation in degrees.
struct PhantomConfig {
    std::size_t patients = 40;
    std::size_t frames_per_exam = 60;
    double base_area_min = 7.0;
    double base_area_max = 11.0;
    double leg_area_jitter = 0.05;
    double axis_ratio_min = 1.4;
    double axis_ratio_max = 1.8;
    double atrophy_t2 = 0.85;
    double atrophy_t3 = 0.7;
    double translation_range = 24.0;
    double rotation_range = 24.0;
    double tremor = 0.3;
    double speckle = 0.3;
    double gain_jitter = 0.1;
    double pixel_spacing_cm = 0.1;
    double pose_bucket_width = 8.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (patients == 0 || frames_per_exam < 3) {
            throw ConfigError("phantom: need at least one patient and three frames per exam");
        }
        if (!(atrophy_t2 > 0.0 && atrophy_t2 <= 1.0 && atrophy_t3 > 0.0 && atrophy_t3 <= atrophy_t2)) {
            throw ConfigError("phantom: atrophy multipliers must satisfy 0 < T3 <= T2 <= 1");
        }
        if (!(base_area_min > 0.0 && base_area_min <= base_area_max)) {
            throw ConfigError("phantom: base area range must be positive and ordered");
        }
        if (!(axis_ratio_min >= 1.0 && axis_ratio_min <= axis_ratio_max)) {
            throw ConfigError("phantom: axis ratio range must be >= 1 and ordered");
        }
        if (translation_range < 0.0 || rotation_range < 0.0 || rotation_range >= 60.0 || tremor < 0.0) {
            throw ConfigError("phantom: sweep ranges must be non-negative (rotation < 60 deg)");
        }
        if (speckle < 0.0 || speckle >= 1.0 || gain_jitter < 0.0 || gain_jitter >= 1.0) {
            throw ConfigError("phantom: speckle and gain jitter must be in [0, 1)");
        }
        if (!(leg_area_jitter >= 0.0 && leg_area_jitter < 1.0)) {
            throw ConfigError("phantom: leg_area_jitter must be in [0, 1)");
        }
        if (!(pixel_spacing_cm > 0.0) || !(pose_bucket_width > 0.0)) {
            throw ConfigError("phantom: pixel spacing and pose bucket width must be positive");
        }
    }

    double atrophy(ExamTime t) const
    {
        switch (t) {
        case ExamTime::T1: return 1.0;
        case ExamTime::T2: return atrophy_t2;
        default: return atrophy_t3;
        }
    }
};

/// Per-leg anatomy in scene pixel coordinates (x lateral, y depth).
struct Anatomy {
    double area_cm2 = 9.0;     // rectus femoris cross-section at T1
    double axis_ratio = 1.6;   // lateral / depth semi-axis
    double center_x = 32.0;
    double fat_depth = 9.0;    // bottom of the subcutaneous layer
    double femur_depth = 53.0; // top of the femur echo at its apex
    double femur_x = 32.0;
    double striation_angle = 0.3;
    double striation_period = 5.0;
};

inline Anatomy draw_anatomy(const PhantomConfig& cfg, std::size_t patient, Leg leg)
{
    Rng prng = Rng::derive(cfg.seed, {patient, 1000});
    Anatomy a;
    a.area_cm2 = prng.uniform(cfg.base_area_min, cfg.base_area_max);
    a.axis_ratio = prng.uniform(cfg.axis_ratio_min, cfg.axis_ratio_max);
    a.fat_depth = prng.uniform(7.0, 10.0);
    a.femur_depth = prng.uniform(51.0, 55.0);
    a.striation_angle = prng.uniform(-0.6, 0.6);
    a.striation_period = prng.uniform(4.0, 6.0);
    Rng lrng = Rng::derive(cfg.seed, {patient, static_cast<std::uint64_t>(leg), 2000});
    a.area_cm2 *= lrng.uniform(1.0 - cfg.leg_area_jitter, 1.0 + cfg.leg_area_jitter);
    a.center_x = 32.0 + lrng.uniform(-3.0, 3.0);
    a.femur_x = 32.0 + lrng.uniform(-6.0, 6.0);
    return a;
}

struct EllipseGeometry {
    double cx, cy, semi_x, semi_y;
};

/// Ellipse of the given anatomy and area multiplier, in scene pixels.
inline EllipseGeometry ellipse_geometry(const Anatomy& a, double atrophy, double pixel_spacing_cm)
{
    const double area_px = a.area_cm2 * atrophy / (pixel_spacing_cm * pixel_spacing_cm);
    const double semi_x = std::sqrt(area_px * a.axis_ratio / std::numbers::pi);
    const double semi_y = semi_x / a.axis_ratio;
    // The muscle sits just below the fat layer, at a depth independent of atrophy.
    const double full_semi_y = std::sqrt(a.area_cm2 / (pixel_spacing_cm * pixel_spacing_cm) / a.axis_ratio /
                                         std::numbers::pi);
    return {a.center_x, a.fat_depth + 2.0 + full_semi_y, semi_x, semi_y};
}

/// Image pixel (x, y) -> scene coordinates under pose: rotate about the image
/// center by -angle, then shift laterally by the translation.
inline void to_scene(double x, double y, const Pose& pose, double& sx, double& sy)
{
    const double th = -pose.angle * std::numbers::pi / 180.0;
    const double dx = x - 32.0, dy = y - 32.0;
    sx = std::cos(th) * dx - std::sin(th) * dy + 32.0 + pose.translation;
    sy = std::sin(th) * dx + std::cos(th) * dy + 32.0;
}

/// Normalized ellipse radius at a scene point; the lateral axis is stretched
/// by 1/cos(angle), as for an oblique cut through a cylinder.
inline double ellipse_radius(const EllipseGeometry& e, const Pose& pose, double sx, double sy)
{
    const double stretch = 1.0 / std::cos(pose.angle * std::numbers::pi / 180.0);
    const double u = (sx - e.cx) / (e.semi_x * stretch);
    const double v = (sy - e.cy) / e.semi_y;
    return std::sqrt(u * u + v * v);
}

/// Noise-free intensity image and the cross-section mask for one pose.
inline void render_clean(const Anatomy& a, const EllipseGeometry& e, const Pose& pose, Frame& image, Frame& mask)
{
    image = Frame(64, 64);
    mask = Frame(64, 64);
    for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
            double sx, sy;
            to_scene(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, pose, sx, sy);
            const double femur_y = a.femur_depth + 0.012 * (sx - a.femur_x) * (sx - a.femur_x);
            double v;
            if (sy < 2.5) {
                v = 0.75; // skin
            } else if (sy < a.fat_depth) {
                v = 0.12; // subcutaneous fat
            } else if (sy < a.fat_depth + 1.2) {
                v = 0.6; // superficial fascia
            } else if (sy < femur_y) {
                v = 0.26 + 0.04 * std::sin(2.0 * std::numbers::pi * sx / 9.0); // vastus intermedius
            } else if (sy < femur_y + 2.0) {
                v = 0.95; // bone surface
            } else {
                v = 0.03; // acoustic shadow
            }
            const double r = ellipse_radius(e, pose, sx, sy);
            const double ring = 1.2 / e.semi_y;
            if (r < 1.0) {
                mask.at(y, x) = 1.0f;
                const double phase = sx * std::cos(a.striation_angle) + sy * std::sin(a.striation_angle);
                v = 0.38 + 0.07 * std::sin(2.0 * std::numbers::pi * phase / a.striation_period);
                if (r > 1.0 - ring) {
                    v = 0.82;
                }
            } else if (r < 1.0 + ring * 0.5) {
                v = 0.82;
            }
            image.at(y, x) = static_cast<float>(v);
        }
    }
}

/// Multiplicative speckle (uniform noise smoothed by a 3x3 box filter), gain,
/// clamp to [0, 1] and 8-bit quantization.
inline void apply_speckle(Frame& image, double speckle, double gain, Rng& rng)
{
    std::vector<double> noise(64 * 64);
    for (double& n : noise) {
        n = rng.uniform(1.0 - speckle, 1.0 + speckle);
    }
    for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
            double s = 0.0;
            int count = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = static_cast<int>(y) + dy, xx = static_cast<int>(x) + dx;
                    if (yy >= 0 && yy < 64 && xx >= 0 && xx < 64) {
                        s += noise[static_cast<std::size_t>(yy * 64 + xx)];
                        ++count;
                    }
                }
            }
            const double v = image.at(y, x) * gain * (s / count);
            image.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    quantize_8bit(image);
}

/// Probe sweep: both pose components pass linearly through zero at a random
/// frame c in [F/4, 3F/4), reaching the configured range at the farther end,
/// plus uniform per-frame tremor.
inline std::vector<Pose> sweep_poses(const PhantomConfig& cfg, Rng& rng)
{
    const std::size_t f = cfg.frames_per_exam;
    const double center = rng.uniform(static_cast<double>(f) / 4.0, 3.0 * static_cast<double>(f) / 4.0);
    const double sign_t = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double sign_a = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double reach = std::max(center, static_cast<double>(f - 1) - center);
    std::vector<Pose> poses(f);
    for (std::size_t i = 0; i < f; ++i) {
        const double phase = (static_cast<double>(i) - center) / reach;
        poses[i].translation = sign_t * cfg.translation_range * phase + rng.uniform(-cfg.tremor, cfg.tremor);
        poses[i].angle = sign_a * cfg.rotation_range * phase + rng.uniform(-cfg.tremor, cfg.tremor);
    }
    return poses;
}

/// Renders one exam. The reference view is the pose-distance minimizer; it
/// and its two neighbours (clamped to the sequence) are annotated.
inline ExamSequence generate_exam(std::size_t patient, Leg leg, ExamTime time, const PhantomConfig& cfg)
{
    cfg.validate();
    Rng rng = Rng::derive(cfg.seed, {patient, static_cast<std::uint64_t>(leg), static_cast<std::uint64_t>(time)});
    const Anatomy anatomy = draw_anatomy(cfg, patient, leg);
    const EllipseGeometry ellipse = ellipse_geometry(anatomy, cfg.atrophy(time), cfg.pixel_spacing_cm);

    ExamSequence exam;
    exam.patient = patient;
    exam.leg = leg;
    exam.time = time;
    exam.pixel_spacing_cm = cfg.pixel_spacing_cm;
    exam.pose_bucket_width = cfg.pose_bucket_width;
    exam.gain = 1.0 + rng.uniform(-cfg.gain_jitter, cfg.gain_jitter);
    exam.poses = sweep_poses(cfg, rng);
    const std::size_t ref = reference_index(exam.poses);
    exam.reference = ref;
    const std::size_t first = std::min(ref == 0 ? 0 : ref - 1, cfg.frames_per_exam - 3);
    exam.annotated = {first, first + 1, first + 2};

    exam.frames.resize(cfg.frames_per_exam);
    exam.masks.resize(cfg.frames_per_exam);
    for (std::size_t i = 0; i < cfg.frames_per_exam; ++i) {
        render_clean(anatomy, ellipse, exam.poses[i], exam.frames[i], exam.masks[i]);
        apply_speckle(exam.frames[i], cfg.speckle, exam.gain, rng);
    }
    return exam;
}

inline Dataset generate_dataset(const PhantomConfig& cfg)
{
    cfg.validate();
    Dataset ds;
    ds.exams.resize(cfg.patients * 6);
    parallel_for(ds.exams.size(), [&](std::size_t k) {
        const std::size_t patient = k / 6;
        const Leg leg = all_legs[(k / 3) % 2];
        const ExamTime time = all_times[k % 3];
        ds.exams[k] = generate_exam(patient, leg, time, cfg);
    });
    return ds;
}

inline nlohmann::ordered_json to_json(const PhantomConfig& c)
{
    nlohmann::ordered_json j;
    j["patients"] = c.patients;
    j["frames_per_exam"] = c.frames_per_exam;
    j["base_area_min"] = c.base_area_min;
    j["base_area_max"] = c.base_area_max;
    j["leg_area_jitter"] = c.leg_area_jitter;
    j["axis_ratio_min"] = c.axis_ratio_min;
    j["axis_ratio_max"] = c.axis_ratio_max;
    j["atrophy_t2"] = c.atrophy_t2;
    j["atrophy_t3"] = c.atrophy_t3;
    j["translation_range"] = c.translation_range;
    j["rotation_range"] = c.rotation_range;
    j["tremor"] = c.tremor;
    j["speckle"] = c.speckle;
    j["gain_jitter"] = c.gain_jitter;
    j["pixel_spacing_cm"] = c.pixel_spacing_cm;
    j["pose_bucket_width"] = c.pose_bucket_width;
    j["seed"] = c.seed;
    return j;
}

/// Writes the dataset layout plus dataset.json (generator config and exam list).
inline void write_dataset(const std::filesystem::path& root, const Dataset& ds, const PhantomConfig& cfg)
{
    std::filesystem::create_directories(root);
    nlohmann::ordered_json index;
    index["generator"] = to_json(cfg);
    index["exams"] = nlohmann::ordered_json::array();
    for (const auto& e : ds.exams) {
        const auto dir = exam_dir(root, e.patient, e.leg, e.time);
        write_exam(dir, e);
        index["exams"].push_back(std::filesystem::relative(dir, root).generic_string());
    }
    write_json(root / "dataset.json", index);
}

} // namespace viewret
