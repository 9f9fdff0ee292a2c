#pragma once

#include "viewret/dataset.hpp"
#include "viewret/error.hpp"
#include "viewret/pairs.hpp"
#include "viewret/synthdata.hpp"
#include "viewret/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace viewret {

/// Named references to config fields, used both to read a JSON section
/// (rejecting unknown keys) and to write it back.
class JsonFields {
public:
    using Ref = std::variant<double*, std::size_t*>;

    JsonFields& add(std::string key, Ref ref)
    {
        fields_.emplace_back(std::move(key), ref);
        return *this;
    }

    void read(const nlohmann::json& j, const std::string& section) const
    {
        if (!j.is_object()) {
            throw ConfigError(section + ": expected a JSON object");
        }
        for (const auto& [key, value] : j.items()) {
            const auto it = std::find_if(fields_.begin(), fields_.end(),
                                         [&](const auto& f) { return f.first == key; });
            if (it == fields_.end()) {
                throw ConfigError(section + ": unknown key '" + key + "'");
            }
            if (!value.is_number()) {
                throw ConfigError(section + "." + key + ": expected a number");
            }
            std::visit(
                [&](auto* p) {
                    using T = std::remove_pointer_t<decltype(p)>;
                    if constexpr (std::is_same_v<T, double>) {
                        *p = value.get<double>();
                    } else {
                        if (!value.is_number_unsigned()) {
                            throw ConfigError(section + "." + key + ": expected a non-negative integer");
                        }
                        *p = value.get<T>();
                    }
                },
                it->second);
        }
    }

    nlohmann::ordered_json write() const
    {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [key, ref] : fields_) {
            std::visit([&, k = key](auto* p) { j[k] = *p; }, ref);
        }
        return j;
    }

private:
    std::vector<std::pair<std::string, Ref>> fields_;
};

inline JsonFields fields(PhantomConfig& c)
{
    JsonFields f;
    f.add("patients", &c.patients)
        .add("frames_per_exam", &c.frames_per_exam)
        .add("base_area_min", &c.base_area_min)
        .add("base_area_max", &c.base_area_max)
        .add("leg_area_jitter", &c.leg_area_jitter)
        .add("axis_ratio_min", &c.axis_ratio_min)
        .add("axis_ratio_max", &c.axis_ratio_max)
        .add("atrophy_t2", &c.atrophy_t2)
        .add("atrophy_t3", &c.atrophy_t3)
        .add("translation_range", &c.translation_range)
        .add("rotation_range", &c.rotation_range)
        .add("tremor", &c.tremor)
        .add("speckle", &c.speckle)
        .add("gain_jitter", &c.gain_jitter)
        .add("pixel_spacing_cm", &c.pixel_spacing_cm)
        .add("pose_bucket_width", &c.pose_bucket_width);
    return f;
}

inline JsonFields fields(SslTrainConfig& c)
{
    JsonFields f;
    f.add("lr", &c.lr)
        .add("batch", &c.batch)
        .add("epochs", &c.epochs)
        .add("steps_per_epoch", &c.steps_per_epoch)
        .add("temperature", &c.temperature)
        .add("l2_weight", &c.l2_weight)
        .add("dropout", &c.dropout)
        .add("crop_margin", &c.augment.crop_margin)
        .add("flip_probability", &c.augment.flip_probability);
    return f;
}

inline JsonFields fields(ClfTrainConfig& c)
{
    JsonFields f;
    f.add("lr", &c.lr)
        .add("batch", &c.batch)
        .add("epochs", &c.epochs)
        .add("l2_weight", &c.l2_weight)
        .add("dropout", &c.dropout);
    return f;
}

inline JsonFields fields(PairConfig& c)
{
    JsonFields f;
    f.add("negatives_per_positive", &c.negatives_per_positive);
    return f;
}

/// Everything a run needs. Defaults are the full-scale training hyperparameters; the
/// single seed drives every random stream.
struct RunConfig {
    std::uint64_t seed = 0;
    PhantomConfig phantom;
    SslTrainConfig ssl;
    ClfTrainConfig classifier;
    ClfTrainConfig supervised{1e-4, 42, 10, 1e-5, 0.2, 0};
    PairConfig pairs;

    /// Propagates the run seed into the sections and validates them.
    void finalize()
    {
        phantom.seed = seed;
        ssl.seed = seed;
        classifier.seed = seed;
        supervised.seed = seed;
        phantom.validate();
        ssl.validate();
        classifier.validate();
        supervised.validate();
        pairs.validate();
    }
};

inline nlohmann::ordered_json to_json(RunConfig c)
{
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["phantom"] = fields(c.phantom).write();
    j["ssl"] = fields(c.ssl).write();
    j["classifier"] = fields(c.classifier).write();
    j["supervised"] = fields(c.supervised).write();
    j["pairs"] = fields(c.pairs).write();
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig c;
    if (!j.is_object()) {
        throw ConfigError("config: expected a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") {
            if (!value.is_number_unsigned()) {
                throw ConfigError("config.seed: expected a non-negative integer");
            }
            c.seed = value.get<std::uint64_t>();
        } else if (key == "phantom") {
            fields(c.phantom).read(value, key);
        } else if (key == "ssl") {
            fields(c.ssl).read(value, key);
        } else if (key == "classifier") {
            fields(c.classifier).read(value, key);
        } else if (key == "supervised") {
            fields(c.supervised).read(value, key);
        } else if (key == "pairs") {
            fields(c.pairs).read(value, key);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    c.finalize();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    try {
        return run_config_from_json(read_json(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace viewret
