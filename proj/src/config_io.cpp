#include "mfv/config_io.hpp"

#include <json.hpp>

#include <fstream>

#include "mfv/png_io.hpp"  // write_file_atomic

namespace mfv {

using nlohmann::json;

ModelConfig config_from_json_text(const std::string& text, ModelConfig base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail("format", std::string("configuration is not valid JSON: ") + e.what());
    }
    try {
        if (j.contains("levels")) base.levels = j["levels"].get<int>();
        if (j.contains("coarsest_flow_level"))
            base.coarsest_flow_level = j["coarsest_flow_level"].get<int>();
        if (j.contains("flows")) base.flows = j["flows"].get<int>();
        if (j.contains("use_3d")) base.use_3d = j["use_3d"].get<bool>();
        if (j.contains("feature_channels"))
            base.feature_channels = j["feature_channels"].get<std::vector<int>>();
        if (j.contains("mfb_width")) base.mfb_width = j["mfb_width"].get<int>();
        if (j.contains("mfb_depth")) base.mfb_depth = j["mfb_depth"].get<int>();
        if (j.contains("context_channels")) base.context_channels = j["context_channels"].get<int>();
        if (j.contains("synth_channels"))
            base.synth_channels = j["synth_channels"].get<std::vector<int>>();
        if (j.contains("synth_columns")) base.synth_columns = j["synth_columns"].get<int>();
    } catch (const json::exception& e) {
        fail("format", std::string("configuration field has the wrong type: ") + e.what());
    }
    base.validate();
    return base;
}

std::string config_to_json_text(const ModelConfig& cfg) {
    json j{{"levels", cfg.levels},
           {"coarsest_flow_level", cfg.coarsest_flow_level},
           {"flows", cfg.flows},
           {"use_3d", cfg.use_3d},
           {"feature_channels", cfg.feature_channels},
           {"mfb_width", cfg.mfb_width},
           {"mfb_depth", cfg.mfb_depth},
           {"context_channels", cfg.context_channels},
           {"synth_channels", cfg.synth_channels},
           {"synth_columns", cfg.synth_columns}};
    return j.dump(2) + "\n";
}

ModelConfig load_config_file(const std::string& path, ModelConfig base) {
    std::ifstream in(path);
    check(in.good(), "io", "cannot open config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(text, std::move(base));
}

void save_config_file(const std::string& path, const ModelConfig& cfg) {
    std::string text = config_to_json_text(cfg);
    write_file_atomic(path, text.data(), text.size());
}

}  // namespace mfv
