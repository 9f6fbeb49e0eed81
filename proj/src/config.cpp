#include "wsss/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "wsss/errors.hpp"

namespace wsss::config {

using nlohmann::json;

void RunConfig::resolve() {
    if (scale != "desk" && scale != "paper") throw ConfigError("scale must be desk or paper, got " + scale);
    if (classes < 2) throw ConfigError("need K >= 2 classes");
    if (image_size == 0) image_size = scale == "paper" ? 224 : 64;
    if (classifier_width == 0) classifier_width = scale == "paper" ? 64 : 8;
    if (image_size % 16 != 0) throw ConfigError("image size must be divisible by 16");
    synth.height = synth.width = image_size;
    train.seed = seed;
    train.validate();
    synth.validate();
}

models::ModelSpec RunConfig::segmenter_spec() const {
    return models::scaled_segmenter_spec(classes, image_size, scale == "paper" ? 64 : 8);
}

namespace {

void merge_train(training::TrainConfig& t, const json& j) {
    if (j.contains("stage")) t.stage = j["stage"].get<std::string>();
    if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("beta1")) t.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) t.beta2 = j["beta2"].get<double>();
    if (j.contains("lambda_m")) t.lambda_m = j["lambda_m"].get<double>();
    if (j.contains("lambda_c")) t.lambda_c = j["lambda_c"].get<double>();
    if (j.contains("eps")) t.eps = j["eps"].get<double>();
    if (j.contains("eval_every")) t.eval_every = j["eval_every"].get<int>();
    if (j.contains("device")) t.device = j["device"].get<std::string>();
}

void merge_synth(data::SyntheticSceneParams& s, const json& j) {
    if (j.contains("num_foreground_classes")) s.num_foreground_classes = j["num_foreground_classes"].get<int>();
    if (j.contains("min_shapes_per_class")) s.min_shapes_per_class = j["min_shapes_per_class"].get<int>();
    if (j.contains("max_shapes_per_class")) s.max_shapes_per_class = j["max_shapes_per_class"].get<int>();
    if (j.contains("min_size_frac")) s.min_size_frac = j["min_size_frac"].get<double>();
    if (j.contains("max_size_frac")) s.max_size_frac = j["max_size_frac"].get<double>();
    if (j.contains("foreground_presence_probability"))
        s.foreground_presence_probability = j["foreground_presence_probability"].get<double>();
    if (j.contains("noise_level")) s.noise_level = j["noise_level"].get<double>();
    if (j.contains("correlated_nuisance")) s.correlated_nuisance = j["correlated_nuisance"].get<bool>();
    if (j.contains("soft_labels")) s.soft_labels = j["soft_labels"].get<bool>();
}

}  // namespace

void RunConfig::merge_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    json j = json::parse(f, nullptr, true, true);  // allow comments
    if (j.contains("scale")) scale = j["scale"].get<std::string>();
    if (j.contains("classes")) classes = j["classes"].get<int>();
    if (j.contains("image_size")) image_size = j["image_size"].get<int>();
    if (j.contains("classifier_width")) classifier_width = j["classifier_width"].get<int>();
    if (j.contains("seed")) seed = j["seed"].get<uint64_t>();
    if (j.contains("out_dir")) out_dir = j["out_dir"].get<std::string>();
    if (j.contains("train")) merge_train(train, j["train"]);
    if (j.contains("synth")) merge_synth(synth, j["synth"]);
}

std::string RunConfig::to_json_text() const {
    json j;
    j["scale"] = scale;
    j["classes"] = classes;
    j["image_size"] = image_size;
    j["classifier_width"] = classifier_width;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["train"] = {{"stage", train.stage},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"lambda_m", train.lambda_m},
                  {"lambda_c", train.lambda_c},
                  {"eps", train.eps},
                  {"eval_every", train.eval_every},
                  {"device", train.device}};
    j["synth"] = {{"num_foreground_classes", synth.num_foreground_classes},
                  {"min_shapes_per_class", synth.min_shapes_per_class},
                  {"max_shapes_per_class", synth.max_shapes_per_class},
                  {"min_size_frac", synth.min_size_frac},
                  {"max_size_frac", synth.max_size_frac},
                  {"foreground_presence_probability", synth.foreground_presence_probability},
                  {"noise_level", synth.noise_level},
                  {"correlated_nuisance", synth.correlated_nuisance},
                  {"soft_labels", synth.soft_labels}};
    return j.dump(2);
}

void RunConfig::save(const std::string& path) const {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config " + path);
    f << to_json_text() << "\n";
}

std::string default_out_root() {
    const char* env = std::getenv("WSSS_OUT_ROOT");
    return env && *env ? env : "runs";
}

}  // namespace wsss::config
