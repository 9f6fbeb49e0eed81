// Command-line entry point for the full pipeline: dataset derivation,
// synthetic scene generation, two-stage training, evaluation, single-image
// prediction and architecture auditing.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wsss/config.hpp"
#include "wsss/data.hpp"
#include "wsss/errors.hpp"
#include "wsss/evaluation.hpp"
#include "wsss/image_io.hpp"
#include "wsss/kernels.hpp"
#include "wsss/models.hpp"
#include "wsss/training.hpp"

namespace fs = std::filesystem;
using namespace wsss;

namespace {

struct Cli {
    config::RunConfig rc;

    // derive-data
    std::string pos_dir, neg_dir;
    int n_both = 0, n_pos = 0, n_neg = 0;
    double split_ratio = 0.8;

    // gen-synth
    int n_synth = 0;
    int fg_classes = 1;

    // train / eval / predict
    std::string train_manifest_path, val_manifest_path;
    std::string classifier_dir, checkpoint_dir, resume_dir;
    std::string image_path;
    int figure_samples = 50;
    int eval_batch = 8;

    bool image_size_given = false;
};

std::string default_out(const std::string& kind, uint64_t seed) {
    return config::default_out_root() + "/" + kind + "-seed" + std::to_string(seed);
}

int cmd_derive_data(Cli& c) {
    if (c.n_both > 0) c.n_pos = c.n_neg = c.n_both;
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("derive", c.rc.seed);
    auto [train, val] = data::derive_tagged_dataset(c.pos_dir, c.neg_dir, c.n_pos, c.n_neg, c.rc.image_size,
                                                    c.rc.image_size, c.split_ratio, c.rc.seed, c.rc.out_dir);
    train.save(c.rc.out_dir + "/train.manifest");
    val.save(c.rc.out_dir + "/val.manifest");
    std::cout << "derived " << train.entries.size() << " train / " << val.entries.size() << " val entries into "
              << c.rc.out_dir << "\n";
    return 0;
}

int cmd_gen_synth(Cli& c) {
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("synth", c.rc.seed);
    c.rc.synth.num_foreground_classes = c.fg_classes;
    c.rc.classes = c.fg_classes + 1;
    data::DatasetManifest all = data::generate_synthetic(c.rc.synth, c.n_synth, c.rc.seed, c.rc.out_dir);
    auto [train, val] = data::split_manifest(all, c.split_ratio, c.rc.seed);
    train.save(c.rc.out_dir + "/train.manifest");
    val.save(c.rc.out_dir + "/val.manifest");
    c.rc.save(c.rc.out_dir + "/config.json");
    std::cout << "generated " << all.entries.size() << " scenes (" << train.entries.size() << " train / "
              << val.entries.size() << " val) into " << c.rc.out_dir << "\n";
    return 0;
}

int cmd_train_classifier(Cli& c) {
    data::DatasetManifest train = data::DatasetManifest::load(c.train_manifest_path);
    std::optional<data::DatasetManifest> val;
    if (!c.val_manifest_path.empty()) val = data::DatasetManifest::load(c.val_manifest_path);
    c.rc.classes = train.num_classes;
    if (!c.image_size_given) c.rc.image_size = train.height;
    c.rc.train.stage = "classifier";
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("classifier", c.rc.seed);
    c.rc.resolve();
    c.rc.train.checkpoint_dir = c.rc.out_dir;
    c.rc.save(c.rc.out_dir + "/config.json");

    models::ResNetClassifier g = models::build_classifier(c.rc.classes, false, c.rc.classifier_width, c.rc.seed);
    training::RunLog log = training::train_classifier(g, train, val ? &*val : nullptr, c.rc.train);
    for (auto it = log.records().rbegin(); it != log.records().rend(); ++it)
        if (it->kind == "val") {
            std::cout << "final val tag accuracy: " << it->tag_accuracy << "\n";
            break;
        }
    std::cout << "classifier checkpoints under " << c.rc.out_dir << "/checkpoints\n";
    return 0;
}

int cmd_train(Cli& c) {
    data::DatasetManifest train = data::DatasetManifest::load(c.train_manifest_path);
    std::optional<data::DatasetManifest> val;
    if (!c.val_manifest_path.empty()) val = data::DatasetManifest::load(c.val_manifest_path);
    c.rc.classes = train.num_classes;
    if (!c.image_size_given) c.rc.image_size = train.height;
    c.rc.train.stage = "joint";
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("joint", c.rc.seed);
    c.rc.resolve();
    c.rc.train.checkpoint_dir = c.rc.out_dir;
    c.rc.save(c.rc.out_dir + "/config.json");
    models::ModelSpec spec = c.rc.segmenter_spec();

    if (!c.resume_dir.empty()) {
        training::JointState st = training::resume(c.resume_dir, spec, c.rc.train);
        if (!st.info.note.empty()) std::cout << "resumed with config changes: " << st.info.note << "\n";
        training::train_joint(st.seg, st.g, train, val ? &*val : nullptr, c.rc.train, &st.info);
        std::cout << "resumed run complete; checkpoints under " << c.rc.out_dir << "/checkpoints\n";
        return 0;
    }

    if (c.classifier_dir.empty() || !fs::exists(c.classifier_dir + "/classifier_manifest.json"))
        throw ConfigError("no classifier checkpoint at '" + c.classifier_dir +
                          "': train-classifier must run first (the guidance loss needs a trained, frozen g)");
    models::ResNetClassifier g = models::load_classifier(c.classifier_dir);
    models::Segmenter seg(spec, c.rc.seed);
    training::train_joint(seg, g, train, val ? &*val : nullptr, c.rc.train);
    std::cout << "joint training complete; checkpoints under " << c.rc.out_dir << "/checkpoints\n";
    return 0;
}

int cmd_eval(Cli& c) {
    data::DatasetManifest manifest = data::DatasetManifest::load(c.train_manifest_path);
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("eval", c.rc.seed);
    evaluation::EvalReport report =
        evaluation::evaluate_run(c.checkpoint_dir, manifest, c.rc.out_dir, c.figure_samples, c.rc.seed, c.eval_batch);
    std::cout << report.text;
    std::cout << "report and figures under " << c.rc.out_dir << "\n";
    return 0;
}

int cmd_predict(Cli& c) {
    if (c.rc.out_dir.empty()) c.rc.out_dir = default_out("predict", c.rc.seed);
    fs::create_directories(c.rc.out_dir);
    models::Segmenter seg = models::load_segmenter(c.checkpoint_dir);
    Tensor img = imageio::read_image(c.image_path);
    const int h = seg.spec().input_size[1], w = seg.spec().input_size[2];
    img = imageio::resize_bilinear(img, h, w);
    Tensor batch({1, 3, h, w}, std::vector<double>(img.data(), img.data() + img.size()));
    auto [labels, probs] = evaluation::predict_mask(seg, core::ImageBatch::checked(batch));
    Tensor lab({h, w}, std::vector<double>(labels.data(), labels.data() + labels.size()));

    const std::string stem = fs::path(c.image_path).stem().string();
    imageio::write_pgm_labels(c.rc.out_dir + "/" + stem + "_labels.pgm", lab);
    auto grids = evaluation::render_overlay_grid({img}, {lab}, 1, 1, 1, seg.num_classes());
    imageio::write_ppm(c.rc.out_dir + "/" + stem + "_overlay.ppm", grids.overlay);
    std::cout << "wrote " << c.rc.out_dir << "/" << stem << "_labels.pgm and _overlay.ppm\n";
    return 0;
}

int cmd_check_arch(Cli& c) {
    c.rc.resolve();
    models::ModelSpec spec = c.rc.segmenter_spec();
    models::Segmenter seg(spec, 0, /*random_init=*/false);
    models::ParamTable table = seg.param_table();
    std::cout << models::param_table_text(table);
    models::ResNetClassifier g(c.rc.classes, c.rc.classifier_width, 0);
    std::cout << models::param_table_text(g.param_table());

    bool ok = true;
    for (const auto& row : table.rows) ok &= row.declared == row.actual;

    if (c.rc.scale == "paper" && c.rc.classes == 2 && c.rc.image_size == 224) {
        // published reference counts for the 224x224 binary configuration
        const long long ref_encoder[] = {38720, 221440, 885248, 3539968, 4719616};
        const long long ref_decoder_x[] = {9438208, 2359808, 590080, 147584, 36928, 3462};
        const long long ref_enc_total = 9404992, ref_dx_total = 12576070;
        size_t ei = 0, xi = 0;
        long long enc_total = 0, dx_total = 0;
        for (const auto& row : table.rows) {
            if (row.section == "encoder") {
                enc_total += row.actual;
                if (ei >= 5 || row.actual != ref_encoder[ei]) ok = false;
                ++ei;
            } else if (row.section == "decoder_x") {
                dx_total += row.actual;
                if (xi >= 6 || row.actual != ref_decoder_x[xi]) ok = false;
                ++xi;
            }
        }
        ok &= enc_total == ref_enc_total && dx_total == ref_dx_total;
        std::cout << "reference check: encoder " << enc_total << " vs " << ref_enc_total << ", decomposition decoder "
                  << dx_total << " vs " << ref_dx_total << (ok ? "  [match]" : "  [MISMATCH]") << "\n";
    }
    std::cout << "backend: " << (kernels::backend() == kernels::Backend::OpenMP ? "openmp" : "serial") << " ("
              << kernels::thread_count() << " threads)\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weak segmentation by image decomposition and reconstruction"};
    app.require_subcommand(1);
    Cli c;

    // defaults depend on the subcommand; the config file loads before flags
    std::string subname = argc > 1 ? argv[1] : "";
    if (subname == "train-classifier") c.rc.train.batch_size = 32;
    if (subname == "check-arch") c.rc.scale = "paper";
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (!config_path.empty()) {
        try {
            c.rc.merge_json_file(config_path);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", c.rc.seed, "deterministic run seed");
        sub->add_option("--out", c.rc.out_dir, "output directory (default $WSSS_OUT_ROOT/<cmd>-seed<seed>)");
        sub->add_option("--config", config_path, "JSON config file; flags override its values");
    };

    CLI::App* derive = app.add_subcommand("derive-data", "tag-label a positive/negative image folder pair");
    derive->add_option("--pos", c.pos_dir, "directory of positive-class images")->required();
    derive->add_option("--neg", c.neg_dir, "directory of negative images")->required();
    derive->add_option("--n", c.n_both, "images per population");
    derive->add_option("--n-pos", c.n_pos, "positive image count");
    derive->add_option("--n-neg", c.n_neg, "negative image count");
    derive->add_option("--size", c.rc.image_size, "square output size (default 224)");
    derive->add_option("--split", c.split_ratio, "train fraction");
    add_common(derive);
    derive->callback([&] {
        if (c.n_both <= 0 && (c.n_pos <= 0 || c.n_neg <= 0))
            throw CLI::ValidationError("--n (or --n-pos/--n-neg) must be positive");
        if (c.rc.image_size == 0) c.rc.image_size = 224;
        std::exit(cmd_derive_data(c));
    });

    CLI::App* synth = app.add_subcommand("gen-synth", "generate a synthetic shapes dataset with ground-truth masks");
    synth->add_option("--n", c.n_synth, "number of scenes")->required()->check(CLI::PositiveNumber);
    synth->add_option("--size", c.rc.synth.height, "canvas size (default 64)");
    synth->add_option("--classes", c.fg_classes, "foreground class count (default 1)");
    synth->add_option("--split", c.split_ratio, "train fraction");
    synth->add_option("--presence", c.rc.synth.foreground_presence_probability, "per-class presence probability");
    synth->add_option("--min-size", c.rc.synth.min_size_frac, "min shape extent fraction");
    synth->add_option("--max-size", c.rc.synth.max_size_frac, "max shape extent fraction");
    synth->add_option("--shapes-min", c.rc.synth.min_shapes_per_class, "min shapes per present class");
    synth->add_option("--shapes-max", c.rc.synth.max_shapes_per_class, "max shapes per present class");
    synth->add_flag("--soft-labels", c.rc.synth.soft_labels, "emit normalized-area labels");
    synth->add_flag("--nuisance", c.rc.synth.correlated_nuisance, "paint correlated distractors");
    add_common(synth);
    synth->callback([&] {
        c.rc.synth.width = c.rc.synth.height;
        c.rc.image_size = c.rc.synth.height;
        std::exit(cmd_gen_synth(c));
    });

    CLI::App* trainc = app.add_subcommand("train-classifier", "stage 1: train the tag classifier g");
    trainc->add_option("--train-manifest", c.train_manifest_path, "training manifest")->required();
    trainc->add_option("--val-manifest", c.val_manifest_path, "validation manifest");
    trainc->add_option("--epochs", c.rc.train.epochs, "training epochs");
    trainc->add_option("--batch", c.rc.train.batch_size, "batch size");
    trainc->add_option("--lr", c.rc.train.learning_rate, "Adam learning rate");
    trainc->add_option("--scale", c.rc.scale, "desk|paper model scale");
    trainc->add_option("--width", c.rc.classifier_width, "classifier base width (0 = scale default)");
    add_common(trainc);
    trainc->callback([&] { std::exit(cmd_train_classifier(c)); });

    CLI::App* train = app.add_subcommand("train", "stage 2: joint mask/decomposition training with frozen g");
    train->add_option("--train-manifest", c.train_manifest_path, "training manifest")->required();
    train->add_option("--val-manifest", c.val_manifest_path, "validation manifest");
    train->add_option("--classifier", c.classifier_dir, "classifier checkpoint directory (from train-classifier)");
    train->add_option("--resume", c.resume_dir, "joint checkpoint directory to resume from");
    train->add_option("--epochs", c.rc.train.epochs, "training epochs");
    train->add_option("--batch", c.rc.train.batch_size, "batch size");
    train->add_option("--lr", c.rc.train.learning_rate, "Adam learning rate");
    train->add_option("--lambda-m", c.rc.train.lambda_m, "mask loss weight");
    train->add_option("--lambda-c", c.rc.train.lambda_c, "guidance loss weight");
    train->add_option("--eval-every", c.rc.train.eval_every, "extra validation every N steps");
    train->add_option("--scale", c.rc.scale, "desk|paper model scale");
    auto* size_opt = train->add_option("--image-size", c.rc.image_size, "override model input size");
    add_common(train);
    train->callback([&] {
        c.image_size_given = size_opt->count() > 0;
        std::exit(cmd_train(c));
    });

    CLI::App* evalc = app.add_subcommand("eval", "run metrics and overlay grids from a checkpoint");
    evalc->add_option("--checkpoint", c.checkpoint_dir, "checkpoint directory")->required();
    evalc->add_option("--manifest", c.train_manifest_path, "manifest to evaluate")->required();
    evalc->add_option("--samples", c.figure_samples, "samples per overlay grid");
    evalc->add_option("--batch", c.eval_batch, "inference batch size");
    add_common(evalc);
    evalc->callback([&] { std::exit(cmd_eval(c)); });

    CLI::App* predict = app.add_subcommand("predict", "segment a single image");
    predict->add_option("--checkpoint", c.checkpoint_dir, "checkpoint directory")->required();
    predict->add_option("--image", c.image_path, "input image (PPM/PGM)")->required();
    add_common(predict);
    predict->callback([&] { std::exit(cmd_predict(c)); });

    CLI::App* arch = app.add_subcommand("check-arch", "print the parameter table and audit it");
    arch->add_option("--scale", c.rc.scale, "desk|paper (default paper)");
    arch->add_option("--classes", c.rc.classes, "class count K");
    arch->add_option("--size", c.rc.image_size, "input size (0 = scale default)");
    add_common(arch);
    arch->callback([&] { std::exit(cmd_check_arch(c)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
