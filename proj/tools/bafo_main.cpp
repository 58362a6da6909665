// Command-line front end: train, synth-data, conceal, reveal, grid, eval.
// Every run prints its fully resolved configuration (flag > config file >
// default) before doing anything, so any result can be reproduced from the
// log alone.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bafo/checkpoint.hpp"
#include "bafo/conceal.hpp"
#include "bafo/cvae.hpp"
#include "bafo/dataset.hpp"
#include "bafo/image_io.hpp"
#include "bafo/probe.hpp"

namespace fs = std::filesystem;

namespace {

std::string trim_ws(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// key=value lines with '#' comments. Command-line flags win over file
// values; file values win over built-in defaults.
void apply_config_file(CLI::App* sub, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw bafo::IoError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim_ws(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw bafo::ConfigError(path + ":" + std::to_string(lineno) +
                                    ": expected key=value, got '" + line + "'");
        }
        std::string key = trim_ws(line.substr(0, eq));
        std::string value = trim_ws(line.substr(eq + 1));
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config") {
            throw bafo::ConfigError(path + ":" + std::to_string(lineno) +
                                    ": unknown key '" + key + "' for " +
                                    sub->get_name());
        }
        if (opt->count() > 0) continue;  // explicit flag wins
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw bafo::ConfigError(path + ":" + std::to_string(lineno) +
                                    ": bad value for '" + key + "': " + e.what());
        }
    }
}

void handle_config_option(CLI::App* sub, const std::string& config_path) {
    if (!config_path.empty()) apply_config_file(sub, config_path);
}

void print_resolved_config(const CLI::App* sub) {
    std::cout << "resolved config (" << sub->get_name() << "):\n";
    for (const CLI::Option* opt : sub->get_options()) {
        std::string name = opt->get_name();
        if (name == "--help" || name.empty()) continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            for (std::size_t i = 0; i < results.size(); ++i) {
                if (i) value += ",";
                value += results[i];
            }
        } else {
            value = opt->get_default_str();
        }
        std::cout << "  " << name << " = " << value << "\n";
    }
    std::cout << std::flush;
}

bafo::NumericMode parse_mode(const std::string& mode) {
    if (mode == "f32") return bafo::NumericMode::f32;
    if (mode == "f64") return bafo::NumericMode::f64;
    throw bafo::ConfigError("--mode must be f32 or f64, got '" + mode + "'");
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw bafo::ConfigError(std::string("bad ") + what + " entry '" +
                                    tok + "'");
        }
    }
    if (out.empty()) {
        throw bafo::ConfigError(std::string("empty ") + what + " list");
    }
    return out;
}

std::vector<double> parse_gender_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "neutral") {
            out.push_back(0.5);
            continue;
        }
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw bafo::ConfigError("bad gender entry '" + tok + "'");
        }
        if (out.back() < 0.0 || out.back() > 1.0) {
            throw bafo::ConfigError("gender must lie in [0,1], got " + tok);
        }
    }
    if (out.empty()) throw bafo::ConfigError("empty gender list");
    return out;
}

bafo::AttributeVector make_target_attrs(int age, const std::string& gender,
                                        const std::string& origin) {
    if (age < 0 || age > bafo::kMaxAge) {
        throw bafo::ConfigError("--age must lie in 0.." +
                                std::to_string(bafo::kMaxAge));
    }
    bafo::AttributeVector attrs;
    attrs.age_norm = static_cast<double>(age) / bafo::kMaxAge;
    if (gender == "neutral") {
        attrs.gender = 0.5;
    } else {
        attrs.gender = std::stod(gender);
    }
    if (origin == "neutral") {
        attrs.origin.fill(1.0 / bafo::kOriginClasses);
    } else {
        int idx = std::stoi(origin);
        if (idx < 0 || idx >= bafo::kOriginClasses) {
            throw bafo::ConfigError("--origin must be 0.." +
                                    std::to_string(bafo::kOriginClasses - 1) +
                                    " or 'neutral'");
        }
        attrs.origin.fill(0.0);
        attrs.origin[idx] = 1.0;
    }
    attrs.validate();
    return attrs;
}

bafo::CvaeModel load_model_checked(const std::string& path, int latent_dim_flag) {
    bafo::CvaeModel model = bafo::load_checkpoint(path);
    if (latent_dim_flag > 0 && latent_dim_flag != model.latent_dim()) {
        throw bafo::ConfigError(
            "checkpoint has latent_dim " + std::to_string(model.latent_dim()) +
            " but --latent-dim " + std::to_string(latent_dim_flag) +
            " was requested");
    }
    bafo::set_engine_mode(model.config.numeric_mode);
    return model;
}

bafo::DatasetSplit load_data_arg(const std::string& data, int synth_n,
                                 int image_side, std::uint64_t seed) {
    if (data == "synth") {
        return bafo::synth_generate(synth_n, image_side, seed);
    }
    return bafo::load_dataset(data, image_side, seed);
}

struct TrainArgs {
    std::string config_path;
    std::string data = "synth";
    int synth_n = 2000;
    std::string out = "model.bafo";
    std::string loss_csv;
    int latent_dim = 48;
    int image_side = 56;
    int batch_size = 32;
    int epochs = 20;
    int base_channels = 32;
    double lr = 1e-3;
    double beta = 1.0;
    std::uint64_t seed = 1;
    std::string mode = "f32";
};

int run_train(const TrainArgs& args) {
    bafo::CvaeConfig config;
    config.latent_dim = args.latent_dim;
    config.image_side = args.image_side;
    config.batch_size = args.batch_size;
    config.epochs = args.epochs;
    config.lr = args.lr;
    config.beta = args.beta;
    config.seed = args.seed;
    config.numeric_mode = parse_mode(args.mode);
    config.validate();
    bafo::set_engine_mode(config.numeric_mode);

    bafo::DatasetSplit split = load_data_arg(args.data, args.synth_n,
                                             args.image_side, args.seed);
    std::cout << "dataset: " << split.train.size() << " train / "
              << split.test.size() << " test\n";

    bafo::CvaeModel model = bafo::make_cvae_model(config, args.base_channels);
    std::ofstream csv;
    if (!args.loss_csv.empty()) {
        csv.open(args.loss_csv);
        if (!csv) throw bafo::IoError("cannot open " + args.loss_csv);
        csv << "epoch,recon,kl,total\n";
        csv.precision(17);
    }
    bafo::train(model, split.train, config, [&](const bafo::EpochStats& e) {
        std::cout << "epoch " << e.epoch << ": recon=" << e.recon
                  << " kl=" << e.kl << " total=" << e.total << "\n";
        if (csv.is_open()) {
            csv << e.epoch << "," << e.recon << "," << e.kl << "," << e.total
                << "\n";
            csv.flush();
        }
    });
    bafo::save_checkpoint(model, args.out);
    std::cout << "checkpoint written to " << args.out << "\n";
    return 0;
}

struct SynthArgs {
    std::string config_path;
    int n = 100;
    int image_side = 28;
    std::uint64_t seed = 1;
    std::string out;
};

int run_synth_data(const SynthArgs& args) {
    bafo::set_engine_mode(bafo::NumericMode::f32);
    bafo::DatasetSplit split = bafo::synth_generate(args.n, args.image_side,
                                                    args.seed);
    fs::create_directories(args.out);
    std::ofstream manifest(fs::path(args.out) / "manifest.csv");
    if (!manifest) throw bafo::IoError("cannot write manifest.csv");
    manifest << "source_id,age,gender,race,split\n";
    auto dump = [&](const std::vector<bafo::LabeledImage>& items,
                    const char* split_name) {
        for (const bafo::LabeledImage& img : items) {
            int race = 0;
            for (int i = 1; i < bafo::kOriginClasses; ++i) {
                if (img.attrs.origin[i] > img.attrs.origin[race]) race = i;
            }
            int age = img.attrs.age_years();
            int gender = static_cast<int>(std::lround(img.attrs.gender));
            std::string name = std::to_string(age) + "_" +
                               std::to_string(gender) + "_" +
                               std::to_string(race) + "_" + img.source_id +
                               ".png";
            bafo::image_write(fs::path(args.out) / name, img.pixels);
            manifest << img.source_id << "," << age << "," << gender << ","
                     << race << "," << split_name << "\n";
        }
    };
    dump(split.train, "train");
    dump(split.test, "test");
    std::cout << "wrote " << (split.train.size() + split.test.size())
              << " images to " << args.out << "\n";
    return 0;
}

struct ConcealArgs {
    std::string config_path;
    std::string ckpt;
    std::vector<std::string> images;
    std::string dir;
    std::string out = ".";
    std::string mode = "mean";
    std::uint64_t sample_seed = 0;
    std::int64_t timestamp = 0;
    int latent_dim = 0;
};

int run_conceal(const ConcealArgs& args) {
    bafo::CvaeModel model = load_model_checked(args.ckpt, args.latent_dim);
    bafo::ConcealMode mode;
    if (args.mode == "mean") {
        mode = bafo::ConcealMode::Mean;
    } else if (args.mode == "sample") {
        mode = bafo::ConcealMode::Sample;
    } else {
        throw bafo::ConfigError("--mode must be mean or sample");
    }
    std::vector<fs::path> paths;
    for (const std::string& p : args.images) paths.emplace_back(p);
    if (!args.dir.empty()) {
        for (const auto& entry : fs::directory_iterator(args.dir)) {
            if (entry.is_regular_file()) paths.push_back(entry.path());
        }
        std::sort(paths.begin(), paths.end());
    }
    if (paths.empty()) {
        throw bafo::ConfigError("no input images (use --image or --dir)");
    }
    fs::create_directories(args.out);
    int written = 0;
    for (const fs::path& p : paths) {
        bafo::Tensor image;
        try {
            image = bafo::crop_resize(bafo::image_read(p), model.image_side());
        } catch (const bafo::CodecError& e) {
            std::cerr << "skipping " << p.string() << ": " << e.what() << "\n";
            continue;
        }
        std::vector<double> v = image.to_vector();
        bafo::Tensor batch = bafo::Tensor::from_values(
            {1, 3, model.image_side(), model.image_side()}, v);
        bafo::ConcealedRecord record =
            bafo::conceal(model, batch, mode, args.sample_seed,
                          p.filename().string(), args.timestamp);
        fs::path out = fs::path(args.out) / (p.stem().string() + ".bfr");
        bafo::save_record(record, out);
        ++written;
    }
    std::cout << "wrote " << written << " record(s) to " << args.out << "\n";
    return 0;
}

struct RevealArgs {
    std::string config_path;
    std::string ckpt;
    std::string record;
    int age = 40;
    std::string gender = "0";
    std::string origin = "neutral";
    std::string out = "revealed.png";
    int latent_dim = 0;
};

int run_reveal(const RevealArgs& args) {
    bafo::CvaeModel model = load_model_checked(args.ckpt, args.latent_dim);
    bafo::ConcealedRecord record = bafo::load_record(args.record);
    bafo::AttributeVector target = make_target_attrs(args.age, args.gender,
                                                     args.origin);
    bafo::Tensor image = bafo::reveal(model, record, target);
    std::vector<double> v = image.to_vector();
    bafo::Tensor plain = bafo::Tensor::from_values(
        {3, model.image_side(), model.image_side()}, v);
    bafo::image_write(args.out, plain);
    std::cout << "revealed " << args.record << " -> " << args.out << "\n";
    return 0;
}

struct GridArgs {
    std::string config_path;
    std::string ckpt;
    std::string image;
    std::string ages = "1,20,40,60,80";
    std::string genders = "0,1";
    std::string origin = "neutral";
    std::string out = "grid.png";
    int latent_dim = 0;
};

int run_grid(const GridArgs& args) {
    bafo::CvaeModel model = load_model_checked(args.ckpt, args.latent_dim);
    bafo::Tensor image = bafo::crop_resize(bafo::image_read(args.image),
                                           model.image_side());
    std::vector<int> ages = parse_int_list(args.ages, "--ages");
    std::vector<double> genders = parse_gender_list(args.genders);
    bafo::AttributeVector origin_attrs =
        make_target_attrs(0, "0", args.origin);
    bafo::Tensor grid = bafo::render_grid(model, image, ages, genders,
                                          origin_attrs);
    bafo::image_write(args.out, grid);
    std::cout << "grid with " << (1 + ages.size() * genders.size())
              << " tiles -> " << args.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string config_path;
    std::string ckpt;
    std::string data = "synth";
    int synth_n = 2000;
    std::uint64_t seed = 1;
    std::string ages = "1,20,40,60,80";
    std::string out = "eval";
    int latent_dim = 0;
};

int run_eval(const EvalArgs& args) {
    bafo::CvaeModel model = load_model_checked(args.ckpt, args.latent_dim);
    bafo::DatasetSplit split = load_data_arg(args.data, args.synth_n,
                                             model.image_side(), args.seed);
    std::vector<int> ages = parse_int_list(args.ages, "--ages");
    fs::create_directories(args.out);

    bafo::LeakageReport leakage = bafo::leakage_report(model, split, args.seed);
    {
        std::ofstream f(fs::path(args.out) / "leakage.csv");
        f << leakage.to_csv();
        std::ofstream t(fs::path(args.out) / "leakage.txt");
        t << leakage.to_text();
    }
    std::cout << leakage.to_text() << "\n";

    bafo::ObedienceReport obedience =
        bafo::obedience_report(model, split, ages, args.seed);
    {
        std::ofstream f(fs::path(args.out) / "obedience.csv");
        f << obedience.to_csv();
        std::ofstream t(fs::path(args.out) / "obedience.txt");
        t << obedience.to_text();
    }
    std::cout << obedience.to_text();
    std::cout << "reports written to " << args.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind conditional VAE toolkit: conceal image attributes, "
                 "reveal under chosen ones, audit the leakage"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", train_args.config_path,
                      "key=value config file");
    train->add_option("--data", train_args.data,
                      "dataset directory, or 'synth'")->capture_default_str();
    train->add_option("--synth-n", train_args.synth_n,
                      "synthetic dataset size")->capture_default_str();
    train->add_option("--out", train_args.out, "checkpoint path")
        ->capture_default_str();
    train->add_option("--loss-csv", train_args.loss_csv,
                      "write per-epoch losses here")->capture_default_str();
    train->add_option("--latent-dim", train_args.latent_dim, "latent size")
        ->capture_default_str();
    train->add_option("--image-side", train_args.image_side, "28 or 56")
        ->capture_default_str();
    train->add_option("--batch-size", train_args.batch_size, "")
        ->capture_default_str();
    train->add_option("--epochs", train_args.epochs, "")->capture_default_str();
    train->add_option("--base-channels", train_args.base_channels,
                      "first conv width")->capture_default_str();
    train->add_option("--lr", train_args.lr, "Adam learning rate")
        ->capture_default_str();
    train->add_option("--beta", train_args.beta, "KL weight")
        ->capture_default_str();
    train->add_option("--seed", train_args.seed, "master seed")
        ->capture_default_str();
    train->add_option("--mode", train_args.mode, "f32 or f64")
        ->capture_default_str();

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth-data",
                                         "generate a synthetic dataset");
    synth->add_option("--config", synth_args.config_path,
                      "key=value config file");
    synth->add_option("--n", synth_args.n, "number of images")
        ->capture_default_str();
    synth->add_option("--image-side", synth_args.image_side, "")
        ->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "")->capture_default_str();
    synth->add_option("--out", synth_args.out, "output directory")->required();

    ConcealArgs conceal_args;
    CLI::App* conceal = app.add_subcommand("conceal",
                                           "images -> latent record files");
    conceal->add_option("--config", conceal_args.config_path,
                        "key=value config file");
    conceal->add_option("--ckpt", conceal_args.ckpt, "checkpoint")->required();
    conceal->add_option("--image", conceal_args.images,
                        "input image (repeatable)");
    conceal->add_option("--dir", conceal_args.dir, "conceal a whole directory")
        ->capture_default_str();
    conceal->add_option("--out", conceal_args.out, "output directory")
        ->capture_default_str();
    conceal->add_option("--mode", conceal_args.mode, "mean or sample")
        ->capture_default_str();
    conceal->add_option("--sample-seed", conceal_args.sample_seed, "")
        ->capture_default_str();
    conceal->add_option("--timestamp", conceal_args.timestamp,
                        "created_at to store (0 keeps records reproducible)")
        ->capture_default_str();
    conceal->add_option("--latent-dim", conceal_args.latent_dim,
                        "assert the checkpoint's latent size")
        ->capture_default_str();

    RevealArgs reveal_args;
    CLI::App* reveal = app.add_subcommand("reveal",
                                          "record + target attributes -> image");
    reveal->add_option("--config", reveal_args.config_path,
                       "key=value config file");
    reveal->add_option("--ckpt", reveal_args.ckpt, "checkpoint")->required();
    reveal->add_option("--record", reveal_args.record, "record file")
        ->required();
    reveal->add_option("--age", reveal_args.age, "target age in years")
        ->capture_default_str();
    reveal->add_option("--gender", reveal_args.gender,
                       "0..1 or 'neutral'")->capture_default_str();
    reveal->add_option("--origin", reveal_args.origin,
                       "0-4 or 'neutral'")->capture_default_str();
    reveal->add_option("--out", reveal_args.out, "output image")
        ->capture_default_str();
    reveal->add_option("--latent-dim", reveal_args.latent_dim,
                       "assert the checkpoint's latent size")
        ->capture_default_str();

    GridArgs grid_args;
    CLI::App* grid = app.add_subcommand("grid",
                                        "image -> age x gender reveal grid");
    grid->add_option("--config", grid_args.config_path,
                     "key=value config file");
    grid->add_option("--ckpt", grid_args.ckpt, "checkpoint")->required();
    grid->add_option("--image", grid_args.image, "input image")->required();
    grid->add_option("--ages", grid_args.ages, "comma list of ages")
        ->capture_default_str();
    grid->add_option("--genders", grid_args.genders, "comma list of genders")
        ->capture_default_str();
    grid->add_option("--origin", grid_args.origin, "0-4 or 'neutral'")
        ->capture_default_str();
    grid->add_option("--out", grid_args.out, "output image")
        ->capture_default_str();
    grid->add_option("--latent-dim", grid_args.latent_dim,
                     "assert the checkpoint's latent size")
        ->capture_default_str();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval",
                                        "leakage and obedience reports");
    eval->add_option("--config", eval_args.config_path,
                     "key=value config file");
    eval->add_option("--ckpt", eval_args.ckpt, "checkpoint")->required();
    eval->add_option("--data", eval_args.data, "dataset directory or 'synth'")
        ->capture_default_str();
    eval->add_option("--synth-n", eval_args.synth_n, "")
        ->capture_default_str();
    eval->add_option("--seed", eval_args.seed, "")->capture_default_str();
    eval->add_option("--ages", eval_args.ages, "target ages")
        ->capture_default_str();
    eval->add_option("--out", eval_args.out, "report directory")
        ->capture_default_str();
    eval->add_option("--latent-dim", eval_args.latent_dim,
                     "assert the checkpoint's latent size")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            handle_config_option(train, train_args.config_path);
            print_resolved_config(train);
            return run_train(train_args);
        }
        if (synth->parsed()) {
            handle_config_option(synth, synth_args.config_path);
            print_resolved_config(synth);
            return run_synth_data(synth_args);
        }
        if (conceal->parsed()) {
            handle_config_option(conceal, conceal_args.config_path);
            print_resolved_config(conceal);
            return run_conceal(conceal_args);
        }
        if (reveal->parsed()) {
            handle_config_option(reveal, reveal_args.config_path);
            print_resolved_config(reveal);
            return run_reveal(reveal_args);
        }
        if (grid->parsed()) {
            handle_config_option(grid, grid_args.config_path);
            print_resolved_config(grid);
            return run_grid(grid_args);
        }
        if (eval->parsed()) {
            handle_config_option(eval, eval_args.config_path);
            print_resolved_config(eval);
            return run_eval(eval_args);
        }
    } catch (const bafo::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
