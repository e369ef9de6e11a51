// pgpc: command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.
// Diagnostics go to stderr; results go to files.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "pgpc/codec/codec.hpp"
#include "pgpc/geometry/ply.hpp"
#include "pgpc/metrics/metrics.hpp"
#include "pgpc/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace pgpc;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TemplateModel template_or_toy(const std::string& path) {
    return path.empty() ? make_toy_template() : load_template(path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Lattice clouds pass through; anything else is voxelized on its own bounding box.
PointCloud lattice_input(const std::string& path, int precision) {
    const PointCloud raw = read_ply(path).cloud();
    if (raw.empty()) throw DegenerateInputError(path + " has no points");
    if (is_lattice_cloud(raw, precision)) return canonical_lattice(to_coords(raw), precision);
    std::cerr << "note: " << path << " is not on the 2^" << precision << " lattice; voxelizing\n";
    return voxelize(raw, precision);
}

PlyFormat ply_format(bool ascii) { return ascii ? PlyFormat::ascii : PlyFormat::binary; }

struct EncodeArgs {
    std::string in, out, model, templ, params;
    int precision = 10;
    bool no_prior = false;
    std::uint64_t seed = 1;
    double ratio = 1.0;
    int fit_steps = 200;
};

int run_encode(const EncodeArgs& a) {
    const auto m = load_model<float>(a.model);
    const auto t = template_or_toy(a.templ);
    CodecConfig cfg;
    cfg.use_prior = !a.no_prior;
    cfg.seed = a.seed;
    cfg.sampling_ratio = a.ratio;
    cfg.fit.steps = a.fit_steps;
    if (!a.params.empty()) cfg.params = read_params_file(a.params);
    const PointCloud src = lattice_input(a.in, a.precision);
    const auto r = encode(src, a.precision, t, m, cfg);
    write_file_atomic(a.out, std::string(r.bytes.begin(), r.bytes.end()));
    std::cerr << "encoded " << src.size() << " points into " << r.bytes.size() << " bytes ("
              << 8.0 * static_cast<double>(r.bytes.size()) / static_cast<double>(src.size()) << " bpp)\n";
    return 0;
}

int run_decode(const std::string& in, const std::string& out, const std::string& model, const std::string& templ,
               bool ascii) {
    const auto m = load_model<float>(model);
    const auto t = template_or_toy(templ);
    const auto bytes = detail::read_file_bytes(in);
    const auto d = decode<float>(bytes, t, m);
    const int p = parse_bitstream(bytes).header.precision;
    write_ply(from_coords(d.coords, p), out, ply_format(ascii));
    if (d.clamped) std::cerr << "warning: some scale had fewer candidates than its point count\n";
    std::cerr << "decoded " << d.coords.size() << " points\n";
    return 0;
}

struct EvalArgs {
    std::string reference, decoded, bitstream, csv, sequence, mode = "max-error";
    int precision = 10;
    double lambda = 0;
    std::size_t normal_k = 12;
};

int run_eval(const EvalArgs& a) {
    const auto mode = parse_symmetric_mode(a.mode);
    const PointCloud ref = read_ply(a.reference).cloud();
    const PointCloud dec = read_ply(a.decoded).cloud();
    RDRow row;
    row.sequence = a.sequence.empty() ? fs::path(a.reference).stem().string() : a.sequence;
    row.lambda = a.lambda;
    if (!a.bitstream.empty()) {
        const auto r = bitstream_report(detail::read_file_bytes(a.bitstream));
        row.bpp = r.bpp;
    }
    row.d1_psnr = symmetric_psnr(dec, ref, a.precision, DistortionMetric::d1, mode, a.normal_k);
    row.d2_psnr = symmetric_psnr(dec, ref, a.precision, DistortionMetric::d2, mode, a.normal_k);
    if (!a.csv.empty()) append_rd_csv(a.csv, row);
    std::cerr << format_rd_row(row) << "\n";
    return 0;
}

// Config file: TrainConfig fields at the top level, plus an optional "data" object with
// the toy dataset settings. Flags given on the command line override the file.
struct TrainOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, pretrain_epochs, samples;
};

int run_train(const std::string& config, const std::string& out_dir, const TrainOverrides& o) {
    auto j = nlohmann::json::parse(read_text(config), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError(config + " is not a JSON object");
    if (o.seed) j["seed"] = *o.seed;
    if (o.epochs) j["epochs"] = *o.epochs;
    if (o.pretrain_epochs) j["pretrain_epochs"] = *o.pretrain_epochs;
    if (o.samples) j["data"]["count"] = *o.samples;
    const TrainConfig cfg = TrainConfig::from_json(j);
    const ToyConfig data_cfg = ToyConfig::from_json(j.value("data", nlohmann::json::object()));
    const auto t = j.contains("template") ? load_template(j["template"].get<std::string>()) : make_toy_template();
    fs::create_directories(out_dir);
    std::cerr << "building " << data_cfg.count << " toy samples at precision " << data_cfg.precision << "\n";
    const auto data = make_toy_dataset(t, data_cfg);
    const auto log_path = fs::path(out_dir) / "train.log";
    std::ofstream log(log_path);
    if (!log) throw ConfigError("cannot write " + log_path.string());
    log << "step, lambda, R, D, total\n";
    const auto models = train<float>(data, cfg, &log, out_dir);
    std::cerr << "wrote " << models.size() << " models to " << out_dir << "\n";
    return 0;
}

int run_fit(const std::string& in, const std::string& out, const std::string& templ, int precision, int steps,
            std::uint64_t seed) {
    const auto t = template_or_toy(templ);
    FitConfig cfg;
    cfg.steps = steps;
    cfg.seed = seed;
    const auto r = fit_params_detailed(lattice_input(in, precision), t, cfg);
    const std::string text = format_params_text(r.params);
    write_file_atomic(out, text);
    std::cerr << "chamfer " << r.initial_chamfer << " -> " << r.chamfer << " in " << r.steps_used << " steps\n";
    return 0;
}

struct SampleArgs {
    std::string mesh, out, params, templ;
    std::size_t count = 100000;
    bool uniform = false, ascii = false;
    std::uint64_t seed = 1;
    int precision = 0;  // 0: keep continuous coordinates
};

int run_sample(const SampleArgs& a) {
    Mesh mesh;
    if (!a.params.empty()) {
        mesh = aligned_mesh(template_or_toy(a.templ), read_params_file(a.params));
    } else if (!a.mesh.empty()) {
        mesh = read_ply(a.mesh).mesh();
    } else {
        throw UsageError("sample needs a mesh or --params");
    }
    PoissonConfig pc;
    pc.seed = a.seed;
    const auto s = a.uniform ? sample_surface_uniform(mesh, a.count, a.seed) : sample_surface_poisson(mesh, a.count, pc);
    PointCloud cloud = s.cloud();
    if (a.precision > 0) cloud = voxelize(cloud, a.precision);
    write_ply(cloud, a.out, ply_format(a.ascii));
    std::cerr << "wrote " << cloud.size() << " points\n";
    return 0;
}

int run_report(const std::string& in, const std::string& out) {
    const auto bytes = detail::read_file_bytes(in);
    const auto r = bitstream_report(bytes);
    nlohmann::json j;
    j["total_bits"] = r.total_bits;
    j["points"] = r.points;
    j["bpp"] = r.bpp;
    for (const auto& p : r.parts) j["parts"][p.name] = {{"bits", p.bits}, {"percent", p.percent}};
    if (!out.empty()) write_file_atomic(out, j.dump(2) + "\n");
    std::cout << "points " << r.points << ", " << r.total_bits << " bits, " << r.bpp << " bpp\n";
    for (const auto& p : r.parts)
        std::cout << "  " << std::left << std::setw(12) << p.name << std::right << std::setw(10) << p.bits << " bits "
                  << std::fixed << std::setprecision(2) << std::setw(7) << p.percent << " %\n"
                  << std::defaultfloat;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prior-guided point cloud geometry codec"};
    app.require_subcommand(1);

    EncodeArgs ea;
    auto* enc = app.add_subcommand("encode", "Encode a voxelized cloud");
    enc->add_option("input", ea.in, "Input PLY")->required()->check(CLI::ExistingFile);
    enc->add_option("output", ea.out, "Output bitstream")->required();
    enc->add_option("--model", ea.model, "Weights file (.pgw)")->required()->check(CLI::ExistingFile);
    enc->add_option("--template", ea.templ, "Body template (default: built-in toy body)")->check(CLI::ExistingFile);
    enc->add_option("--params", ea.params, "Body parameter text file (default: fit)")->check(CLI::ExistingFile);
    enc->add_option("--precision", ea.precision, "Lattice bit depth")->check(CLI::Range(1, 21));
    enc->add_flag("--no-prior", ea.no_prior, "Code features directly");
    enc->add_option("--seed", ea.seed, "Seed for sampling and fitting");
    enc->add_option("--ratio", ea.ratio, "Prior samples per source point");
    enc->add_option("--fit-steps", ea.fit_steps, "Fitter budget");

    std::string dec_in, dec_out, dec_model, dec_templ;
    bool dec_ascii = false;
    auto* dec = app.add_subcommand("decode", "Decode a bitstream");
    dec->add_option("input", dec_in, "Input bitstream")->required()->check(CLI::ExistingFile);
    dec->add_option("output", dec_out, "Output PLY")->required();
    dec->add_option("--model", dec_model, "Weights file (.pgw)")->required()->check(CLI::ExistingFile);
    dec->add_option("--template", dec_templ, "Body template")->check(CLI::ExistingFile);
    dec->add_flag("--ascii", dec_ascii, "Write ASCII PLY");

    EvalArgs va;
    auto* ev = app.add_subcommand("eval", "D1/D2 PSNR and bpp; appends a CSV row");
    ev->add_option("reference", va.reference, "Reference PLY")->required()->check(CLI::ExistingFile);
    ev->add_option("decoded", va.decoded, "Decoded PLY")->required()->check(CLI::ExistingFile);
    ev->add_option("--bitstream", va.bitstream, "Bitstream, for bpp")->check(CLI::ExistingFile);
    ev->add_option("--precision", va.precision, "Lattice bit depth (PSNR peak)")->check(CLI::Range(1, 21));
    ev->add_option("--csv", va.csv, "CSV file to append to");
    ev->add_option("--sequence", va.sequence, "Sequence name (default: reference file stem)");
    ev->add_option("--lambda", va.lambda, "Lambda recorded in the CSV");
    ev->add_option("--symmetric-mode", va.mode, "max-error or max-psnr")
        ->check(CLI::IsMember({"max-error", "max-psnr"}));
    ev->add_option("--normal-k", va.normal_k, "Neighbours for D2 normals")->check(CLI::Range(3, 1000));

    std::string tr_config, tr_out;
    auto* tr = app.add_subcommand("train", "Train the lambda sweep on toy bodies");
    tr->add_option("config", tr_config, "JSON config")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output directory")->required();
    TrainOverrides to;
    tr->add_option("--seed", to.seed, "Override the seed");
    tr->add_option("--epochs", to.epochs, "Override fine-tuning epochs per lambda");
    tr->add_option("--pretrain-epochs", to.pretrain_epochs, "Override shared pretraining epochs");
    tr->add_option("--samples", to.samples, "Override the toy dataset size");

    std::string fit_in, fit_out, fit_templ;
    int fit_precision = 10, fit_steps = 200;
    std::uint64_t fit_seed = 1;
    auto* fit = app.add_subcommand("fit", "Fit body parameters to a cloud");
    fit->add_option("input", fit_in, "Input PLY")->required()->check(CLI::ExistingFile);
    fit->add_option("output", fit_out, "Parameter text file")->required();
    fit->add_option("--template", fit_templ, "Body template")->check(CLI::ExistingFile);
    fit->add_option("--precision", fit_precision, "Lattice bit depth")->check(CLI::Range(1, 21));
    fit->add_option("--steps", fit_steps, "Refinement budget")->check(CLI::Range(0, 100000));
    fit->add_option("--seed", fit_seed, "Seed");

    SampleArgs sa;
    auto* smp = app.add_subcommand("sample", "Sample a mesh (or the posed template) into a cloud");
    smp->add_option("mesh", sa.mesh, "Input mesh PLY")->check(CLI::ExistingFile);
    smp->add_option("--out", sa.out, "Output PLY")->required();
    smp->add_option("--params", sa.params, "Pose the template with these parameters instead")
        ->check(CLI::ExistingFile);
    smp->add_option("--template", sa.templ, "Body template for --params")->check(CLI::ExistingFile);
    smp->add_option("--count", sa.count, "Number of samples")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 30));
    smp->add_flag("--uniform", sa.uniform, "Uniform instead of Poisson-disk sampling");
    smp->add_option("--precision", sa.precision, "Voxelize on the 2^p lattice")->check(CLI::Range(0, 21));
    smp->add_option("--seed", sa.seed, "Seed");
    smp->add_flag("--ascii", sa.ascii, "Write ASCII PLY");

    std::string rep_in, rep_out;
    auto* rep = app.add_subcommand("report", "Bitstream composition");
    rep->add_option("input", rep_in, "Bitstream")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", rep_out, "JSON output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cerr << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (enc->parsed()) return run_encode(ea);
        if (dec->parsed()) return run_decode(dec_in, dec_out, dec_model, dec_templ, dec_ascii);
        if (ev->parsed()) return run_eval(va);
        if (tr->parsed()) return run_train(tr_config, tr_out, to);
        if (fit->parsed()) return run_fit(fit_in, fit_out, fit_templ, fit_precision, fit_steps, fit_seed);
        if (smp->parsed()) return run_sample(sa);
        if (rep->parsed()) return run_report(rep_in, rep_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
