#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "equikernel/audit.hpp"
#include "equikernel/checkpoint.hpp"
#include "equikernel/config.hpp"
#include "equikernel/grad_suite.hpp"
#include "equikernel/report.hpp"
#include "equikernel/train.hpp"
#include "equikernel/version.hpp"

namespace ek = equikernel;
namespace fs = std::filesystem;

namespace {

constexpr int exit_pass = 0;
constexpr int exit_fail = 1;
constexpr int exit_usage = 2;

struct Globals {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::vector<std::string> overrides;
    bool break_equivariance = false;
};

/// Output sink: stdout, plus a copy under --out when one is given.
class Sink {
public:
    Sink(const Globals& g, const std::string& file) {
        if (g.out_dir.empty()) return;
        fs::create_directories(g.out_dir);
        file_.open(fs::path(g.out_dir) / file);
        if (!file_) throw std::runtime_error("cannot write " + (fs::path(g.out_dir) / file).string());
    }
    template <typename V>
    Sink& operator<<(const V& v) {
        std::cout << v;
        if (file_.is_open()) file_ << v;
        return *this;
    }

private:
    std::ofstream file_;
};

ek::RunConfig load_config(const Globals& g) {
    ek::RunConfig c = g.config_path.empty() ? ek::RunConfig{} : ek::RunConfig::from_file(g.config_path);
    for (const auto& kv : g.overrides) c.set_assignment(kv);
    return c;
}

void log_header(const std::string& command, const ek::RunConfig& c, const Globals& g) {
    std::ostringstream line;
    line << "# equikernel " << ek::version << " command=" << command << " config_hash=" << c.hash_hex() << " seed=" << g.seed
         << " threads=" << ek::worker_count();
    std::cerr << line.str() << '\n';
    if (g.out_dir.empty()) return;
    fs::create_directories(g.out_dir);
    std::ofstream log(fs::path(g.out_dir) / "run.log", std::ios::app);
    log << line.str() << '\n' << c.canonical();
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

ek::BackboneConfig model_config(const ek::RunConfig& c, std::size_t classes, const Globals& g) {
    ek::BackboneConfig b = ek::backbone_config(c, classes);
    b.break_equivariance = g.break_equivariance;
    return b;
}

/// Number of identities the classifier of a checkpoint was trained on.
std::size_t checkpoint_classes(const std::map<std::string, ek::Tensor<float>>& table) {
    auto it = table.find("head.classifier");
    if (it == table.end() || it->second.rank() != 3) throw ek::CheckpointError("checkpoint has no head.classifier tensor");
    return it->second.dim(2);
}

int write_audit(Sink& out, const std::vector<ek::AuditRow>& rows) {
    out << "layer,transform,equivariance_error,invariance_error,threshold,pass\n";
    bool ok = true;
    for (const auto& r : rows) {
        out << r.layer << ',' << r.transform << ',' << fmt(r.equivariance_error) << ',' << fmt(r.invariance_error) << ','
            << fmt(r.threshold) << ',' << (r.pass ? "pass" : "fail") << '\n';
        ok = ok && r.pass;
    }
    return ok ? exit_pass : exit_fail;
}

// ------------------------------------------------------------------ commands

struct CheckArgs {
    std::string transform = "reflect";
    std::size_t trials = 0;
    std::size_t inputs = 100;
    std::string checkpoint;
};

int cmd_check(const Globals& g, const CheckArgs& a) {
    const ek::RunConfig c = load_config(g);
    log_header("check-equivariance", c, g);
    std::size_t classes = static_cast<std::size_t>(c.integer("data.identities"));
    std::map<std::string, ek::Tensor<float>> table;
    if (!a.checkpoint.empty()) {
        std::ifstream f(a.checkpoint, std::ios::binary);
        if (!f) throw ek::CheckpointError("cannot open " + a.checkpoint);
        std::ostringstream ss;
        ss << f.rdbuf();
        table = ek::decode_checkpoint(ss.str());
        classes = checkpoint_classes(table);
    }
    ek::GaitModel<float> m = ek::make_model<float>(model_config(c, classes, g), g.seed);
    if (!table.empty()) ek::apply_checkpoint(m, table);
    Sink out(g, "check_" + a.transform + ".csv");
    if (a.transform == "reflect") {
        ek::ReflectAuditOptions o;
        o.seed = g.seed;
        if (a.trials) o.trials = a.trials;
        o.strided_inputs = a.inputs;
        return write_audit(out, ek::reflect_audit(m, o));
    }
    if (a.transform == "rotate") {
        ek::RotateAuditOptions o;
        o.seed = g.seed;
        if (a.trials) o.trials = a.trials;
        auto rows = ek::rotate_audit(o);
        ek::PredictorBoundsOptions p;
        p.seed = g.seed;
        p.channels = m.cfg.pooled(3);
        const auto [h, w] = m.cfg.stage_extent(3);
        p.height = h;
        p.width = w;
        for (auto& r : ek::predictor_bounds_audit(p)) rows.push_back(r);
        return write_audit(out, rows);
    }
    ek::ScaleAuditOptions o;
    o.seed = g.seed;
    if (a.trials) o.trials = a.trials;
    return write_audit(out, ek::scale_audit(m, o));
}

int cmd_grad_check(const Globals& g) {
    const ek::RunConfig c = load_config(g);
    log_header("grad-check", c, g);
    Sink out(g, "grad_check.csv");
    out << "op,max_rel_error,coords,threshold,pass\n";
    bool ok = true;
    for (const auto& r : ek::grad_suite(g.seed)) {
        out << r.op << ',' << fmt(r.max_rel_error) << ',' << r.coords << ',' << fmt(r.threshold) << ',' << (r.pass ? "pass" : "fail")
            << '\n';
        ok = ok && r.pass;
    }
    return ok ? exit_pass : exit_fail;
}

/// "identities=I seqs=S" (space or comma separated).
void apply_synthetic(ek::RunConfig& c, const std::string& spec) {
    std::string text = spec;
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw ek::ConfigError("--synthetic", "expected key=value, got '" + tok + "'");
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "identities") {
            c.set("data.identities", v);
        } else if (k == "seqs") {
            const long long total = static_cast<long long>(ek::detail::parse_number("--synthetic seqs", v, true));
            const long long held = c.integer("data.gallery_seqs") + c.integer("data.probe_seqs");
            if (total <= held)
                throw ek::ConfigError("--synthetic seqs", "needs more than " + std::to_string(held) + " sequences per identity");
            c.set("data.train_seqs", std::to_string(total - held));
        } else if (k == "frames") {
            c.set("data.frames", v);
        } else {
            throw ek::ConfigError("--synthetic " + k, "unknown field (identities, seqs, frames)");
        }
    }
}

ek::Dataset build_dataset(const ek::RunConfig& c, const Globals& g) {
    const std::string manifest = c.text("data.manifest");
    if (!manifest.empty()) return ek::load_dataset(manifest);
    return ek::make_synthetic_dataset(ek::synthetic_spec(c, g.seed));
}

struct TrainArgs {
    std::string synthetic;
    std::string manifest;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
    ek::RunConfig c = load_config(g);
    if (!a.synthetic.empty()) apply_synthetic(c, a.synthetic);
    if (!a.manifest.empty()) c.set("data.manifest", a.manifest);
    log_header("train-toy", c, g);
    const ek::Dataset d = build_dataset(c, g);
    ek::GaitModel<float> m = ek::make_model<float>(model_config(c, d.num_classes, g), g.seed);
    const ek::TrainConfig tc = ek::train_config(c);
    Sink log(g, "train_log.csv");
    log << "iter,lr,total,triplet,ce,active_frac,accuracy,seconds\n";
    ek::train_model(m, d.train, tc, g.seed, [&](const ek::TrainLogRow& r) {
        log << r.iter << ',' << fmt(r.lr) << ',' << fmt(r.total) << ',' << fmt(r.triplet) << ',' << fmt(r.ce) << ','
            << fmt(r.active_frac) << ',' << fmt(r.accuracy) << ',' << fmt(r.seconds) << '\n';
    });
    const fs::path ckpt = fs::path(g.out_dir.empty() ? "." : g.out_dir) / "model.rrsg";
    ek::save_checkpoint(ckpt, m);
    std::cerr << "# checkpoint " << ckpt.string() << '\n';
    return exit_pass;
}

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string tta;
    std::vector<double> probs{0.0, 0.25, 0.5, 0.75, 1.0};
};

void write_metrics(Sink& out, const std::string& cond, double p, const ek::RetrievalMetrics& r) {
    out << cond << ',' << fmt(p) << ',' << fmt(r.rank1) << ',' << fmt(r.rank5) << ',' << fmt(r.map) << ',' << fmt(r.minp) << '\n';
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
    ek::RunConfig c = load_config(g);
    if (!a.manifest.empty()) c.set("data.manifest", a.manifest);
    std::optional<ek::Transform> tta;
    if (!a.tta.empty()) {
        try {
            tta = ek::parse_transform(a.tta);
        } catch (const std::invalid_argument& e) {
            throw ek::ConfigError("--tta", e.what());
        }
        // Augmentation applies to clean probes.
        if (c.text("data.manifest").empty()) c.set("data.probe_conditions", "");
    }
    log_header("eval", c, g);
    std::ifstream f(a.checkpoint, std::ios::binary);
    if (!f) throw ek::CheckpointError("cannot open " + a.checkpoint);
    std::ostringstream ss;
    ss << f.rdbuf();
    const auto table = ek::decode_checkpoint(ss.str());
    ek::GaitModel<float> m = ek::make_model<float>(model_config(c, checkpoint_classes(table), g), g.seed);
    ek::apply_checkpoint(m, table);
    const ek::Dataset d = build_dataset(c, g);

    Sink out(g, "eval.csv");
    out << "condition,p,rank1,rank5,map,minp\n";
    if (tta) {
        for (const auto& r : ek::evaluate_tta(m, d, tta, a.probs, g.seed)) write_metrics(out, r.condition, r.p, r.metrics);
        return exit_pass;
    }
    const ek::Tensor<float> gallery = ek::embed_sequences(m, d.gallery);
    const ek::Tensor<float> probes = ek::embed_sequences(m, d.probe);
    const auto gl = ek::labels_of(d.gallery), pl = ek::labels_of(d.probe);
    std::vector<std::string> conditions;
    for (const auto& s : d.probe)
        if (std::find(conditions.begin(), conditions.end(), s.condition) == conditions.end()) conditions.push_back(s.condition);
    const std::size_t dim = probes.dim(1);
    for (const auto& cond : conditions) {
        std::vector<float> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < d.probe.size(); ++i) {
            if (d.probe[i].condition != cond) continue;
            rows.insert(rows.end(), probes.raw() + i * dim, probes.raw() + (i + 1) * dim);
            labels.push_back(pl[i]);
        }
        const ek::Tensor<float> sub({labels.size(), dim}, std::move(rows));
        write_metrics(out, cond, 0.0, ek::retrieval_eval(sub, labels, gallery, gl));
    }
    write_metrics(out, "all", 0.0, ek::retrieval_eval(probes, pl, gallery, gl));
    return exit_pass;
}

int cmd_report(const Globals& g, std::size_t frames) {
    const ek::RunConfig c = load_config(g);
    log_header("report", c, g);
    const ek::BackboneConfig cfg = model_config(c, static_cast<std::size_t>(c.integer("data.identities")), g);
    Sink out(g, "report.csv");
    out << "module,params,macs\n";
    const ek::CostReport rep = ek::count_params_flops(cfg, frames);
    for (const auto& r : rep.rows) out << r.module << ',' << r.params << ',' << fmt(r.macs) << '\n';
    out << "total," << rep.total_params << ',' << fmt(rep.total_macs) << '\n';
    const ek::CostReport base = ek::count_params_flops(ek::baseline_config(cfg), frames);
    const ek::CostReport refl = ek::count_params_flops(ek::reflect_only_config(cfg), frames);
    out << "baseline_regular_conv," << base.total_params << ',' << fmt(base.total_macs) << '\n';
    out << "reflect_conv_only," << refl.total_params << ',' << fmt(refl.total_macs) << '\n';
    return exit_pass;
}

struct ForwardArgs {
    std::string input;
    std::size_t frames = 30;
};

int cmd_forward(const Globals& g, const ForwardArgs& a) {
    const ek::RunConfig c = load_config(g);
    log_header("forward", c, g);
    ek::GaitModel<float> m = ek::make_model<float>(model_config(c, static_cast<std::size_t>(c.integer("data.identities")), g), g.seed);
    const ek::Tensor<float> frames = a.input.empty() ? ek::synth_walker(g.seed + 1, a.frames, "nm", 0, m.cfg.frame_h, m.cfg.frame_w).frames
                                                     : ek::load_gseq(a.input);
    Sink out(g, "forward.csv");
    out << "layer,shape\n";
    for (const auto& r : ek::shape_trace(m, frames)) out << r.layer << ',' << ek::to_string(r.shape) << '\n';
    return exit_pass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reflect/rotate/scale equivariant gait backbone: audits, training and evaluation"};
    app.set_version_flag("--version", std::string(ek::version));
    Globals g;
    app.add_option("--config", g.config_path, "key=value configuration file");
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--out", g.out_dir, "directory for CSV outputs, logs and checkpoints");
    app.add_option("--set", g.overrides, "override a configuration key (key=value); repeatable");
    app.add_flag("--debug-break-equivariance", g.break_equivariance, "disable the group swap (negative control)");
    app.require_subcommand(1);

    CheckArgs check;
    auto* sc = app.add_subcommand("check-equivariance", "per-layer equivariance and invariance audit");
    sc->add_option("--transform", check.transform)->check(CLI::IsMember({"reflect", "rotate", "scale"}));
    sc->add_option("--trials", check.trials, "random trials (default: 50 reflect, 100 rotate, 20 scale)");
    sc->add_option("--inputs", check.inputs, "distinct inputs for the strided reflect comparison");
    sc->add_option("--checkpoint", check.checkpoint, "audit trained weights");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks (64-bit)");

    TrainArgs train;
    auto* tc = app.add_subcommand("train-toy", "train on synthetic walkers or a manifest");
    tc->add_option("--synthetic", train.synthetic, "e.g. \"identities=10 seqs=12\"");
    tc->add_option("--manifest", train.manifest, "path,identity,condition,role CSV");

    EvalArgs eval;
    auto* ec = app.add_subcommand("eval", "retrieval metrics of a checkpoint");
    ec->add_option("--checkpoint", eval.checkpoint)->required();
    ec->add_option("--manifest", eval.manifest);
    ec->add_option("--tta", eval.tta, "probe augmentation: reflect, rotate:DEG, dilate:N, erode:N");
    ec->add_option("--probs", eval.probs, "augmentation probabilities")->delimiter(',');

    std::size_t report_frames = 30;
    auto* rc = app.add_subcommand("report", "parameter and MAC table per module");
    rc->add_option("--frames", report_frames, "sequence length T");

    ForwardArgs fwd;
    auto* fc = app.add_subcommand("forward", "output shape of every architecture row");
    fc->add_option("--input", fwd.input, ".gseq sequence (default: synthetic walker)");
    fc->add_option("--frames", fwd.frames, "synthetic sequence length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_usage;
    }

    try {
        if (*sc) return cmd_check(g, check);
        if (*gc) return cmd_grad_check(g);
        if (*tc) return cmd_train(g, train);
        if (*ec) return cmd_eval(g, eval);
        if (*rc) return cmd_report(g, report_frames);
        if (*fc) return cmd_forward(g, fwd);
    } catch (const ek::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ek::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ek::ParseError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    }
    return exit_usage;
}
