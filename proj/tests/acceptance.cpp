// One PASS/FAIL line per acceptance criterion.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "equikernel/audit.hpp"
#include "equikernel/config.hpp"
#include "equikernel/grad_suite.hpp"
#include "equikernel/report.hpp"
#include "equikernel/train.hpp"

using namespace equikernel;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 3) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

struct Verdicts {
    std::size_t failed = 0;
    std::ofstream report;
    void line(int id, bool pass, const std::string& title, const std::string& detail) {
        failed += !pass;
        std::ostringstream s;
        s << "C" << id << (id < 10 ? "  " : " ") << (pass ? "PASS" : "FAIL") << "  " << title << " | " << detail << '\n';
        std::cout << s.str() << std::flush;
        if (report.is_open()) report << s.str() << std::flush;
    }
};

double worst_error(const std::vector<AuditRow>& rows, bool invariance) {
    double w = 0;
    for (const auto& r : rows) {
        const double e = invariance ? r.invariance_error : r.equivariance_error;
        if (!std::isnan(e) && r.layer != "embedding") w = std::max(w, e);
    }
    return w;
}

const AuditRow* find_row(const std::vector<AuditRow>& rows, const std::string& layer) {
    for (const auto& r : rows)
        if (r.layer == layer) return &r;
    return nullptr;
}

void reflect_exact(Verdicts& v, const RunConfig& audit_cfg) {
    const auto t0 = Clock::now();
    auto m = make_model<float>(backbone_config(audit_cfg, 10), 1);
    ReflectAuditOptions o;
    o.trials = 50;
    const auto rows = reflect_audit(m, o);
    bool all = true;
    for (const auto& r : rows) all &= r.pass;
    const double secs = seconds_since(t0);
    const AuditRow* emb = find_row(rows, "embedding");
    const double grouped = worst_error(rows, false), invariant = worst_error(rows, true);
    v.line(1, all && emb && secs <= 120.0, "exact reflect equivariance, stride-1 audit, 50 inputs",
           "max layer equivariance " + num(grouped) + ", max invariance " + num(invariant) + " (<= 1e-4); embedding rel " +
               num(emb ? emb->invariance_error : -1) + " (<= 1e-3); " + num(secs, 3) + " s (<= 120)");
}

void reflect_strided(Verdicts& v) {
    auto m = make_model<float>(BackboneConfig{}, 1);
    ReflectAuditOptions o;
    o.trials = 1;
    o.strided_inputs = 100;
    const auto rows = reflect_audit(m, o);
    const AuditRow* med = find_row(rows, "embedding.median_pair_distance");
    const AuditRow* mean = find_row(rows, "embedding.mean_mirror_distance");
    const AuditRow* mx = find_row(rows, "embedding.max_mirror_distance");
    v.line(2, mx && mx->pass, "strided S backbone: mirror error >= 10x below median pair distance (100 inputs)",
           "median pair " + num(med->invariance_error) + ", mirror mean " + num(mean->invariance_error) + ", mirror max " +
               num(mx->invariance_error) + ", threshold " + num(mx->threshold));
}

void rotate_checks(Verdicts& v) {
    const auto rows = rotate_audit(RotateAuditOptions{});
    double grid = 0;
    bool grid_ok = true;
    for (int q = 0; q < 4; ++q) {
        const AuditRow* r = find_row(rows, "rotate_kernel@" + std::to_string(90 * q));
        grid = std::max(grid, r->equivariance_error);
        grid_ok &= r->pass;
    }
    v.line(3, grid_ok, "rotated kernel at 0/90/180/270 deg equals grid permutation", "max error " + num(grid) + " (<= 1e-6)");
    const AuditRow* frac = find_row(rows, "rotated_beats_plain.fraction");
    const AuditRow* rot = find_row(rows, "rotated_conv@10.mean_error");
    const AuditRow* plain = find_row(rows, "plain_conv@10.mean_error");
    v.line(4, frac->pass, "rotated kernel beats plain kernel at 10 deg in >= 95/100 trials",
           "win fraction " + num(frac->equivariance_error) + "; mean error rotated " + num(rot->equivariance_error) + " vs plain " +
               num(plain->equivariance_error));
}

void predictor_bounds(Verdicts& v) {
    const auto rows = predictor_bounds_audit(PredictorBoundsOptions{});
    bool all = true;
    std::string detail;
    for (const auto& r : rows) {
        all &= r.pass;
        if (r.layer.find("max_abs_theta_over_limit") != std::string::npos || r.layer.find("violations") != std::string::npos)
            detail += r.layer + "=" + num(r.invariance_error, 4) + " ";
    }
    v.line(5, all, "angle/confidence bounds over 1000 inputs x 20 weight draws, limits 20/30/40/50", detail);
}

void gradients(Verdicts& v) {
    const auto t0 = Clock::now();
    const auto rows = grad_suite(0, 1e-3);
    bool all = true;
    double worst = 0;
    std::string bad;
    for (const auto& r : rows) {
        all &= r.pass;
        worst = std::max(worst, r.max_rel_error);
        if (!r.pass) bad += r.op + " ";
    }
    const double secs = seconds_since(t0);
    v.line(6, all && secs <= 300.0, "finite-difference gradients (64-bit), " + std::to_string(rows.size()) + " ops",
           "max rel error " + num(worst) + " (<= 1e-3); " + num(secs, 3) + " s" + (bad.empty() ? "" : "; failing: " + bad));
}

void accounting(Verdicts& v) {
    const BackboneConfig full;
    const BackboneConfig base = baseline_config(full), reel = reflect_only_config(full);
    const BackbonePlan pb = make_plan(base), pr = make_plan(reel);
    bool halving = 2 * pr.stem.weight_count() == pb.stem.weight_count();
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t b = 0; b < pb.stages[s].size(); ++b) {
            const auto& x = pb.stages[s][b];
            const auto& y = pr.stages[s][b];
            halving &= 2 * y.conv1.weight_count() == x.conv1.weight_count() && 2 * y.conv2.weight_count() == x.conv2.weight_count();
            halving &= x.shortcut.has_value() == y.shortcut.has_value();
            if (x.shortcut) halving &= 2 * y.shortcut->weight_count() == x.shortcut->weight_count();
        }
    const double n_base = static_cast<double>(count_params_flops(base).total_params);
    const double n_reel = static_cast<double>(count_params_flops(reel).total_params);
    const bool base_ok = std::abs(n_base - 4.90e6) <= 0.25 * 4.90e6;
    const bool reel_ok = std::abs(n_reel - 1.66e6) <= 0.25 * 1.66e6;

    const CostReport all = count_params_flops(full);
    BackboneConfig no_sel = full, no_roel = full;
    no_sel.use_sel = false;
    no_roel.use_roel = false;
    const bool toggles = all.total_params - count_params_flops(no_sel).total_params == all.find("sel")->params &&
                         all.total_params - count_params_flops(no_roel).total_params == all.find("roel")->params;
    auto inst = make_model<float>(full, 1);
    const bool dual = GaitModel<float>::count(inst.backbone_parameters()) == all.total_params;

    v.line(7, halving && base_ok && reel_ok && n_reel < n_base && toggles && dual, "parameter accounting of the S backbone",
           std::string("layer halving ") + (halving ? "exact" : "BROKEN") + "; baseline " + num(n_base / 1e6, 4) + "M vs 4.90M +-25% " +
               (base_ok ? "ok" : "out") + "; reflect-only " + num(n_reel / 1e6, 4) + "M vs 1.66M +-25% " + (reel_ok ? "ok" : "out") +
               "; toggles " + (toggles ? "exact" : "BROKEN") + "; instantiated " + (dual ? "matches" : "DIFFERS"));
}

void shapes(Verdicts& v) {
    auto m = make_model<float>(BackboneConfig{}, 1);
    std::mt19937_64 rng(0);
    const auto rows = shape_trace(m, random_frames(30, 64, 44, rng));
    const std::map<std::string, Shape> want{
        {"input", {30, 64, 44}},        {"stem", {30, 64, 64, 44}},     {"stage1", {30, 64, 64, 44}},  {"stage2", {30, 128, 32, 22}},
        {"stage3", {30, 256, 16, 11}},  {"stage4", {30, 512, 16, 11}},  {"gpool", {30, 256, 16, 11}},  {"tp", {1, 256, 16, 11}},
        {"roel", {1, 256, 16, 11}},     {"sel", {1, 480, 16, 11}},      {"hp", {1, 48}},               {"head", {1, 48}},
        {"embedding", {48, 256}}};
    std::size_t matched = 0;
    std::string bad;
    for (const auto& r : rows) {
        auto it = want.find(r.layer);
        if (it != want.end() && it->second == r.shape) ++matched;
        else bad += r.layer + "=" + to_string(r.shape) + " ";
    }
    v.line(8, matched == want.size() && bad.empty(), "architecture rows for a 30x64x44 input",
           std::to_string(matched) + "/" + std::to_string(want.size()) + " rows match" + (bad.empty() ? "" : "; mismatched: " + bad));
}

struct Trained {
    double rank1 = 0;
    std::vector<TTARow> tta;
    double seconds = 0;
};

Trained train_and_eval(const RunConfig& base_cfg, bool ablated) {
    RunConfig c = base_cfg;
    if (ablated) {
        c.set("backbone.use_reel", "false");
        c.set("backbone.use_roel", "false");
        c.set("backbone.use_sel", "false");
    }
    const auto t0 = Clock::now();
    const Dataset d = make_synthetic_dataset(synthetic_spec(c, 0));
    auto m = make_model<float>(backbone_config(c, d.num_classes), 0);
    train_model(m, d.train, train_config(c), 0);
    Trained out;
    out.seconds = seconds_since(t0);
    out.rank1 = evaluate_tta(m, d, std::nullopt, {}, 0).at(0).metrics.rank1;
    SyntheticSpec clean = synthetic_spec(c, 0);
    clean.probe_transforms.clear();
    out.tta = evaluate_tta(m, make_synthetic_dataset(clean), parse_transform("reflect"), {0.0, 0.25, 0.5, 0.75, 1.0}, 0);
    return out;
}

void retrieval(Verdicts& v, const RunConfig& toy) {
    const Trained rrs = train_and_eval(toy, false);
    const Trained base = train_and_eval(toy, true);
    const double chance = 1.0 / static_cast<double>(toy.integer("data.identities"));
    v.line(9, rrs.rank1 >= 6 * chance - 1e-12 && rrs.rank1 >= base.rank1,
           "toy retrieval: RRS rank-1 >= 6x chance and >= ablated baseline",
           "RRS " + num(rrs.rank1) + ", baseline " + num(base.rank1) + ", 6x chance " + num(6 * chance) + "; train+eval " +
               num(rrs.seconds, 4) + " s and " + num(base.seconds, 4) + " s (<= 1800 each)");
    bool dominates = true;
    std::string detail;
    for (std::size_t i = 0; i < rrs.tta.size(); ++i) {
        const double dr = rrs.tta[0].metrics.rank1 - rrs.tta[i].metrics.rank1;
        const double db = base.tta[0].metrics.rank1 - base.tta[i].metrics.rank1;
        dominates &= dr <= db + 1e-12;
        detail += "p=" + num(rrs.tta[i].p, 2) + ": " + num(rrs.tta[i].metrics.rank1, 3) + "/" + num(base.tta[i].metrics.rank1, 3) + " ";
    }
    v.line(10, dominates, "test-time reflect augmentation: RRS drop <= baseline drop at every p", "rank-1 RRS/baseline " + detail);
}

void negative_control(Verdicts& v, const std::string& cli, const std::string& audit_cfg) {
    const fs::path out = fs::temp_directory_path() / "equikernel_acceptance_negctl";
    const std::string cmd = "\"" + cli + "\" --config \"" + audit_cfg + "\" --out \"" + out.string() +
                            "\" --debug-break-equivariance check-equivariance --transform reflect --trials 2 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    v.line(11, code == 1, "check-equivariance --debug-break-equivariance exits 1", "exit code " + std::to_string(code));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string config_dir = "configs", cli = "equikernel", report;
    std::vector<int> only;
    bool strict = false;
    app.add_option("--config-dir", config_dir, "directory holding toy.cfg and audit.cfg");
    app.add_option("--cli", cli, "path of the equikernel executable");
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    app.add_option("--report", report, "also write the verdict lines to this file");
    app.add_flag("--strict", strict, "exit 1 when any criterion fails");
    CLI11_PARSE(app, argc, argv);

    const RunConfig toy = RunConfig::from_file((fs::path(config_dir) / "toy.cfg").string());
    const RunConfig audit = RunConfig::from_file((fs::path(config_dir) / "audit.cfg").string());
    auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    Verdicts v;
    if (!report.empty()) v.report.open(report);
    if (want(1)) reflect_exact(v, audit);
    if (want(2)) reflect_strided(v);
    if (want(3) || want(4)) rotate_checks(v);
    if (want(5)) predictor_bounds(v);
    if (want(6)) gradients(v);
    if (want(7)) accounting(v);
    if (want(8)) shapes(v);
    if (want(9) || want(10)) retrieval(v, toy);
    if (want(11)) negative_control(v, cli, (fs::path(config_dir) / "audit.cfg").string());
    std::cout << "acceptance: " << v.failed << " failing" << std::endl;
    if (v.report.is_open()) v.report << "acceptance: " << v.failed << " failing\n";
    return strict && v.failed ? 1 : 0;
}
