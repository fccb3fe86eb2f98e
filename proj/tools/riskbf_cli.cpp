#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riskbf/channel.hpp"
#include "riskbf/eval.hpp"
#include "riskbf/trainer.hpp"

namespace fs = std::filesystem;
using namespace riskbf;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

struct RunConfig {
    KeyValues kv;
    NetworkConfig net;
    ArchConfig arch;
    TrainConfig train;
    std::uint64_t cell_seed = 1;
};

RunConfig load_config(const Globals& g) {
    RunConfig rc;
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw std::runtime_error("cannot open config: " + g.config_path);
        rc.kv = KeyValues::parse(in);
    }
    rc.net = NetworkConfig::from_kv(rc.kv);
    rc.arch = ArchConfig::from_kv(rc.kv, rc.net.M);
    rc.train = TrainConfig::from_kv(rc.kv);
    rc.cell_seed = static_cast<std::uint64_t>(rc.kv.get_int("cell_seed", 1));
    if (g.seed) rc.train.seed = *g.seed;
    rc.train.threads = g.threads;
    rc.train.validate();
    for (const auto& k : rc.kv.unused_keys()) std::cerr << "warning: unknown config key '" << k << "'\n";
    return rc;
}

std::string stem_of(const std::string& csv_path) {
    const std::string ext = ".csv";
    if (csv_path.size() > ext.size() && csv_path.ends_with(ext)) return csv_path.substr(0, csv_path.size() - ext.size());
    return csv_path;
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const std::string& path) {
    ensure_parent(path);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

// Samples go to `csv_path`; summary and histogram sit next to it.
void write_report_files(const EvalReport& r, const std::string& csv_path) {
    const std::string stem = stem_of(csv_path);
    {
        auto f = open_out(csv_path);
        write_report_samples_csv(r, f);
    }
    {
        auto f = open_out(stem + "_summary.csv");
        write_report_summary_csv(r, f);
    }
    auto f = open_out(stem + "_histogram.csv");
    write_report_histogram_csv(r, f);
}

void write_manifest(const std::string& path, const std::string& command, const std::vector<std::string>& argv,
                    const RunConfig& rc, const std::vector<std::pair<std::string, std::string>>& extra) {
    auto f = open_out(path);
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    f << "command=" << command << "\nargv=";
    for (std::size_t k = 0; k < argv.size(); ++k) f << (k ? " " : "") << argv[k];
    f << "\nfinished_utc=" << stamp << "\nthreads=" << rc.train.threads << "\ncell_seed=" << rc.cell_seed << "\n";
    for (const auto& [k, v] : extra) f << k << "=" << v << "\n";
    f << "# network\n" << rc.net.to_text() << "# architecture\n" << rc.arch.to_text() << "# training\n"
      << rc.train.to_text();
}

EvalSetup eval_setup(const RunConfig& rc, int bins, bool density) {
    EvalSetup s;
    s.net = rc.net;
    s.rate_scaling = rc.train.rate_scaling;
    s.init_policy = rc.train.init_policy;
    s.report.bins = bins;
    s.report.density = density;
    return s;
}

void print_summary(const EvalReport& r) {
    std::cout << r.label << ": average sum rate " << format_double(r.avg_sum_rate) << " bits\n";
    for (int i = 0; i < r.K(); ++i) {
        const UserSummary& u = r.users[static_cast<std::size_t>(i)];
        std::cout << "  user " << i + 1 << " mean " << u.mean << " std " << u.stddev << " sharpe "
                  << (u.sharpe.defined ? std::to_string(u.sharpe.value) : std::string("undefined")) << " zero-rate "
                  << u.zero_rate_fraction << "\n";
    }
}

TrainResult run_training(const Dataset& data, const RunConfig& rc, const std::string& out_dir,
                         const std::string& resume_path) {
    fs::create_directories(out_dir);
    TrainHooks hooks;
    hooks.out_dir = out_dir;
    hooks.on_epoch = [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " objective " << format_double(e.objective) << " steps " << e.steps;
        if (e.clipped_steps) std::cout << " clipped " << e.clipped_steps;
        std::cout << std::endl;
    };
    if (!resume_path.empty()) hooks.resume = read_train_checkpoint(resume_path);
    return train(data, rc.net, rc.arch, rc.train, hooks);
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        const double a = std::stod(item, &pos);
        if (pos != item.size()) throw std::invalid_argument("--grid: not a number: " + item);
        out.push_back(a);
    }
    if (out.empty()) throw std::invalid_argument("--grid: empty");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-aware downlink beamforming: data generation, training and evaluation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "key=value configuration file");
    app.add_option("--seed", g.seed, "training seed (overrides the config)");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
    const std::vector<std::string> args(argv, argv + argc);

    // generate
    auto* gen = app.add_subcommand("generate", "sample a channel dataset");
    std::optional<std::uint64_t> gen_cell_seed;
    std::size_t gen_n = 0;
    std::uint64_t gen_first = 0;
    std::string gen_out;
    gen->add_option("--cell-seed", gen_cell_seed, "seed of the per-cell LOS components");
    gen->add_option("--n", gen_n, "number of realizations")->required()->check(CLI::PositiveNumber);
    gen->add_option("--first-index", gen_first, "index of the first realization");
    gen->add_option("--out", gen_out, "dataset file")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a policy");
    std::string tr_data, tr_dir, tr_resume;
    tr->add_option("--dataset", tr_data, "training dataset")->required()->check(CLI::ExistingFile);
    tr->add_option("--out-dir", tr_dir, "checkpoint and log directory")->required();
    tr->add_option("--resume", tr_resume, "continue from a checkpoint")->check(CLI::ExistingFile);

    // baseline
    auto* bl = app.add_subcommand("baseline", "evaluate the WMMSE baseline");
    std::string bl_data, bl_out;
    int bl_iters = 20, bl_bins = 200;
    bool bl_density = false;
    bl->add_option("--dataset", bl_data, "test dataset")->required()->check(CLI::ExistingFile);
    bl->add_option("--iters", bl_iters, "WMMSE iterations")->check(CLI::NonNegativeNumber);
    bl->add_option("--out", bl_out, "per-sample rate CSV")->required();
    bl->add_option("--bins", bl_bins, "histogram bins")->check(CLI::PositiveNumber);
    bl->add_flag("--density", bl_density, "normalize histograms to unit area");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained policy");
    std::string ev_data, ev_ckpt, ev_out, ev_label = "argnn";
    int ev_bins = 200;
    bool ev_density = false, ev_initial = false;
    ev->add_option("--dataset", ev_data, "test dataset")->required()->check(CLI::ExistingFile);
    ev->add_option("--checkpoint", ev_ckpt, "policy checkpoint")->check(CLI::ExistingFile);
    ev->add_flag("--initial", ev_initial, "score the initial precoder instead of a policy");
    ev->add_option("--label", ev_label, "method label");
    ev->add_option("--out", ev_out, "per-sample rate CSV")->required();
    ev->add_option("--bins", ev_bins, "histogram bins")->check(CLI::PositiveNumber);
    ev->add_flag("--density", ev_density, "normalize histograms to unit area");

    // sweep
    auto* sw = app.add_subcommand("sweep", "train and evaluate one policy per risk level");
    std::string sw_train, sw_test, sw_dir, sw_grid = "0.3,0.7,1.0";
    int sw_bins = 200;
    sw->add_option("--dataset", sw_train, "training dataset")->required()->check(CLI::ExistingFile);
    sw->add_option("--test", sw_test, "test dataset")->required()->check(CLI::ExistingFile);
    sw->add_option("--grid", sw_grid, "comma-separated alpha levels");
    sw->add_option("--out-dir", sw_dir, "output directory")->required();
    sw->add_option("--bins", sw_bins, "histogram bins")->check(CLI::PositiveNumber);

    // compare
    auto* cmp = app.add_subcommand("compare", "tabulate reports on a shared test set");
    std::vector<std::string> cmp_reports;
    std::string cmp_out;
    cmp->add_option("--reports", cmp_reports, "per-sample rate CSVs")->required()->check(CLI::ExistingFile);
    cmp->add_option("--out", cmp_out, "comparison CSV")->required();

    for (auto* sub : {gen, tr, bl, ev, sw, cmp}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig rc = load_config(g);

        if (*gen) {
            const std::uint64_t cell_seed = gen_cell_seed.value_or(rc.cell_seed);
            ensure_parent(gen_out);
            generate_dataset(rc.net, cell_seed, gen_n, gen_out, gen_first);
            const Dataset ds = read_dataset(gen_out);
            RunConfig shown = rc;
            shown.cell_seed = cell_seed;
            write_manifest(gen_out + ".manifest.txt", "generate", args, shown,
                           {{"n", std::to_string(gen_n)},
                            {"first_index", std::to_string(gen_first)},
                            {"dataset_hash", hex64(ds.fingerprint())}});
            std::cout << "wrote " << gen_n << " realizations to " << gen_out << "\n";
        } else if (*tr) {
            const Dataset data = read_dataset(tr_data, &rc.net);
            const TrainResult res = run_training(data, rc, tr_dir, tr_resume);
            write_manifest((fs::path(tr_dir) / "manifest.txt").string(), "train", args, rc,
                           {{"dataset_hash", hex64(data.fingerprint())},
                            {"config_hash", hex64(train_config_hash(rc.net, rc.arch, rc.train))},
                            {"state_hash", hex64(res.state.hash())}});
            std::cout << "final state " << hex64(res.state.hash()) << "\n";
        } else if (*bl) {
            const Dataset test = read_dataset(bl_data, &rc.net);
            const EvalReport r = evaluate_wmmse(test, eval_setup(rc, bl_bins, bl_density), bl_iters);
            write_report_files(r, bl_out);
            write_manifest(stem_of(bl_out) + "_manifest.txt", "baseline", args, rc,
                           {{"iters", std::to_string(bl_iters)}, {"dataset_hash", hex64(r.dataset_hash)}});
            print_summary(r);
        } else if (*ev) {
            if (ev_initial == !ev_ckpt.empty()) throw std::invalid_argument("eval: give exactly one of --checkpoint, --initial");
            const Dataset test = read_dataset(ev_data, &rc.net);
            const EvalSetup setup = eval_setup(rc, ev_bins, ev_density);
            EvalReport r;
            std::vector<std::pair<std::string, std::string>> extra;
            if (ev_initial) {
                r = evaluate_initial(test, setup, ev_label == "argnn" ? "initial" : ev_label);
            } else {
                KeyValues header;
                const PolicyParams params = read_checkpoint(ev_ckpt, &header);
                std::uint64_t config_hash = 0;
                if (header.has("config_hash")) config_hash = std::stoull(header.raw("config_hash"), nullptr, 16);
                r = evaluate_policy(params, test, setup, ev_label, config_hash);
                extra.emplace_back("checkpoint", ev_ckpt);
                extra.emplace_back("params_hash", hex64(params.hash()));
            }
            extra.emplace_back("dataset_hash", hex64(r.dataset_hash));
            write_report_files(r, ev_out);
            write_manifest(stem_of(ev_out) + "_manifest.txt", "eval", args, rc, extra);
            print_summary(r);
        } else if (*sw) {
            const std::vector<double> grid = parse_grid(sw_grid);
            const Dataset data = read_dataset(sw_train, &rc.net);
            const Dataset test = read_dataset(sw_test, &rc.net);
            const auto rows = alpha_sweep(
                [&](double a) {
                    RunConfig level = rc;
                    level.net.alpha.assign(static_cast<std::size_t>(rc.net.K), a);
                    const std::string dir = (fs::path(sw_dir) / ("alpha_" + format_double(a))).string();
                    std::cout << "alpha " << a << "\n";
                    const TrainResult res = run_training(data, level, dir, "");
                    const std::uint64_t ch = train_config_hash(level.net, level.arch, level.train);
                    EvalReport r = evaluate_policy(res.state.params, test, eval_setup(level, sw_bins, false),
                                                   "alpha=" + format_double(a), ch);
                    write_report_files(r, (fs::path(dir) / "eval_samples.csv").string());
                    print_summary(r);
                    return r;
                },
                grid);
            auto f = open_out((fs::path(sw_dir) / "sweep.csv").string());
            write_sweep_csv(rows, f);
            write_manifest((fs::path(sw_dir) / "manifest.txt").string(), "sweep", args, rc,
                           {{"grid", join_doubles(grid)}, {"test_dataset_hash", hex64(test.fingerprint())}});
        } else if (*cmp) {
            std::vector<EvalReport> reports;
            for (const auto& p : cmp_reports) reports.push_back(read_report(p));
            const Comparison c = compare(reports);
            {
                auto f = open_out(cmp_out);
                write_comparison_csv(c, f);
            }
            write_manifest(stem_of(cmp_out) + "_manifest.txt", "compare", args, rc,
                           {{"dataset_hash", hex64(reports.front().dataset_hash)}});
            for (const auto& r : reports) print_summary(r);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
