#include "anticollapse/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/data_io.hpp"
#include "anticollapse/error.hpp"
#include "anticollapse/gradcheck.hpp"
#include "anticollapse/losses.hpp"
#include "anticollapse/metrics.hpp"
#include "anticollapse/numerics.hpp"
#include "anticollapse/training.hpp"
#include "format.hpp"

namespace anticollapse::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string config_scalar(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw Error(ErrorKind::InvalidArgument, "config key '" + key + "' has an unsupported value " + v.dump());
}

/// Applies a flat JSON object to the options of `cmd` that were not given on the command line.
void apply_json_config(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedFile, "invalid JSON config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::MalformedFile, "JSON config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        CLI::Option* op = cmd->get_option_no_throw("--" + key);
        if (op == nullptr || key == "config") throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
        if (op->count() > 0) continue;
        std::vector<std::string> values;
        if (it->is_array()) {
            for (const auto& v : *it) values.push_back(config_scalar(v, key));
        } else {
            values.push_back(config_scalar(*it, key));
        }
        try {
            op->add_result(values);
            op->run_callback();
        } catch (const CLI::Error& e) {
            throw Error(ErrorKind::InvalidArgument, "config key '" + key + "': " + e.what());
        }
    }
}

struct CommonFlags {
    std::uint64_t seed = 0;
    std::string config;
    std::string out_dir;
    double epsilon = 0.5;
    double nu = 0.0035;
    double alpha = 32.0;
    double delta = 0.1;
    std::string variant = "mini-batch";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config, "JSON config file; explicit flags override it");
    cmd->add_option("--seed", flags.seed, "Random seed")->capture_default_str();
    cmd->add_option("--out-dir", flags.out_dir, "Output directory");
    cmd->add_option("--epsilon", flags.epsilon, "Coding-rate precision")->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--nu", flags.nu, "Weight of the base proxy loss")->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--alpha", flags.alpha, "ProxyAnchor scale")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--delta", flags.delta, "ProxyAnchor margin")->capture_default_str();
    cmd->add_option("--variant", flags.variant, "Proxy selection for the rate term")
        ->capture_default_str()
        ->check(CLI::IsMember({"all-class", "mini-batch"}));
}

AntiCollapseConfig anticollapse_config(const CommonFlags& flags) {
    AntiCollapseConfig c;
    c.nu = flags.nu;
    c.rate.epsilon = flags.epsilon;
    c.variant = flags.variant == "all-class" ? ProxyVariant::AllClass : ProxyVariant::MiniBatch;
    c.anchor.alpha = flags.alpha;
    c.anchor.delta = flags.delta;
    return c;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
        out << text;
        if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json rate_report_json(const RateReport& r, bool has_proxies) {
    json j;
    j["r_global"] = r.r_global;
    j["r_intra"] = r.r_intra;
    j["r_proxy"] = has_proxies ? json(r.r_proxy) : json(nullptr);
    j["density"] = optional_number(r.density);
    return j;
}

std::string matrix_csv(const Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += detail::format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckFlags {
    CommonFlags common;
    std::string loss = "all";
    std::size_t cases = 20;
    bool negate = false;
};

int cmd_gradcheck(const GradcheckFlags& flags, std::ostream& out, std::ostream& err) {
    GradcheckOptions options;
    if (flags.loss != "all") {
        const auto family = parse_loss_family(flags.loss);
        if (!family) {
            err << "unknown loss family: " << flags.loss << '\n';
            return 2;
        }
        options.families = {*family};
    }
    options.cases = flags.cases;
    options.seed = flags.common.seed;
    options.negate_analytic = flags.negate;
    options.rate.epsilon = flags.common.epsilon;
    options.anchor.alpha = flags.common.alpha;
    options.anchor.delta = flags.common.delta;
    options.nu = flags.common.nu;

    const auto reports = run_gradcheck(options);
    bool ok = true;
    json j = json::array();
    out << "loss                 cases  checks  max_rel_error  status\n";
    for (const auto& r : reports) {
        const bool pass = r.max_relative_error < kGradcheckTolerance;
        ok = ok && pass;
        char line[128];
        std::snprintf(line, sizeof line, "%-20s %5zu  %6zu  %13.3e  %s\n", std::string(to_string(r.family)).c_str(),
                      r.cases, r.checks, r.max_relative_error, pass ? "PASS" : "FAIL");
        out << line;
        j.push_back({{"loss", to_string(r.family)},
                     {"cases", r.cases},
                     {"checks", r.checks},
                     {"max_relative_error", r.max_relative_error},
                     {"pass", pass}});
    }
    if (!flags.common.out_dir.empty()) {
        fs::create_directories(flags.common.out_dir);
        write_text_atomic(fs::path(flags.common.out_dir) / "gradcheck.json", j.dump(2) + "\n");
    }
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainFlags {
    CommonFlags common;
    std::vector<std::string> synthetic;
    std::string input;
    std::string loss = "antico";
    std::string base = "pa";
    double lr = kDefaultLearningRate;
    double proxy_lr_mult = 100.0;
    std::size_t epochs = 100;
    std::size_t classes_per_batch = 0;
    std::size_t samples_per_class = 0;
    std::size_t eval_every = 1;
    bool with_replacement = false;
    bool softmax_all = false;
    bool renormalize = false;
};

MixtureConfig parse_synthetic(const std::vector<std::string>& tokens, std::uint64_t seed) {
    MixtureConfig mix;
    mix.seed = seed;
    for (const auto& tok : tokens) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--synthetic expects key=value, got " + tok);
        const std::string key = tok.substr(0, eq);
        const std::string value = tok.substr(eq + 1);
        try {
            if (key == "classes") mix.num_classes = std::stoul(value);
            else if (key == "per-class") mix.samples_per_class = std::stoul(value);
            else if (key == "dim") mix.dim = std::stoul(value);
            else if (key == "sigma") mix.noise_sigma = std::stod(value);
            else if (key == "seed") mix.seed = std::stoull(value);
            else if (key == "orthonormal") mix.orthonormal_means = value == "1" || value == "true";
            else throw Error(ErrorKind::InvalidArgument, "unknown --synthetic key " + key);
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::InvalidArgument, "bad value in --synthetic " + tok);
        }
    }
    return mix;
}

int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
    const std::string started = utc_timestamp();
    if (flags.synthetic.empty() == flags.input.empty()) {
        err << "train: give exactly one of --synthetic or --input\n";
        return 2;
    }
    const auto kind = parse_loss_kind(flags.loss);
    if (!kind) {
        err << "train: unknown loss " << flags.loss << '\n';
        return 2;
    }

    // Everything that can fail on input happens before any output is created.
    EmbeddingBatch data;
    json data_json;
    std::vector<std::string> warnings;
    if (!flags.synthetic.empty()) {
        const MixtureConfig mix = parse_synthetic(flags.synthetic, flags.common.seed);
        data = generate_mixture(mix);
        data_json = {{"source", "synthetic"},
                     {"classes", mix.num_classes},
                     {"per_class", mix.samples_per_class},
                     {"dim", mix.dim},
                     {"sigma", mix.noise_sigma},
                     {"seed", mix.seed},
                     {"orthonormal_means", mix.orthonormal_means}};
    } else {
        LoadOptions load;
        load.renormalize = flags.renormalize;
        data = load_embeddings(flags.input, load, &warnings);
        data_json = {{"source", "file"}, {"path", flags.input}, {"rows", data.size()}, {"dim", data.dim()}};
    }
    for (const auto& w : warnings) err << "warning: " << w << '\n';

    TrainConfig config;
    config.loss = *kind;
    config.anticollapse = anticollapse_config(flags.common);
    config.anticollapse.base = flags.base == "pnca" ? BaseLoss::ProxyNca : BaseLoss::ProxyAnchor;
    config.anticollapse.nca.include_positive_in_denominator = flags.softmax_all;
    config.lr = flags.lr;
    config.proxy_lr_multiplier = flags.proxy_lr_mult;
    config.epochs = flags.epochs;
    config.eval_every = flags.eval_every;
    config.seed = flags.common.seed;
    config.sample_with_replacement = flags.with_replacement;

    const auto groups = rows_by_class(data.labels);
    std::size_t smallest = data.size();
    for (const auto& g : groups) smallest = std::min(smallest, g.size());
    config.batch_plan.classes_per_batch =
        flags.classes_per_batch ? flags.classes_per_batch : std::min<std::size_t>(30, groups.size());
    config.batch_plan.samples_per_class =
        flags.samples_per_class ? flags.samples_per_class : std::max<std::size_t>(1, std::min<std::size_t>(3, smallest));

    const TrainResult result = train(config, data);

    const fs::path dir = flags.common.out_dir.empty() ? fs::path("run") : fs::path(flags.common.out_dir);
    fs::create_directories(dir);
    std::ostringstream csv;
    write_trace_csv(result.trace, csv);
    write_text_atomic(dir / "trace.csv", csv.str());
    std::ostringstream jsonl;
    write_trace_jsonl(result.trace, jsonl);
    write_text_atomic(dir / "trace.jsonl", jsonl.str());
    save_embeddings(result.state.embeddings, dir / "embeddings.acem");
    save_proxies(result.state.proxies, dir / "proxies.acem");

    json manifest;
    manifest["tool"] = "anticollapse";
    manifest["tool_version"] = kToolVersion;
    manifest["embedding_format_version"] = kEmbeddingFormatVersion;
    manifest["command"] = "train";
    manifest["seed"] = config.seed;
    manifest["config"] = {{"loss", to_string(config.loss)},
                          {"base", flags.base},
                          {"variant", flags.common.variant},
                          {"nu", config.anticollapse.nu},
                          {"epsilon", config.anticollapse.rate.epsilon},
                          {"alpha", config.anticollapse.anchor.alpha},
                          {"delta", config.anticollapse.anchor.delta},
                          {"softmax_all", flags.softmax_all},
                          {"lr", config.lr},
                          {"proxy_lr_multiplier", config.proxy_lr_multiplier},
                          {"epochs", config.epochs},
                          {"eval_every", config.eval_every},
                          {"classes_per_batch", config.batch_plan.classes_per_batch},
                          {"samples_per_class", config.batch_plan.samples_per_class},
                          {"with_replacement", config.sample_with_replacement}};
    manifest["data"] = data_json;
    manifest["outputs"] = {{"trace_csv", "trace.csv"},
                           {"trace_jsonl", "trace.jsonl"},
                           {"embeddings", "embeddings.acem"},
                           {"proxies", "proxies.acem"}};
    if (const TrainRecord* best = result.trace.best_recall()) {
        manifest["best_recall1"] = {{"epoch", best->epoch},
                                    {"recall1", best->recall1},
                                    {"r_global", best->rates.r_global},
                                    {"r_intra", best->rates.r_intra},
                                    {"r_proxy", best->rates.r_proxy}};
    }
    manifest["started_at"] = started;
    manifest["finished_at"] = utc_timestamp();
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    const TrainRecord* last = result.trace.records.empty() ? nullptr : &result.trace.records.back();
    out << "trained " << to_string(config.loss) << " for " << config.epochs << " epochs -> " << dir.string() << '\n';
    if (last) {
        out << "final: loss " << last->loss << "  R_global " << last->rates.r_global << "  R_intra "
            << last->rates.r_intra << "  R_proxy " << last->rates.r_proxy << "  R@1 " << last->recall1 << "  NMI "
            << last->nmi << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeFlags {
    CommonFlags common;
    std::string embeddings;
    std::string proxies;
    std::size_t bins = 20;
    bool renormalize = false;
};

int cmd_analyze(const AnalyzeFlags& flags, std::ostream& out, std::ostream& err) {
    if (flags.embeddings.empty()) {
        err << "analyze: --embeddings is required\n";
        return 2;
    }
    LoadOptions load;
    load.renormalize = flags.renormalize;
    std::vector<std::string> warnings;
    const EmbeddingBatch batch = load_embeddings(flags.embeddings, load, &warnings);
    std::optional<ProxySet> proxies;
    if (!flags.proxies.empty()) proxies = load_proxies(flags.proxies, load, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';

    RateParams rate;
    rate.epsilon = flags.common.epsilon;
    RateReport report;
    if (proxies) {
        report = rate_report(batch, *proxies, rate);
    } else {
        report.r_global = coding_rate(batch.features, rate);
        report.r_intra = intra_class_rate(batch.features, batch.labels, rate);
        try {
            report.density = embedding_density(batch);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DegenerateInput) throw;
        }
    }

    const SimilarityHistogram hist = similarity_histogram(batch, flags.bins);
    json j;
    j["rate_report"] = rate_report_json(report, proxies.has_value());
    j["rows"] = batch.size();
    j["dim"] = batch.dim();
    j["classes"] = distinct_labels(batch.labels).size();
    std::uint64_t pos_total = 0;
    std::uint64_t neg_total = 0;
    for (auto c : hist.positive) pos_total += c;
    for (auto c : hist.negative) neg_total += c;
    j["histogram"] = {{"bins", flags.bins},
                      {"edges", hist.edges},
                      {"positive", hist.positive},
                      {"negative", hist.negative},
                      {"positive_pairs", pos_total},
                      {"negative_pairs", neg_total}};

    std::optional<Matrix> heat;
    if (proxies) {
        heat = proxy_similarity_heat(*proxies);
        double sum = 0.0;
        double abs_sum = 0.0;
        std::size_t count = 0;
        for (std::size_t a = 0; a < heat->rows(); ++a)
            for (std::size_t b = 0; b < heat->cols(); ++b)
                if (a != b) {
                    sum += (*heat)(a, b);
                    abs_sum += std::abs((*heat)(a, b));
                    ++count;
                }
        j["proxy_similarity"] = {{"proxies", proxies->size()},
                                 {"max_abs_off_diagonal", max_off_diagonal(*heat)},
                                 {"mean_off_diagonal", count ? sum / static_cast<double>(count) : 0.0},
                                 {"mean_abs_off_diagonal", count ? abs_sum / static_cast<double>(count) : 0.0}};
    }

    if (!flags.common.out_dir.empty()) {
        const fs::path dir(flags.common.out_dir);
        fs::create_directories(dir);
        write_text_atomic(dir / "analysis.json", j.dump(2) + "\n");
        std::string csv = "bin_lo,bin_hi,positive,negative\n";
        for (std::size_t b = 0; b < flags.bins; ++b) {
            csv += detail::format_double(hist.edges[b]) + ',' + detail::format_double(hist.edges[b + 1]) + ',' +
                   std::to_string(hist.positive[b]) + ',' + std::to_string(hist.negative[b]) + '\n';
        }
        write_text_atomic(dir / "similarity_histogram.csv", csv);
        if (heat) write_text_atomic(dir / "proxy_similarity.csv", matrix_csv(*heat));
    }
    out << j.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalFlags {
    CommonFlags common;
    std::string embeddings;
    std::vector<std::size_t> ks{1, 2};
    std::size_t map_cutoff = 1000;
    bool renormalize = false;
};

int cmd_eval(const EvalFlags& flags, std::ostream& out, std::ostream& err) {
    if (flags.embeddings.empty()) {
        err << "eval: --embeddings is required\n";
        return 2;
    }
    LoadOptions load;
    load.renormalize = flags.renormalize;
    std::vector<std::string> warnings;
    const EmbeddingBatch batch = load_embeddings(flags.embeddings, load, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';

    EvalOptions options;
    options.ks = flags.ks;
    options.map_cutoff = flags.map_cutoff;
    options.seed = flags.common.seed;
    const EvalReport report = evaluate(batch, options);

    json j;
    json recall;
    for (const auto& [k, v] : report.recall_at) recall["R@" + std::to_string(k)] = v;
    j["recall"] = recall;
    j["nmi"] = report.nmi;
    j["f1"] = report.f1;
    json map;
    for (const auto& [c, v] : report.map_at) map["mAP@" + std::to_string(c)] = v;
    j["map"] = map;
    j["density"] = optional_number(report.density);
    j["rows"] = batch.size();
    j["classes"] = distinct_labels(batch.labels).size();

    if (!flags.common.out_dir.empty()) {
        fs::create_directories(flags.common.out_dir);
        write_text_atomic(fs::path(flags.common.out_dir) / "eval.json", j.dump(2) + "\n");
    }
    out << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Coding-rate anti-collapse losses for deep metric learning", "anticollapse"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GradcheckFlags gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
    add_common(gradcheck, gc.common);
    gradcheck->add_option("--loss", gc.loss, "Loss family or 'all'")->capture_default_str();
    gradcheck->add_option("--cases", gc.cases, "Seeded instances per family")->capture_default_str()
        ->check(CLI::PositiveNumber);
    gradcheck->add_flag("--inject-wrong-sign", gc.negate, "Negative control: negate analytic gradients")
        ->group("");

    TrainFlags tr;
    auto* train_cmd = app.add_subcommand("train", "Projected-gradient training run");
    add_common(train_cmd, tr.common);
    train_cmd->add_option("--synthetic", tr.synthetic,
                          "Synthetic mixture as key=value: classes, per-class, dim, sigma, seed, orthonormal")
        ->expected(1, -1);
    train_cmd->add_option("--input", tr.input, "Embedding file (.acem or .csv)");
    train_cmd->add_option("--loss", tr.loss, "pa | pnca | pair | pair+proxy | antico")->capture_default_str()
        ->check(CLI::IsMember({"pa", "pnca", "pair", "pair+proxy", "antico"}));
    train_cmd->add_option("--base", tr.base, "Base proxy loss for antico / pair+proxy")->capture_default_str()
        ->check(CLI::IsMember({"pa", "pnca"}));
    train_cmd->add_option("--lr", tr.lr, "Learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--proxy-lr-mult", tr.proxy_lr_mult, "Proxy learning-rate multiplier")
        ->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--classes-per-batch", tr.classes_per_batch, "P (default min(30, classes))");
    train_cmd->add_option("--samples-per-class", tr.samples_per_class, "K (default min(3, smallest class))");
    train_cmd->add_option("--eval-every", tr.eval_every, "Epochs between trace records")->capture_default_str()
        ->check(CLI::PositiveNumber);
    train_cmd->add_flag("--with-replacement", tr.with_replacement, "Sample rows with replacement");
    train_cmd->add_flag("--softmax-all", tr.softmax_all, "ProxyNCA denominator over all proxies");
    train_cmd->add_flag("--renormalize", tr.renormalize, "Renormalize non-unit rows on load");

    AnalyzeFlags an;
    auto* analyze = app.add_subcommand("analyze", "Structural metrics, similarity histograms, proxy similarities");
    add_common(analyze, an.common);
    analyze->add_option("--embeddings", an.embeddings, "Embedding file (required)");
    analyze->add_option("--proxies", an.proxies, "Proxy file");
    analyze->add_option("--bins", an.bins, "Histogram bins over [-1, 1]")->capture_default_str()
        ->check(CLI::PositiveNumber);
    analyze->add_flag("--renormalize", an.renormalize, "Renormalize non-unit rows on load");

    EvalFlags ev;
    auto* eval = app.add_subcommand("eval", "Recall@K, NMI, F1, mAP");
    add_common(eval, ev.common);
    eval->add_option("--embeddings", ev.embeddings, "Embedding file (required)");
    eval->add_option("--k", ev.ks, "Recall cutoffs")->capture_default_str()->delimiter(',');
    eval->add_option("--map-cutoff", ev.map_cutoff, "mAP truncation depth")->capture_default_str()
        ->check(CLI::PositiveNumber);
    eval->add_flag("--renormalize", ev.renormalize, "Renormalize non-unit rows on load");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        const std::pair<CLI::App*, const CommonFlags*> commands[] = {
            {gradcheck, &gc.common}, {train_cmd, &tr.common}, {analyze, &an.common}, {eval, &ev.common}};
        for (const auto& [cmd, common] : commands)
            if (*cmd && !common->config.empty()) apply_json_config(cmd, common->config);
        if (*gradcheck) return cmd_gradcheck(gc, out, err);
        if (*train_cmd) return cmd_train(tr, out, err);
        if (*analyze) return cmd_analyze(an, out, err);
        if (*eval) return cmd_eval(ev, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace anticollapse::cli
