// vnd: train a VAE on normal data, compute novelty scores, evaluate ROC/AUC,
// and run the bundled reproduction experiments.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "vnd/data_io.hpp"
#include "vnd/errors.hpp"
#include "vnd/eval.hpp"
#include "vnd/novelty.hpp"
#include "vnd/selfcheck.hpp"
#include "vnd/vae.hpp"

namespace fs = std::filesystem;
using namespace vnd;

namespace {

// ---------------------------------------------------------------------------
// config files: "key value" lines, '#' comments; --set key=value overrides

class RunConfig {
public:
    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides) {
        RunConfig cfg;
        if (!path.empty()) {
            std::ifstream in(path);
            if (!in) throw ConfigError("config file not found: " + path);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty() || line.front() == '#') continue;
                const auto sp = line.find(' ');
                if (sp == std::string::npos)
                    throw ConfigError("config line without a value: '" + line + "'");
                cfg.kv_[line.substr(0, sp)] = line.substr(sp + 1);
            }
        }
        for (const std::string& ov : overrides) {
            const auto eq = ov.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got '" + ov + "'");
            cfg.kv_[ov.substr(0, eq)] = ov.substr(eq + 1);
        }
        return cfg;
    }

    void restrict_keys(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : kv_) {
            if (allowed.count(k)) continue;
            std::string keys;
            for (const auto& a : allowed) keys += (keys.empty() ? "" : ", ") + a;
            throw ConfigError("unknown config key '" + k + "'. Valid keys: " + keys);
        }
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    std::string required(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end() || it->second.empty())
            throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key, double fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (...) {
            throw ConfigError("config key '" + key + "' is not a number: " + it->second);
        }
    }

    long integer(const std::string& key, long fallback) const {
        const double v = num(key, static_cast<double>(fallback));
        const long r = static_cast<long>(v);
        if (static_cast<double>(r) != v)
            throw ConfigError("config key '" + key + "' must be an integer");
        return r;
    }

private:
    std::map<std::string, std::string> kv_;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset loading

bool looks_like_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    const std::uint32_t magic = (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
                                (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
    return magic == 2051 || magic == 2049;
}

FeatureMatrix load_dataset(const std::string& path, const std::string& format,
                           const std::string& labels_path) {
    FeatureMatrix m;
    if (format == "idx" || (format == "auto" && looks_like_idx(path))) {
        m = load_idx(path);
    } else if (format == "matrix" || format == "auto") {
        m = load_matrix(path);
    } else {
        throw ConfigError("unknown data format '" + format + "' (auto, idx, matrix)");
    }
    if (!labels_path.empty()) {
        const std::vector<int> labels = load_idx_labels(labels_path);
        if (labels.size() != m.n)
            throw DataError("label file has " + std::to_string(labels.size()) +
                            " entries for " + std::to_string(m.n) + " samples");
        m.labels = labels;
    }
    return m;
}

FeatureMatrix seeded_subset(const FeatureMatrix& m, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count >= m.n) return m;
    std::vector<std::size_t> ids(m.n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(Rng::derive(seed, 0x5eedull));
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.uniform_index(m.n - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return m.select(ids);
}

void ensure_out_dir(const std::string& out) {
    if (out.empty()) throw ConfigError("missing required config key 'out'");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory " + out + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// shared scoring plumbing

unsigned sections_for(const std::vector<MetricId>& metrics) {
    unsigned mask = 0;
    for (const auto& m : metrics) mask |= m.required_sections();
    return mask;
}

void write_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    out.precision(17);
    out << "epoch\ttrain_loss\tval_loss\n";
    for (std::size_t e = 0; e < log.train_loss.size(); ++e)
        out << e << "\t" << log.train_loss[e] << "\t" << log.val_loss[e] << "\n";
    out << "# best_epoch " << log.best_epoch << "\n";
}

struct ScoreTable {
    std::vector<std::string> metric_of_row;
    std::vector<std::size_t> sample_of_row;
    VecD scores;
    std::vector<int> labels; // -1 when unknown

    void write(const std::string& path) const {
        std::ofstream out(path);
        out.precision(17);
        out << "sample_id\tmetric\tscore\tlabel\n";
        for (std::size_t r = 0; r < scores.size(); ++r)
            out << sample_of_row[r] << "\t" << metric_of_row[r] << "\t" << scores[r] << "\t"
                << labels[r] << "\n";
        if (!out) throw DataError("cannot write " + path);
    }
};

ScoreTable score_all_metrics(const VaeModel* model, const ReferenceSet* ref,
                             const FeatureMatrix& test, const std::vector<MetricId>& metrics,
                             const ScoreParams& params, int workers) {
    ScoreTable table;
    for (const MetricId& metric : metrics) {
        const auto results = score_batch(model, ref, test, metric, params, workers);
        for (std::size_t i = 0; i < results.size(); ++i) {
            table.sample_of_row.push_back(i);
            table.metric_of_row.push_back(metric.str());
            table.scores.push_back(results[i].score);
            table.labels.push_back(test.has_labels() ? test.labels[i] : -1);
        }
    }
    return table;
}

std::map<std::string, double> evaluate_table(const ScoreTable& table, int bins,
                                             const std::string& out_dir) {
    std::map<std::string, LabeledScores> by_metric;
    for (std::size_t r = 0; r < table.scores.size(); ++r) {
        if (table.labels[r] < 0)
            throw DataError("scores table has unlabeled rows; cannot evaluate");
        auto& ls = by_metric[table.metric_of_row[r]];
        ls.scores.push_back(table.scores[r]);
        ls.labels.push_back(table.labels[r]);
    }
    std::map<std::string, double> aucs;
    std::ofstream summary(out_dir + "/report");
    summary.precision(17);
    for (const auto& [metric, ls] : by_metric) {
        const EvalReport rep = evaluate(ls, bins);
        aucs[metric] = rep.auc_value;
        std::ofstream rout(out_dir + "/report__" + metric);
        write_report(rep, rout);
        std::ofstream roc_out(out_dir + "/roc__" + metric + ".tsv");
        write_roc_tsv(rep.roc, roc_out);
        summary << "auc " << metric << " " << rep.auc_value << "\n";
    }
    return aucs;
}

ScoreTable read_score_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scores table " + path);
    std::string line;
    if (!std::getline(in, line) || line != "sample_id\tmetric\tscore\tlabel")
        throw DataError(path + ": unexpected scores table header");
    ScoreTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t sid;
        std::string metric;
        double score;
        int label;
        if (!(ls >> sid >> metric >> score >> label))
            throw DataError(path + ": malformed scores row '" + line + "'");
        t.sample_of_row.push_back(sid);
        t.metric_of_row.push_back(metric);
        t.scores.push_back(score);
        t.labels.push_back(label);
    }
    if (t.scores.empty()) throw DataError(path + ": empty scores table");
    return t;
}

std::vector<MetricId> parse_metric_list(const std::string& csv) {
    std::vector<MetricId> metrics;
    for (const std::string& id : split_list(csv)) metrics.push_back(MetricId::parse(id));
    if (metrics.empty()) throw ConfigError("metric list is empty");
    return metrics;
}

TrainConfig train_config_from(const RunConfig& cfg, int default_batch, double default_lr,
                              int default_epochs) {
    TrainConfig tc;
    tc.lr = cfg.num("lr", default_lr);
    tc.batch_size = static_cast<int>(cfg.integer("batch-size", default_batch));
    tc.max_epochs = static_cast<int>(cfg.integer("max-epochs", default_epochs));
    tc.patience = static_cast<int>(cfg.integer("patience", 10));
    tc.mc_samples = static_cast<int>(cfg.integer("mc-samples", 1));
    tc.val_fraction = cfg.num("val-fraction", 0.2);
    tc.seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
    tc.workers = static_cast<int>(cfg.integer("workers", 1));
    return tc;
}

ScoreParams score_params_from(const RunConfig& cfg) {
    ScoreParams p;
    p.n_samples = static_cast<int>(cfg.integer("n-samples", 32));
    p.seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
    p.bound_lo = cfg.num("bound-lo", -10.0);
    p.bound_hi = cfg.num("bound-hi", 10.0);
    p.search.max_iterations = static_cast<int>(cfg.integer("search-iterations", 200));
    p.search.gradient_tolerance = cfg.num("search-tolerance", 1e-5);
    p.search.restarts = static_cast<int>(cfg.integer("search-restarts", 1));
    p.log_density = cfg.integer("log-density", 0) != 0;
    return p;
}

// ---------------------------------------------------------------------------
// commands

int cmd_train(const RunConfig& cfg) {
    cfg.restrict_keys({"data", "data-format", "labels", "arch", "decoder-family", "lr",
                       "batch-size", "max-epochs", "patience", "mc-samples", "val-fraction",
                       "seed", "workers", "preprocess", "out"});
    const std::string out = cfg.required("out");
    ensure_out_dir(out);

    FeatureMatrix data = load_dataset(cfg.required("data"), cfg.str("data-format", "auto"),
                                      cfg.str("labels"));
    const DecoderFamily family = parse_decoder_family(cfg.str("decoder-family", "gaussian"));
    const TrainConfig tc = train_config_from(cfg, 32768, 1e-3, 100);

    PreprocessStats stats;
    const std::string prep = cfg.str("preprocess", "none");
    if (prep == "qspace") {
        auto [normalized, fitted] = preprocess(data);
        data = std::move(normalized);
        stats = std::move(fitted);
    } else if (prep != "none") {
        throw ConfigError("preprocess must be 'none' or 'qspace', got '" + prep + "'");
    }

    VaeModel model = make_vae(cfg.required("arch"), family, tc.seed);
    if (data.d != model.input_dim())
        throw DataError("data has " + std::to_string(data.d) + " features, architecture needs " +
                        std::to_string(model.input_dim()));
    model.stats = std::move(stats);

    const TrainLog log = train(model, data, tc);
    save_checkpoint(model, out + "/checkpoint");
    write_train_log(log, out + "/train_log.tsv");
    std::cout << "trained " << model.arch_name << " for " << log.epochs_run
              << " epochs; best validation loss " << log.val_loss[log.best_epoch] << " at epoch "
              << log.best_epoch << "\n";
    std::cout << "checkpoint written to " << out << "/checkpoint\n";
    return 0;
}

int cmd_score(const RunConfig& cfg) {
    cfg.restrict_keys({"checkpoint", "reference", "reference-format", "data", "data-format",
                       "labels", "metrics", "n-samples", "seed", "workers",
                       "subsample-reference", "subsample-seed", "bound-lo", "bound-hi",
                       "search-iterations", "search-tolerance", "search-restarts", "log-density",
                       "out"});
    const std::string out = cfg.required("out");
    ensure_out_dir(out);

    const std::vector<MetricId> metrics = parse_metric_list(cfg.required("metrics"));
    const bool needs_model =
        std::any_of(metrics.begin(), metrics.end(), [](const MetricId& m) { return m.needs_model(); });

    VaeModel model;
    const std::string ckpt = cfg.str("checkpoint");
    if (needs_model) {
        if (ckpt.empty())
            throw ConfigError("these metrics need a trained model; set 'checkpoint'");
        model = load_checkpoint(ckpt);
    }

    FeatureMatrix test = load_dataset(cfg.required("data"), cfg.str("data-format", "auto"),
                                      cfg.str("labels"));
    const unsigned sections = sections_for(metrics);
    ReferenceSet ref;
    const int workers = static_cast<int>(cfg.integer("workers", 1));
    if (sections != 0) {
        FeatureMatrix normal = load_dataset(cfg.required("reference"),
                                            cfg.str("reference-format", "auto"), "");
        if (!model.stats.empty()) {
            normal = preprocess(normal, &model.stats).first;
            test = preprocess(test, &model.stats).first;
        }
        SubsampleSpec sub;
        sub.count = static_cast<std::size_t>(cfg.integer("subsample-reference", 0));
        sub.seed = static_cast<std::uint64_t>(cfg.integer("subsample-seed", 0));
        if (!needs_model) {
            // baseline-only scoring still needs an index over the raw inputs
            ArchSpec a;
            a.input_shape = {normal.d};
            a.latent_dim = 1;
            a.encoder = {LayerSpec::dense(2)};
            a.decoder = {LayerSpec::dense(2 * normal.d)};
            model = make_vae(a, DecoderFamily::gaussian, 0);
        }
        ref = build_reference(model, normal, sub, sections, workers);
    } else if (!model.stats.empty()) {
        test = preprocess(test, &model.stats).first;
    }

    const ScoreParams params = score_params_from(cfg);
    const ScoreTable table = score_all_metrics(needs_model || sections ? &model : nullptr,
                                               sections ? &ref : nullptr, test, metrics, params,
                                               workers);
    table.write(out + "/scores.tsv");
    std::cout << "wrote " << table.scores.size() << " scores (" << metrics.size() << " metrics x "
              << test.n << " samples) to " << out << "/scores.tsv\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    cfg.restrict_keys({"scores", "bins", "out"});
    const std::string out = cfg.required("out");
    ensure_out_dir(out);
    const ScoreTable table = read_score_table(cfg.required("scores"));
    const auto aucs = evaluate_table(table, static_cast<int>(cfg.integer("bins", 50)), out);
    for (const auto& [metric, a] : aucs) std::cout << metric << " auc " << a << "\n";
    return 0;
}

int cmd_reproduce_mnist(const RunConfig& cfg) {
    cfg.restrict_keys({"mnist-images", "mnist-labels", "digits", "arch", "decoder-family", "lr",
                       "batch-size", "max-epochs", "patience", "mc-samples", "seed", "workers",
                       "metrics", "n-samples", "train-fraction", "val-fraction",
                       "subsample-train", "subsample-test", "bins", "out"});
    const std::string out = cfg.required("out");
    ensure_out_dir(out);

    FeatureMatrix all = load_dataset(cfg.required("mnist-images"), "idx", cfg.required("mnist-labels"));

    std::vector<int> digits;
    const std::string digits_str = cfg.str("digits", "all");
    if (digits_str == "all") {
        for (int d = 0; d < 10; ++d) digits.push_back(d);
    } else {
        for (const std::string& tok : split_list(digits_str)) digits.push_back(std::stoi(tok));
    }

    const std::vector<MetricId> metrics = parse_metric_list(
        cfg.str("metrics", "vae-reg,latent-nn-euclid,latent-nn-bhatt,recon-det-err"));
    const DecoderFamily family = parse_decoder_family(cfg.str("decoder-family", "bernoulli"));
    const std::string arch = cfg.str("arch", "mnist_conv_z64");
    const TrainConfig base_tc = train_config_from(cfg, 64, 1e-4, 12);
    const ScoreParams base_params = score_params_from(cfg);
    const double train_fraction = cfg.num("train-fraction", 0.8);
    const double val_fraction = cfg.num("val-fraction", 0.1);
    const std::size_t sub_train = static_cast<std::size_t>(cfg.integer("subsample-train", 0));
    const std::size_t sub_test = static_cast<std::size_t>(cfg.integer("subsample-test", 0));
    const int bins = static_cast<int>(cfg.integer("bins", 50));

    std::map<std::string, std::map<int, double>> auc_table;
    for (const int digit : digits) {
        const std::string digit_dir = out + "/digit_" + std::to_string(digit);
        ensure_out_dir(digit_dir);
        OneDigitOut odo = one_digit_out(all, digit, train_fraction, val_fraction, base_tc.seed);
        odo.train = seeded_subset(odo.train, sub_train, Rng::derive(base_tc.seed, 100 + digit));
        odo.test = seeded_subset(odo.test, sub_test, Rng::derive(base_tc.seed, 200 + digit));

        VaeModel model;
        const std::string ckpt_path = digit_dir + "/checkpoint";
        if (fs::exists(ckpt_path)) {
            model = load_checkpoint(ckpt_path);
            std::cout << "digit " << digit << ": resuming from " << ckpt_path << "\n";
        } else {
            TrainConfig tc = base_tc;
            tc.seed = Rng::derive(base_tc.seed, static_cast<std::uint64_t>(digit));
            model = make_vae(arch, family, tc.seed);
            const TrainLog log = train(model, odo.train, odo.validation, tc);
            save_checkpoint(model, ckpt_path);
            write_train_log(log, digit_dir + "/train_log.tsv");
            std::cout << "digit " << digit << ": trained " << log.epochs_run
                      << " epochs, best validation loss " << log.val_loss[log.best_epoch]
                      << "\n";
        }

        const ReferenceSet ref = build_reference(model, odo.train, {}, sections_for(metrics),
                                                 base_tc.workers);
        ScoreParams params = base_params;
        params.seed = Rng::derive(base_params.seed, 300 + static_cast<std::uint64_t>(digit));
        const ScoreTable table = score_all_metrics(&model, &ref, odo.test, metrics, params,
                                                   base_tc.workers);
        table.write(digit_dir + "/scores.tsv");
        const auto aucs = evaluate_table(table, bins, digit_dir);
        for (const auto& [metric, a] : aucs) {
            auc_table[metric][digit] = a;
            std::cout << "digit " << digit << " " << metric << " auc " << a << "\n";
        }
    }

    std::ofstream tab(out + "/auc_table.tsv");
    tab.precision(6);
    tab << "metric";
    for (int d : digits) tab << "\tdigit_" << d;
    tab << "\n";
    for (const auto& [metric, per_digit] : auc_table) {
        tab << metric;
        for (int d : digits) tab << "\t" << per_digit.at(d);
        tab << "\n";
    }
    std::cout << "AUC table written to " << out << "/auc_table.tsv\n";
    return 0;
}

int cmd_synth_check(const RunConfig& cfg) {
    cfg.restrict_keys({"d", "n-normal", "n-abnormal", "separation", "data-seed", "arch",
                       "decoder-family", "lr", "batch-size", "max-epochs", "patience",
                       "mc-samples", "seed", "workers", "metrics", "n-samples", "bins",
                       "bound-lo", "bound-hi", "search-iterations", "search-tolerance",
                       "search-restarts", "log-density", "out"});
    const std::string out = cfg.required("out");
    ensure_out_dir(out);

    SynthConfig sc;
    sc.d = static_cast<std::size_t>(cfg.integer("d", 46));
    sc.n_normal = static_cast<std::size_t>(cfg.integer("n-normal", 4000));
    sc.n_abnormal = static_cast<std::size_t>(cfg.integer("n-abnormal", 1000));
    sc.separation = cfg.num("separation", 4.0);
    sc.seed = static_cast<std::uint64_t>(cfg.integer("data-seed", 1));
    const FeatureMatrix data = make_synthetic(sc);

    // normal pool: train / validation / held-out test normals
    std::vector<std::size_t> normal_ids, abnormal_ids;
    for (std::size_t i = 0; i < data.n; ++i)
        (data.labels[i] == 1 ? abnormal_ids : normal_ids).push_back(i);
    FeatureMatrix normal = data.select(normal_ids);
    const FeatureMatrix abnormal = data.select(abnormal_ids);
    SplitSpec split_spec;
    split_spec.train_fraction = 0.7;
    split_spec.val_fraction = 0.1;
    split_spec.seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
    const Split parts = split(normal, split_spec);

    FeatureMatrix test = parts.test;
    test.labels.assign(test.n, 0);
    test.values.insert(test.values.end(), abnormal.values.begin(), abnormal.values.end());
    test.labels.insert(test.labels.end(), abnormal.n, 1);
    test.n += abnormal.n;

    const std::string default_arch =
        sc.d == 46 ? "dense46_z8"
                   : (std::to_string(sc.d) + "-64-32-16-8-16-32-64-" + std::to_string(sc.d));
    const std::string arch = cfg.str("arch", default_arch);
    const DecoderFamily family = parse_decoder_family(cfg.str("decoder-family", "gaussian"));
    TrainConfig tc = train_config_from(cfg, 256, 1e-3, 60);
    VaeModel model = make_vae(arch, family, tc.seed);
    const TrainLog log = train(model, parts.train, parts.validation, tc);
    save_checkpoint(model, out + "/checkpoint");
    write_train_log(log, out + "/train_log.tsv");

    std::string metric_csv = cfg.str("metrics");
    if (metric_csv.empty()) {
        for (const std::string& id : MetricId::all_ids())
            metric_csv += (metric_csv.empty() ? "" : ",") + id;
    }
    const std::vector<MetricId> metrics = parse_metric_list(metric_csv);
    const ReferenceSet ref = build_reference(model, parts.train, {}, sections_for(metrics),
                                             tc.workers);
    const ScoreParams params = score_params_from(cfg);
    const ScoreTable table = score_all_metrics(&model, &ref, test, metrics, params, tc.workers);
    table.write(out + "/scores.tsv");
    const auto aucs = evaluate_table(table, static_cast<int>(cfg.integer("bins", 50)), out);

    const double baseline = aucs.count("baseline-nn") ? aucs.at("baseline-nn") : 0.0;
    for (const auto& [metric, a] : aucs) {
        std::cout << metric << " auc " << a;
        if (metric != "baseline-nn" && baseline > 0.0)
            std::cout << (a >= baseline - 0.05 ? "  (>= baseline - 0.05)" : "");
        std::cout << "\n";
    }
    if (baseline > 0.0) std::cout << "baseline-nn auc " << baseline << "\n";
    return 0;
}

int cmd_selftest() {
    const auto results = selfcheck::run_all(7);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-42s %s  (%s)\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"VAE-based novelty detection: training, scoring, and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "config file with 'key value' lines");
        sub->add_option("-s,--set", overrides, "override a config key (key=value)");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a VAE on normal data");
    CLI::App* score_cmd = app.add_subcommand("score", "compute novelty scores for test data");
    CLI::App* eval_cmd = app.add_subcommand("eval", "ROC/AUC evaluation of a scores table");
    CLI::App* repro_cmd =
        app.add_subcommand("reproduce-mnist", "one-digit-out MNIST benchmark (AUC table)");
    CLI::App* synth_cmd =
        app.add_subcommand("synth-check", "synthetic stand-in experiment over all metrics");
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the built-in oracle suites");
    for (CLI::App* sub : {train_cmd, score_cmd, eval_cmd, repro_cmd, synth_cmd}) add_common(sub);

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = RunConfig::load(config_path, overrides);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (score_cmd->parsed()) return cmd_score(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg);
        if (repro_cmd->parsed()) return cmd_reproduce_mnist(cfg);
        if (synth_cmd->parsed()) return cmd_synth_check(cfg);
        if (selftest_cmd->parsed()) return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
