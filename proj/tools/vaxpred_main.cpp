// vaxpred: antigen screening pipeline driver.
//
// Subcommands cover the full workflow: split datasets, featurize sequences,
// generate synthetic embedding bundles, train, predict, evaluate, and export
// per-residue attention. Every run writes a JSON manifest next to its primary
// output recording the resolved flags, inputs, outputs, and wall time.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
// failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vaxpred/checkpoint.hpp"
#include "vaxpred/dataset.hpp"
#include "vaxpred/descriptors.hpp"
#include "vaxpred/embedio.hpp"
#include "vaxpred/metrics.hpp"
#include "vaxpred/model.hpp"
#include "vaxpred/trainer.hpp"

namespace {

using namespace vaxpred;

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Provenance for one subcommand run, serialized as <output>.manifest.json.
struct RunContext {
    std::string subcommand;
    std::map<std::string, std::string> flags;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    void write_manifest(const std::string& primary_output) const {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        nlohmann::json j;
        j["subcommand"] = subcommand;
        j["tool_version"] = std::string(kToolVersion);
        j["flags"] = flags;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["duration_seconds"] = seconds;
        const std::string path = primary_output + ".manifest.json";
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ValidationError("cannot write manifest: " + path);
        out << j.dump(2) << '\n';
    }
};

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << content;
    if (!out) throw ValidationError("write failed: " + path);
}

std::vector<std::string> split_on_commas(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::array<double, 3> parse_ratios(const std::string& text) {
    const auto parts = split_on_commas(text);
    if (parts.size() != 3) {
        throw ValidationError("--ratios needs three comma-separated numbers, got '" + text + "'");
    }
    std::array<double, 3> ratios{};
    for (std::size_t i = 0; i < 3; ++i) {
        try {
            std::size_t used = 0;
            ratios[i] = std::stod(parts[i], &used);
            if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
        } catch (const std::exception&) {
            throw ValidationError("bad ratio value '" + parts[i] + "'");
        }
    }
    return ratios;
}

/// Partition records according to a split manifest; the manifest and the
/// record set must cover exactly the same ids.
struct PartitionedRecords {
    std::vector<ProteinRecord> train, valid, test;
};

PartitionedRecords apply_split(const std::vector<ProteinRecord>& records,
                               const SplitManifest& manifest) {
    std::map<std::string, Partition> assignment;
    for (const auto& [id, part] : manifest.entries) assignment.emplace(id, part);
    if (assignment.size() != records.size()) {
        throw ValidationError("split manifest has " + std::to_string(assignment.size()) +
                              " ids but the dataset has " + std::to_string(records.size()));
    }
    PartitionedRecords out;
    for (const auto& rec : records) {
        const auto it = assignment.find(rec.id);
        if (it == assignment.end()) {
            throw ValidationError("record '" + rec.id + "' missing from split manifest");
        }
        switch (it->second) {
            case Partition::train: out.train.push_back(rec); break;
            case Partition::valid: out.valid.push_back(rec); break;
            case Partition::test: out.test.push_back(rec); break;
        }
    }
    return out;
}

/// Model width is dictated by the bundles; all bundles must agree.
std::size_t bundle_width(const BundleMap& bundles) {
    if (bundles.empty()) throw ValidationError("embedding container holds no bundles");
    std::size_t dim = 0;
    for (const auto& [id, b] : bundles) {
        if (dim == 0) {
            dim = b.seq_embedding.cols();
        } else if (b.seq_embedding.cols() != dim) {
            throw ValidationError("bundle '" + id + "' width " +
                                  std::to_string(b.seq_embedding.cols()) +
                                  " differs from other bundles (" + std::to_string(dim) + ")");
        }
    }
    return dim;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"antigen screening pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--cli-config", "", "INI file with defaults; command-line flags win");

    // ---- split ----------------------------------------------------------
    auto* split = app.add_subcommand("split", "assign records to train/valid/test");
    std::string split_data, split_out, split_ratios = "0.7,0.1,0.2";
    std::vector<std::string> split_cross;
    std::uint64_t split_seed = 1;
    double split_valid_frac = 0.1;
    split->add_option("--data", split_data, "record CSV")->required();
    split->add_option("--out", split_out, "output split CSV")->required();
    auto* ratios_opt = split->add_option("--ratios", split_ratios,
                                         "train,valid,test fractions (default 0.7,0.1,0.2)");
    auto* cross_opt =
        split->add_option("--cross", split_cross,
                          "cross-source mode: FROM_SOURCE TO_SOURCE (train on one source, "
                          "test on the other)")
            ->expected(2);
    ratios_opt->excludes(cross_opt);
    split->add_option("--valid-frac", split_valid_frac,
                      "validation slice of the train source in cross mode");
    split->add_option("--seed", split_seed, "shuffle seed");
    split->callback([&] {
        RunContext ctx;
        ctx.subcommand = "split";
        ctx.inputs = {split_data};
        ctx.flags = {{"data", split_data},
                     {"out", split_out},
                     {"seed", std::to_string(split_seed)}};
        const auto records = parse_records_file(split_data);
        SplitManifest manifest;
        if (!split_cross.empty()) {
            std::vector<ProteinRecord> from, to;
            for (const auto& r : records) {
                if (r.source == split_cross[0]) from.push_back(r);
                if (r.source == split_cross[1]) to.push_back(r);
            }
            manifest = make_cross_test(from, to, split_seed, split_valid_frac);
            ctx.flags["cross"] = split_cross[0] + "," + split_cross[1];
            ctx.flags["valid_frac"] = format_g9(split_valid_frac);
        } else {
            manifest = make_split(records, parse_ratios(split_ratios), split_seed);
            ctx.flags["ratios"] = split_ratios;
        }
        write_split(manifest, split_out);
        ctx.outputs = {split_out};
        ctx.write_manifest(split_out);
    });

    // ---- featurize ------------------------------------------------------
    auto* feat = app.add_subcommand("featurize", "emit descriptor matrices or ACC vectors");
    std::string feat_data, feat_out;
    bool feat_acc = false;
    std::size_t feat_max_lag = 8;
    feat->add_option("--data", feat_data, "record CSV")->required();
    feat->add_option("--out", feat_out, "output CSV")->required();
    feat->add_flag("--acc", feat_acc, "emit fixed-length auto/cross-covariance vectors");
    feat->add_option("--max-lag", feat_max_lag, "ACC maximum lag (default 8)");
    feat->callback([&] {
        RunContext ctx;
        ctx.subcommand = "featurize";
        ctx.inputs = {feat_data};
        ctx.flags = {{"data", feat_data},
                     {"out", feat_out},
                     {"acc", feat_acc ? "true" : "false"},
                     {"max_lag", std::to_string(feat_max_lag)}};
        const auto records = parse_records_file(feat_data);
        std::string csv;
        if (feat_acc) {
            const std::size_t n_values = static_cast<std::size_t>(kDescriptorWidth) *
                                         kDescriptorWidth * feat_max_lag;
            csv = "id";
            for (std::size_t i = 0; i < n_values; ++i) {
                char col[32];
                std::snprintf(col, sizeof(col), ",acc%03zu", i);
                csv += col;
            }
            csv += '\n';
            for (const auto& rec : records) {
                const auto values = acc_transform(sequence_descriptors(rec.sequence), feat_max_lag);
                csv += rec.id;
                for (double v : values) {
                    csv += ',';
                    csv += format_g9(v);
                }
                csv += '\n';
            }
        } else {
            csv = "id,position,residue,e1,e2,e3,e4,e5,z1,z2,z3\n";
            for (const auto& rec : records) {
                const Mat m = sequence_descriptors(rec.sequence);
                for (std::size_t i = 0; i < m.rows(); ++i) {
                    csv += rec.id + ',' + std::to_string(i + 1) + ',' + rec.sequence[i];
                    for (std::size_t j = 0; j < m.cols(); ++j) {
                        csv += ',';
                        csv += format_g9(m(i, j));
                    }
                    csv += '\n';
                }
            }
        }
        write_text_file(feat_out, csv);
        ctx.outputs = {feat_out};
        ctx.write_manifest(feat_out);
    });

    // ---- embed synth ----------------------------------------------------
    auto* embed = app.add_subcommand("embed", "embedding container tools");
    embed->require_subcommand(1);
    auto* synth = embed->add_subcommand("synth", "deterministic synthetic embedding bundles");
    std::string synth_data, synth_out;
    std::size_t synth_dim = 16;
    std::uint64_t synth_seed = 1;
    synth->add_option("--data", synth_data, "record CSV")->required();
    synth->add_option("--out", synth_out, "output embedding container")->required();
    synth->add_option("--dim", synth_dim, "embedding width (default 16)");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->callback([&] {
        RunContext ctx;
        ctx.subcommand = "embed synth";
        ctx.inputs = {synth_data};
        ctx.flags = {{"data", synth_data},
                     {"out", synth_out},
                     {"dim", std::to_string(synth_dim)},
                     {"seed", std::to_string(synth_seed)}};
        const auto records = parse_records_file(synth_data);
        std::vector<EmbeddingBundle> bundles;
        bundles.reserve(records.size());
        for (const auto& rec : records) {
            bundles.push_back(synthetic_bundle(rec, synth_dim, synth_seed));
        }
        write_bundles(bundles, synth_out);
        ctx.outputs = {synth_out};
        ctx.write_manifest(synth_out);
    });

    // ---- train ----------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model from bundles and a split");
    std::string tr_data, tr_bundles, tr_split, tr_ckpt, tr_history;
    TrainConfig tconfig;
    std::size_t tr_heads = 8, tr_hidden = 0;
    double tr_dropout = 0.1, tr_rope_base = 10000.0;
    tr->add_option("--data", tr_data, "record CSV")->required();
    tr->add_option("--bundles", tr_bundles, "embedding container")->required();
    tr->add_option("--split", tr_split, "split CSV from the split subcommand")->required();
    tr->add_option("--out-checkpoint", tr_ckpt, "output checkpoint")->required();
    tr->add_option("--history-csv", tr_history, "per-epoch loss/accuracy CSV")->required();
    tr->add_option("--lr", tconfig.lr, "learning rate (default 5e-4)");
    tr->add_option("--weight-decay", tconfig.weight_decay, "decoupled weight decay (default 0.01)");
    tr->add_option("--max-tokens", tconfig.max_tokens, "residue budget per batch (default 4000)");
    tr->add_option("--grad-accum", tconfig.grad_accum, "batches per optimizer step (default 1)");
    tr->add_option("--epochs", tconfig.max_epochs, "maximum epochs (default 50)");
    tr->add_option("--patience", tconfig.patience, "early-stopping patience (default 5)");
    tr->add_option("--seed", tconfig.seed, "master seed (default 1)");
    tr->add_option("--heads", tr_heads, "attention heads (default 8)");
    tr->add_option("--hidden", tr_hidden, "head hidden width (default: embedding width)");
    tr->add_option("--dropout", tr_dropout, "dropout probability (default 0.1)");
    tr->add_option("--rope-base", tr_rope_base, "rotary frequency base (default 10000)");
    tr->callback([&] {
        RunContext ctx;
        ctx.subcommand = "train";
        ctx.inputs = {tr_data, tr_bundles, tr_split};
        const auto records = parse_records_file(tr_data);
        const auto manifest = read_split(tr_split);
        const auto bundles = index_bundles(read_bundles(tr_bundles));
        const auto parts = apply_split(records, manifest);

        ModelConfig mconfig;
        mconfig.dim = bundle_width(bundles);
        mconfig.n_heads = tr_heads;
        mconfig.hidden = tr_hidden;
        mconfig.dropout_p = tr_dropout;
        mconfig.rope_base = tr_rope_base;

        ctx.flags = {{"data", tr_data},
                     {"bundles", tr_bundles},
                     {"split", tr_split},
                     {"out_checkpoint", tr_ckpt},
                     {"history_csv", tr_history},
                     {"lr", format_g9(tconfig.lr)},
                     {"weight_decay", format_g9(tconfig.weight_decay)},
                     {"max_tokens", std::to_string(tconfig.max_tokens)},
                     {"grad_accum", std::to_string(tconfig.grad_accum)},
                     {"epochs", std::to_string(tconfig.max_epochs)},
                     {"patience", std::to_string(tconfig.patience)},
                     {"seed", std::to_string(tconfig.seed)},
                     {"heads", std::to_string(tr_heads)},
                     {"hidden", std::to_string(tr_hidden)},
                     {"dropout", format_g9(tr_dropout)},
                     {"rope_base", format_g9(tr_rope_base)},
                     {"dim", std::to_string(mconfig.dim)}};

        const TrainResult result = train(parts.train, parts.valid, bundles, mconfig, tconfig);
        save_checkpoint(result.best, tr_ckpt);

        std::string history = "epoch,train_loss,valid_acc\n";
        for (const auto& row : result.history) {
            history += std::to_string(row.epoch) + ',' + format_g17(row.train_loss) + ',' +
                       format_g17(row.valid_acc) + '\n';
        }
        write_text_file(tr_history, history);

        std::cerr << "best epoch " << result.best_epoch << " valid_acc "
                  << format_g9(result.best_valid_acc)
                  << (result.stopped_early ? " (stopped early)" : "") << '\n';
        ctx.outputs = {tr_ckpt, tr_history};
        ctx.write_manifest(tr_ckpt);
    });

    // ---- predict --------------------------------------------------------
    auto* pred = app.add_subcommand("predict", "score records with a checkpoint");
    std::string pred_data, pred_bundles, pred_ckpt, pred_out;
    double pred_threshold = 0.5;
    bool pred_f32 = false;
    pred->add_option("--data", pred_data, "record CSV")->required();
    pred->add_option("--bundles", pred_bundles, "embedding container")->required();
    pred->add_option("--checkpoint", pred_ckpt, "trained checkpoint")->required();
    pred->add_option("--out", pred_out, "output CSV")->required();
    pred->add_option("--threshold", pred_threshold, "decision threshold (default 0.5)");
    pred->add_flag("--f32", pred_f32,
                   "float32 inference path (faster, not covered by tolerance contracts)");
    pred->callback([&] {
        RunContext ctx;
        ctx.subcommand = "predict";
        ctx.inputs = {pred_data, pred_bundles, pred_ckpt};
        ctx.flags = {{"data", pred_data},
                     {"bundles", pred_bundles},
                     {"checkpoint", pred_ckpt},
                     {"out", pred_out},
                     {"threshold", format_g9(pred_threshold)},
                     {"f32", pred_f32 ? "true" : "false"}};
        const auto records = parse_records_file(pred_data);
        const auto bundles = index_bundles(read_bundles(pred_bundles));
        const Checkpoint ckpt = load_checkpoint(pred_ckpt);

        std::vector<ScoredLabel> scored;
        if (pred_f32) {
            const auto params32 = params_to_f32(ckpt.params);
            const auto items = resolve_records(records, bundles, ckpt.config);
            scored.reserve(items.size());
            for (const auto& item : items) {
                const auto logits =
                    model_forward_f32(*item.bundle, item.descriptors, params32, ckpt.config);
                const std::array<double, 2> wide{static_cast<double>(logits[0]),
                                                 static_cast<double>(logits[1])};
                scored.push_back({item.record->id, positive_probability(wide),
                                  item.record->label});
            }
        } else {
            scored = score_records(records, bundles, ckpt.params, ckpt.config);
        }

        std::string csv = "id,score,label_pred\n";
        for (const auto& s : scored) {
            csv += s.id + ',' + format_g17(s.score) + ',' +
                   (s.score > pred_threshold ? '1' : '0') + '\n';
        }
        write_text_file(pred_out, csv);
        ctx.outputs = {pred_out};
        ctx.write_manifest(pred_out);
    });

    // ---- eval -----------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "repeated-subsample metric report");
    std::string ev_data, ev_bundles, ev_ckpt, ev_out, ev_split, ev_partition = "test";
    std::size_t ev_repeats = 10, ev_k = 30;
    double ev_fraction = 0.5, ev_threshold = 0.5;
    std::uint64_t ev_seed = 1;
    ev->add_option("--data", ev_data, "record CSV")->required();
    ev->add_option("--bundles", ev_bundles, "embedding container")->required();
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    ev->add_option("--out", ev_out, "output metric CSV")->required();
    ev->add_option("--split", ev_split, "optional split CSV; restricts to one partition");
    ev->add_option("--partition", ev_partition, "partition to evaluate when --split is given");
    ev->add_option("--repeats", ev_repeats, "number of subsamples (default 10)");
    ev->add_option("--fraction", ev_fraction, "fraction per subsample (default 0.5)");
    ev->add_option("--threshold", ev_threshold, "decision threshold (default 0.5)");
    ev->add_option("--k", ev_k, "k for the top-k positive rate (default 30)");
    ev->add_option("--seed", ev_seed, "subsample seed (default 1)");
    ev->callback([&] {
        RunContext ctx;
        ctx.subcommand = "eval";
        ctx.inputs = {ev_data, ev_bundles, ev_ckpt};
        ctx.flags = {{"data", ev_data},
                     {"bundles", ev_bundles},
                     {"checkpoint", ev_ckpt},
                     {"out", ev_out},
                     {"repeats", std::to_string(ev_repeats)},
                     {"fraction", format_g9(ev_fraction)},
                     {"threshold", format_g9(ev_threshold)},
                     {"k", std::to_string(ev_k)},
                     {"seed", std::to_string(ev_seed)}};
        auto records = parse_records_file(ev_data);
        if (!ev_split.empty()) {
            const auto manifest = read_split(ev_split);
            const auto parts = apply_split(records, manifest);
            const Partition want = partition_from_name(ev_partition);
            records = want == Partition::train ? parts.train
                      : want == Partition::valid ? parts.valid
                                                 : parts.test;
            ctx.inputs.push_back(ev_split);
            ctx.flags["split"] = ev_split;
            ctx.flags["partition"] = ev_partition;
        }
        const auto bundles = index_bundles(read_bundles(ev_bundles));
        const Checkpoint ckpt = load_checkpoint(ev_ckpt);
        const RepeatedEval result =
            evaluate_repeated(records, bundles, ckpt.params, ckpt.config, ev_repeats,
                              ev_fraction, ev_seed, ev_threshold, ev_k);

        std::string csv = report_csv_header() + '\n';
        for (std::size_t r = 0; r < result.reports.size(); ++r) {
            csv += report_csv_row(result.reports[r], std::to_string(r)) + '\n';
        }
        csv += aggregate_csv_row(result.mean, "mean") + '\n';
        csv += aggregate_csv_row(result.sd, "std") + '\n';
        write_text_file(ev_out, csv);
        ctx.outputs = {ev_out};
        ctx.write_manifest(ev_out);
    });

    // ---- attn-export ----------------------------------------------------
    auto* attn = app.add_subcommand("attn-export", "per-residue pooling weights");
    std::string attn_data, attn_bundles, attn_ckpt, attn_out, attn_ids;
    attn->add_option("--data", attn_data, "record CSV")->required();
    attn->add_option("--bundles", attn_bundles, "embedding container")->required();
    attn->add_option("--checkpoint", attn_ckpt, "trained checkpoint")->required();
    attn->add_option("--out", attn_out, "output CSV")->required();
    attn->add_option("--ids", attn_ids, "comma-separated record ids (default: all)");
    attn->callback([&] {
        RunContext ctx;
        ctx.subcommand = "attn-export";
        ctx.inputs = {attn_data, attn_bundles, attn_ckpt};
        ctx.flags = {{"data", attn_data},
                     {"bundles", attn_bundles},
                     {"checkpoint", attn_ckpt},
                     {"out", attn_out},
                     {"ids", attn_ids}};
        auto records = parse_records_file(attn_data);
        if (!attn_ids.empty()) {
            const auto wanted = split_on_commas(attn_ids);
            std::vector<ProteinRecord> picked;
            for (const auto& id : wanted) {
                bool found = false;
                for (const auto& rec : records) {
                    if (rec.id == id) {
                        picked.push_back(rec);
                        found = true;
                        break;
                    }
                }
                if (!found) throw ValidationError("no record with id '" + id + "'");
            }
            records = std::move(picked);
        }
        const auto bundles = index_bundles(read_bundles(attn_bundles));
        const Checkpoint ckpt = load_checkpoint(attn_ckpt);
        const auto items = resolve_records(records, bundles, ckpt.config);

        std::string csv = "id,position,residue,alpha\n";
        for (const auto& item : items) {
            DropoutMode eval;
            const ForwardTrace trace =
                model_forward(*item.bundle, item.descriptors, ckpt.params, ckpt.config, eval);
            for (const auto& row : export_attention(trace, *item.record)) {
                csv += item.record->id + ',' + std::to_string(row.position) + ',' + row.residue +
                       ',' + format_g17(row.alpha) + '\n';
            }
        }
        write_text_file(attn_out, csv);
        ctx.outputs = {attn_out};
        ctx.write_manifest(attn_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
