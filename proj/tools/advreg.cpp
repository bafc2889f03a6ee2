// advreg: train, evaluate and analyze adversarially regularized reading-comprehension models.

#include <advreg/advreg.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using advreg::Json;

void print_error(const std::string& kind, const std::string& message)
{
    Json j;
    j["error"] = kind;
    j["message"] = message;
    std::cerr << j.dump() << "\n";
}

struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string task;
    std::optional<double> epsilon;
    std::optional<double> xi;
    bool at = false;
    bool vat = false;
    bool vat_unlabeled = false;
    bool nel = false;
    bool da = false;
    std::string train;
    std::string dev;
    std::string unlabeled;
    std::string augmentation;
    std::string out;
    std::vector<std::string> set;

    advreg::KeyValues overrides() const
    {
        advreg::KeyValues kv;
        auto put = [&kv](const std::string& k, const std::string& v) {
            if (!v.empty()) {
                kv[k] = v;
            }
        };
        std::ostringstream num;
        num.precision(17);
        auto fmt = [&num](double v) {
            num.str("");
            num << v;
            return num.str();
        };
        for (const auto& s : set) {
            const auto eq = s.find('=');
            advreg::require(eq != std::string::npos, advreg::ErrorKind::UsageError, "--set expects key=value, got '" + s + "'");
            kv[s.substr(0, eq)] = s.substr(eq + 1);
        }
        if (seed) {
            kv["seed"] = std::to_string(*seed);
        }
        put("task", task);
        if (epsilon) {
            kv["epsilon"] = fmt(*epsilon);
        }
        if (xi) {
            kv["xi"] = fmt(*xi);
        }
        for (const auto& [flag, key] : {std::pair{at, "at"}, std::pair{vat, "vat"}, std::pair{vat_unlabeled, "vat_unlabeled"},
                                        std::pair{nel, "nel"}, std::pair{da, "da"}}) {
            if (flag) {
                kv[key] = "true";
            }
        }
        put("train", train);
        put("dev", dev);
        put("unlabeled", unlabeled);
        put("augmentation", augmentation);
        put("out", out);
        return kv;
    }
};

advreg::RunConfig load_run_config(const RunFlags& flags)
{
    advreg::KeyValues file;
    if (!flags.config.empty()) {
        file = advreg::parse_key_values(advreg::read_text_file(flags.config));
    }
    return advreg::resolve_config(file, flags.overrides());
}

std::vector<double> parse_boundaries(const std::string& text)
{
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::logic_error&) {
            advreg::fail(advreg::ErrorKind::UsageError, "bad boundary '" + item + "'");
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial regularization for reading comprehension"};
    app.require_subcommand(1);

    RunFlags run;
    auto* train = app.add_subcommand("train", "train a model; writes model.ckpt, metrics.jsonl, summary.json");
    train->add_option("--config", run.config, "key = value config file");
    train->add_option("--seed", run.seed);
    train->add_option("--task", run.task, "se, seu or mc");
    train->add_option("--epsilon", run.epsilon, "relative perturbation strength");
    train->add_option("--xi", run.xi, "VAT probe radius");
    train->add_flag("--at", run.at, "adversarial training");
    train->add_flag("--vat", run.vat, "virtual adversarial training on labeled data");
    train->add_flag("--vat-unlabeled", run.vat_unlabeled, "virtual adversarial training on unlabeled data");
    train->add_flag("--nel", run.nel, "negative entropy loss on unanswerable questions");
    train->add_flag("--da", run.da, "train on the augmentation set");
    train->add_option("--train", run.train);
    train->add_option("--dev", run.dev);
    train->add_option("--unlabeled", run.unlabeled);
    train->add_option("--augmentation", run.augmentation);
    train->add_option("--out", run.out, "output directory");
    train->add_option("--set", run.set, "extra config override key=value");

    std::string eval_ckpt;
    std::string eval_data;
    std::string eval_out;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--out", eval_out, "directory for metrics.json and predictions.json");

    std::string aug_data;
    std::string aug_gazetteer;
    std::string aug_out;
    std::size_t aug_shuffle = 4000;
    std::size_t aug_replacement = 4000;
    std::uint64_t aug_seed = 0;
    auto* augment = app.add_subcommand("augment", "build unanswerable questions by shuffling and entity replacement");
    augment->add_option("--data", aug_data)->required();
    augment->add_option("--gazetteer", aug_gazetteer, "surface<TAB>type lines")->required();
    augment->add_option("--shuffle", aug_shuffle, "target number of shuffled questions");
    augment->add_option("--replacement", aug_replacement, "target number of entity-replaced questions");
    augment->add_option("--seed", aug_seed);
    augment->add_option("--out", aug_out, "output dataset file")->required();

    std::vector<std::string> an_ckpts;
    std::vector<std::string> an_baseline;
    std::string an_data;
    std::string an_train;
    std::string an_out;
    std::size_t an_k = 10000;
    std::string an_bounds = "0.01,0.02,0.03,0.05";
    auto* analyze = app.add_subcommand("analyze", "F1 by rare-word difficulty bucket");
    analyze->add_option("--checkpoint", an_ckpts, "checkpoints whose scores are averaged")->required();
    analyze->add_option("--baseline", an_baseline, "baseline checkpoints for the relative improvement table");
    analyze->add_option("--data", an_data)->required();
    analyze->add_option("--train", an_train, "training set defining the rare words")->required();
    analyze->add_option("--rare-k", an_k);
    analyze->add_option("--boundaries", an_bounds);
    analyze->add_option("--out", an_out, "directory for report.json and CSV tables");

    advreg::SyntheticSpec gen;
    std::string gen_task = "seu";
    std::string gen_out;
    std::string gen_gazetteer;
    auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
    generate->add_option("--task", gen_task);
    generate->add_option("--seed", gen.seed);
    generate->add_option("--questions", gen.questions);
    generate->add_option("--facts", gen.facts_per_passage);
    generate->add_option("--filler", gen.filler_sentences);
    generate->add_option("--rare-fraction", gen.rare_fraction);
    generate->add_option("--unanswerable-fraction", gen.unanswerable_fraction);
    generate->add_option("--label-noise", gen.label_noise);
    generate->add_option("--options", gen.options);
    generate->add_option("--prefix", gen.id_prefix, "question id prefix");
    generate->add_option("--out", gen_out)->required();
    generate->add_option("--gazetteer", gen_gazetteer, "also write the entity gazetteer");

    std::uint64_t gc_seed = 0;
    std::size_t gc_instances = 100;
    double gc_tolerance = 1e-4;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_option("--instances", gc_instances);
    gradcheck->add_option("--tolerance", gc_tolerance);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what());
        return 1;
    }

    try {
        if (*train) {
            std::cout << advreg::cmd_train(load_run_config(run)).dump(1) << "\n";
        } else if (*eval) {
            std::cout << advreg::cmd_eval(eval_ckpt, eval_data, eval_out).dump(1) << "\n";
        } else if (*augment) {
            std::cout << advreg::cmd_augment(aug_data, aug_gazetteer, aug_shuffle, aug_replacement, aug_seed, aug_out).dump(1)
                      << "\n";
        } else if (*analyze) {
            std::cout << advreg::cmd_analyze(an_ckpts, an_baseline, an_data, an_train, an_k, parse_boundaries(an_bounds), an_out)
                             .dump(1)
                      << "\n";
        } else if (*generate) {
            gen.task = advreg::parse_task_kind(gen_task);
            gen.validate();
            std::cout << advreg::cmd_generate(gen, gen_out, gen_gazetteer).dump(1) << "\n";
        } else if (*gradcheck) {
            const auto summary = advreg::cmd_gradcheck(gc_seed, gc_instances, gc_tolerance);
            std::cout << summary.json.dump(1) << "\n";
            if (!summary.passed) {
                print_error("GradcheckFailed", "analytic and numeric gradients disagree");
                return 3;
            }
        }
    } catch (const advreg::Error& e) {
        print_error(std::string(advreg::to_string(e.kind())), e.what());
        return advreg::exit_code(e.kind());
    } catch (const std::exception& e) {
        print_error("DataError", e.what());
        return 2;
    }
    return 0;
}
