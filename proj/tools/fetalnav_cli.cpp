// Command-line front end. Talks to the library through the C API only.
#include "fetalnav/fetalnav.h"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct Globals {
    std::string workspace = ".";
    std::string profile = "desk";
    bool quiet = false;
};

int fail(fn_status st)
{
    std::fprintf(stderr, "error (%s): %s\n", fn_status_name(st), fn_last_error_message());
    return static_cast<int>(st) + 1;
}

void print_json(char* s)
{
    if (s) {
        std::puts(s);
        fn_string_free(s);
    }
}

void on_log(void*, const char* line)
{
    std::fprintf(stderr, "%s\n", line);
}

class Ws {
public:
    explicit Ws(const Globals& g) { st_ = fn_workspace_open(g.workspace.c_str(), g.profile.c_str(), &ws_); }
    ~Ws() { fn_workspace_close(ws_); }
    Ws(const Ws&) = delete;
    Ws& operator=(const Ws&) = delete;
    fn_status status() const { return st_; }
    const fn_workspace* get() const { return ws_; }

private:
    fn_workspace* ws_ = nullptr;
    fn_status st_ = FN_OK;
};

template <class F>
int with_ws(const Globals& g, F&& f)
{
    fn_set_log_callback(g.quiet ? nullptr : on_log, nullptr);
    Ws ws(g);
    if (ws.status() != FN_OK) {
        return fail(ws.status());
    }
    char* out = nullptr;
    const fn_status st = f(ws.get(), &out);
    if (st != FN_OK) {
        return fail(st);
    }
    print_json(out);
    return 0;
}

const char* opt_c(const std::string& s)
{
    return s.empty() ? nullptr : s.c_str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Fetal brain plane navigation: phantoms, training, evaluation, pipeline, service"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("-w,--workspace", g.workspace, "workspace root")->capture_default_str();
    app.add_option("--profile", g.profile, "paper or desk")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    app.add_flag("-q,--quiet", g.quiet, "no progress output");
    int rc = 0;

    // phantom
    auto* phantom = app.add_subcommand("phantom", "synthetic volumes")->require_subcommand(1);
    {
        auto* gen = phantom->add_subcommand("generate", "registered phantom family with TV annotations");
        auto n = std::make_shared<int>(6);
        auto seed = std::make_shared<std::uint64_t>(7);
        auto out = std::make_shared<std::string>();
        gen->add_option("--n", *n, "number of volumes")->capture_default_str();
        gen->add_option("--seed", *seed)->capture_default_str();
        gen->add_option("--out", *out, "output directory")->required();
        gen->callback([&, n, seed, out] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_phantom_generate(ws, *n, *seed, out->c_str(), o);
            });
        });
    }

    // dataset
    auto* dataset = app.add_subcommand("dataset", "derived datasets")->require_subcommand(1);
    {
        auto* sl = dataset->add_subcommand("slice", "pose-paired slices of every volume");
        auto vols = std::make_shared<std::string>();
        auto per = std::make_shared<int>(22029);
        auto seed = std::make_shared<std::uint64_t>(7);
        auto out = std::make_shared<std::string>();
        sl->add_option("--volumes", *vols)->required();
        sl->add_option("--per-volume", *per)->capture_default_str();
        sl->add_option("--seed", *seed)->capture_default_str();
        sl->add_option("--out", *out)->required();
        sl->callback([&, vols, per, seed, out] {
            rc = with_ws(g, [&](const fn_workspace* ws, char**) {
                return fn_dataset_slice(ws, vols->c_str(), *per, *seed, out->c_str());
            });
        });

        auto* lab = dataset->add_subcommand("labeled", "synthetic labeled 2D corpus with splits");
        auto lout = std::make_shared<std::string>();
        lab->add_option("--out", *lout)->required();
        lab->callback([&, lout] {
            rc = with_ws(g, [&](const fn_workspace* ws, char**) { return fn_dataset_labeled(ws, lout->c_str()); });
        });

        auto* folds = dataset->add_subcommand("folds", "leave-one-volume-out folds");
        auto fv = std::make_shared<std::string>();
        auto fo = std::make_shared<std::string>();
        folds->add_option("--volumes", *fv)->required();
        folds->add_option("--out", *fo)->required();
        folds->callback([&, fv, fo] {
            char* o = nullptr;
            const auto st = fn_dataset_folds(fv->c_str(), fo->c_str(), &o);
            rc = st == FN_OK ? (print_json(o), 0) : fail(st);
        });

        auto* audit = dataset->add_subcommand("audit", "which volumes feed each loss term, per fold");
        audit->callback([&] { rc = with_ws(g, [&](const fn_workspace* ws, char** o) { return fn_loocv_audit(ws, o); }); });
    }

    // annotate
    {
        auto* ann = app.add_subcommand("annotate", "store the target plane pose of a volume");
        auto vol = std::make_shared<std::string>();
        auto t = std::make_shared<std::vector<double>>();
        auto r = std::make_shared<std::vector<double>>();
        auto label = std::make_shared<std::string>("TV");
        auto out = std::make_shared<std::string>();
        ann->add_option("--volume", *vol, "volume sidecar (.json)")->required();
        ann->add_option("--t", *t, "translation mm")->expected(3)->required();
        ann->add_option("--r", *r, "rotation vector rad")->expected(3)->required();
        ann->add_option("--label", *label)->capture_default_str();
        ann->add_option("--out", *out)->required();
        ann->callback([&, vol, t, r, label, out] {
            const auto st = fn_annotate(vol->c_str(), t->data(), r->data(), label->c_str(), out->c_str());
            rc = st == FN_OK ? 0 : fail(st);
        });
    }

    // stream
    auto* stream = app.add_subcommand("stream", "synthetic frame streams")->require_subcommand(1);
    {
        auto* syn = stream->add_subcommand("synth", "straight-line probe approach to the annotated plane");
        auto vol = std::make_shared<std::string>();
        auto frames = std::make_shared<int>(101);
        auto fps = std::make_shared<double>(10.0);
        auto out = std::make_shared<std::string>();
        syn->add_option("--volume", *vol, "volume id in the workspace")->required();
        syn->add_option("--frames", *frames)->capture_default_str();
        syn->add_option("--fps", *fps)->capture_default_str();
        syn->add_option("--out", *out)->required();
        syn->callback([&, vol, frames, fps, out] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_stream_synth(ws, vol->c_str(), *frames, *fps, out->c_str(), o);
            });
        });
    }

    // seg
    auto* seg = app.add_subcommand("seg", "segmentation + classification model")->require_subcommand(1);
    {
        auto* tr = seg->add_subcommand("train", "train one stage of a fold");
        auto fold = std::make_shared<int>(0);
        auto stage = std::make_shared<std::string>("s");
        auto resume = std::make_shared<bool>(false);
        tr->add_option("--fold", *fold)->required();
        tr->add_option("--stage", *stage)->check(CLI::IsMember({"s", "ss", "ssclass"}))->required();
        tr->add_flag("--resume", *resume, "continue from the last epoch checkpoint");
        tr->callback([&, fold, stage, resume] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_seg_train(ws, *fold, stage->c_str(), *resume ? 1 : 0, o);
            });
        });

        auto* ev = seg->add_subcommand("eval", "labeled-test and pairwise mIoU of a stage");
        auto efold = std::make_shared<int>(0);
        auto estage = std::make_shared<std::string>("ssclass");
        ev->add_option("--fold", *efold)->required();
        ev->add_option("--stage", *estage)->check(CLI::IsMember({"s", "ss", "ssclass"}))->capture_default_str();
        ev->callback([&, efold, estage] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_seg_eval(ws, *efold, estage->c_str(), o);
            });
        });
    }

    // pose
    auto* pose = app.add_subcommand("pose", "plane pose regressor")->require_subcommand(1);
    {
        auto* tr = pose->add_subcommand("train", "train on one fold");
        auto fold = std::make_shared<int>(0);
        auto masks = std::make_shared<std::string>("pred");
        auto resume = std::make_shared<bool>(false);
        tr->add_option("--fold", *fold)->required();
        tr->add_option("--masks", *masks)->check(CLI::IsMember({"pred", "none"}))->capture_default_str();
        tr->add_flag("--resume", *resume);
        tr->callback([&, fold, masks, resume] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_pose_train(ws, *fold, masks->c_str(), *resume ? 1 : 0, o);
            });
        });

        auto* ev = pose->add_subcommand("eval", "held-out volume errors (CSV + JSON summary)");
        auto efold = std::make_shared<int>(0);
        auto emasks = std::make_shared<std::string>("pred");
        ev->add_option("--fold", *efold)->required();
        ev->add_option("--masks", *emasks)->check(CLI::IsMember({"pred", "none"}))->capture_default_str();
        ev->callback([&, efold, emasks] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_pose_eval(ws, *efold, emasks->c_str(), o);
            });
        });

        auto* pool = pose->add_subcommand("pool", "pool the per-fold evaluations");
        auto pmasks = std::make_shared<std::string>("pred");
        pool->add_option("--masks", *pmasks)->check(CLI::IsMember({"pred", "none"}))->capture_default_str();
        pool->callback([&, pmasks] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) { return fn_pose_pool(ws, pmasks->c_str(), o); });
        });
    }

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "frame stream inference")->require_subcommand(1);
    {
        auto* run = pipeline->add_subcommand("run", "classify, segment, mask, regress, measure");
        auto s = std::make_shared<std::string>();
        auto fold = std::make_shared<int>(0);
        auto ann = std::make_shared<std::string>();
        auto events = std::make_shared<std::string>();
        auto labels = std::make_shared<std::string>();
        auto truth = std::make_shared<std::string>();
        auto masks = std::make_shared<std::string>("pred");
        auto hz = std::make_shared<double>(10.0);
        auto out = std::make_shared<std::string>();
        run->add_option("--stream", *s, "PNG frame directory or video file")->required();
        run->add_option("--fold", *fold)->required();
        run->add_option("--annotation", *ann)->required();
        run->add_option("--events", *events, "freeze/unfreeze JSON sidecar");
        run->add_option("--labels", *labels, "external per-frame labels to overlay");
        run->add_option("--truth", *truth, "true frame poses (poses.jsonl) for oracle distances");
        run->add_option("--masks", *masks)->check(CLI::IsMember({"pred", "none"}))->capture_default_str();
        run->add_option("--hz", *hz)->capture_default_str();
        run->add_option("--out", *out)->required();
        run->callback([&, s, fold, ann, events, labels, truth, masks, hz, out] {
            rc = with_ws(g, [&](const fn_workspace* ws, char** o) {
                return fn_pipeline_run(ws, s->c_str(), *fold, ann->c_str(), opt_c(*events), opt_c(*labels),
                                       opt_c(*truth), masks->c_str(), *hz, out->c_str(), o);
            });
        });
    }

    // serve
    {
        auto* serve = app.add_subcommand("serve", "HTTP + WebSocket service for the navigator");
        auto host = std::make_shared<std::string>("127.0.0.1");
        auto port = std::make_shared<int>(8080);
        auto vols = std::make_shared<std::string>();
        auto models = std::make_shared<std::string>();
        auto stat = std::make_shared<std::string>();
        serve->add_option("--host", *host)->capture_default_str();
        serve->add_option("--port", *port)->capture_default_str();
        serve->add_option("--volumes", *vols)->required();
        serve->add_option("--models", *models)->required();
        serve->add_option("--static", *stat, "UI bundle to serve under /");
        serve->callback([&, host, port, vols, models, stat] {
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, nullptr);
            fn_server* srv = nullptr;
            const auto st = fn_server_start(host->c_str(), *port, vols->c_str(), models->c_str(), opt_c(*stat), &srv);
            if (st != FN_OK) {
                rc = fail(st);
                return;
            }
            std::fprintf(stderr, "listening on %s:%d\n", host->c_str(), fn_server_port(srv));
            int sig = 0;
            sigwait(&set, &sig);
            fn_server_free(srv);
            rc = 0;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return rc;
}
