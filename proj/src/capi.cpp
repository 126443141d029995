#include "fetalnav/fetalnav.h"

#include "fetalnav/errors.hpp"
#include "fetalnav/service.hpp"
#include "fetalnav/workspace.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

using namespace fetalnav;

struct fn_workspace {
    Workspace ws;
};

struct fn_server {
    std::unique_ptr<SessionManager> manager;
    std::unique_ptr<HttpServer> http;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mu;
fn_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_line(const std::string& line)
{
    std::lock_guard lock(g_log_mu);
    if (g_log_fn) {
        g_log_fn(g_log_user, line.c_str());
    }
}

char* dup(const std::string& s)
{
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) {
        std::memcpy(out, s.c_str(), s.size() + 1);
    }
    return out;
}

void put(char** out, const nlohmann::json& j)
{
    if (out) {
        *out = dup(j.dump(2));
    }
}

std::string str(const char* s)
{
    return s ? std::string(s) : std::string();
}

template <class F>
fn_status guard(F&& f)
{
    try {
        g_last_error.clear();
        f();
        return FN_OK;
    } catch (const DegenerateRepresentationError& e) {
        g_last_error = e.what();
        return FN_ERR_DEGENERATE;
    } catch (const ValidationError& e) {
        g_last_error = e.what();
        return FN_ERR_INVALID_ARGUMENT;
    } catch (const NotFoundError& e) {
        g_last_error = e.what();
        return FN_ERR_NOT_FOUND;
    } catch (const IoError& e) {
        g_last_error = e.what();
        return FN_ERR_IO;
    } catch (const NumericError& e) {
        g_last_error = std::string(e.what()) + (e.snapshot_path().empty() ? "" : " (snapshot " + e.snapshot_path() + ")");
        return FN_ERR_NUMERIC;
    } catch (const nlohmann::json::exception& e) {
        g_last_error = e.what();
        return FN_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return FN_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return FN_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what)
{
    if (!p) {
        throw ValidationError(std::string(what) + " must not be NULL");
    }
}

Vec3 v3(const double* p)
{
    need(p, "vector");
    return Vec3(p[0], p[1], p[2]);
}

}  // namespace

extern "C" {

int fn_api_version(void)
{
    return FN_API_VERSION;
}

const char* fn_status_name(fn_status s)
{
    switch (s) {
    case FN_OK:
        return "ok";
    case FN_ERR_INVALID_ARGUMENT:
        return "invalid argument";
    case FN_ERR_NOT_FOUND:
        return "not found";
    case FN_ERR_IO:
        return "i/o error";
    case FN_ERR_NUMERIC:
        return "numeric error";
    case FN_ERR_DEGENERATE:
        return "degenerate representation";
    case FN_ERR_INTERNAL:
        return "internal error";
    }
    return "unknown";
}

const char* fn_last_error_message(void)
{
    return g_last_error.c_str();
}

void fn_string_free(char* s)
{
    std::free(s);
}

void fn_set_log_callback(fn_log_fn fn, void* user)
{
    std::lock_guard lock(g_log_mu);
    g_log_fn = fn;
    g_log_user = user;
}

fn_status fn_workspace_open(const char* root, const char* profile, fn_workspace** out)
{
    return guard([&] {
        need(root, "root");
        need(out, "out");
        *out = new fn_workspace{open_workspace(root, profile ? profile : "desk")};
    });
}

void fn_workspace_close(fn_workspace* ws)
{
    delete ws;
}

fn_status fn_workspace_profile(const fn_workspace* ws, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        put(out_json, to_json(ws->ws.profile));
    });
}

fn_status fn_phantom_generate(const fn_workspace* ws, int n, uint64_t seed, const char* out_dir, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        const std::string dir = out_dir ? out_dir : ws->ws.volumes_dir();
        const auto ids = phantom_generate(ws->ws.profile, n, seed, dir);
        put(out_json, {{"v", 1}, {"volumes", ids}, {"out", dir}});
    });
}

fn_status fn_dataset_slice(const fn_workspace* ws, const char* volumes_dir, int per_volume, uint64_t seed,
                           const char* out_dir)
{
    return guard([&] {
        need(ws, "workspace");
        dataset_slice(ws->ws.profile, volumes_dir ? volumes_dir : ws->ws.volumes_dir(), per_volume, seed,
                      out_dir ? out_dir : ws->ws.slices_dir());
    });
}

fn_status fn_dataset_labeled(const fn_workspace* ws, const char* out_dir)
{
    return guard([&] {
        need(ws, "workspace");
        dataset_labeled(ws->ws.profile, out_dir ? out_dir : ws->ws.labeled_dir());
    });
}

fn_status fn_dataset_folds(const char* volumes_dir, const char* out_path, char** out_json)
{
    return guard([&] {
        need(volumes_dir, "volumes_dir");
        need(out_path, "out_path");
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& f : dataset_folds(volumes_dir, out_path)) {
            arr.push_back({{"fold", f.fold_id}, {"held_out", f.held_out}, {"train", f.train}, {"val", f.val}});
        }
        put(out_json, {{"v", 1}, {"folds", arr}});
    });
}

fn_status fn_loocv_audit(const fn_workspace* ws, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        put(out_json, {{"v", 1}, {"folds", loocv_audit(ws->ws)}});
    });
}

fn_status fn_seg_train(const fn_workspace* ws, int fold, const char* stage, int resume, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        need(stage, "stage");
        put(out_json, seg_train(ws->ws, fold, stage, resume != 0, log_line));
    });
}

fn_status fn_seg_eval(const fn_workspace* ws, int fold, const char* stage, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        need(stage, "stage");
        put(out_json, seg_eval(ws->ws, fold, stage));
    });
}

fn_status fn_pose_train(const fn_workspace* ws, int fold, const char* masks, int resume, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        put(out_json, pose_train(ws->ws, fold, mask_mode_from_string(masks ? masks : "pred"), resume != 0, log_line));
    });
}

fn_status fn_pose_eval(const fn_workspace* ws, int fold, const char* masks, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        put(out_json, pose_eval(ws->ws, fold, mask_mode_from_string(masks ? masks : "pred")));
    });
}

fn_status fn_pose_pool(const fn_workspace* ws, const char* masks, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        put(out_json, pose_pool(ws->ws, mask_mode_from_string(masks ? masks : "pred")));
    });
}

fn_status fn_stream_synth(const fn_workspace* ws, const char* volume_id, int frames, double fps, const char* out_dir,
                          char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        need(volume_id, "volume_id");
        need(out_dir, "out_dir");
        put(out_json, stream_synth(ws->ws, volume_id, frames, fps, out_dir));
    });
}

fn_status fn_pipeline_run(const fn_workspace* ws, const char* stream, int fold, const char* annotation,
                          const char* events, const char* labels, const char* truth, const char* masks, double hz,
                          const char* out_dir, char** out_json)
{
    return guard([&] {
        need(ws, "workspace");
        need(stream, "stream");
        need(annotation, "annotation");
        need(out_dir, "out_dir");
        PipelineRunOptions opt;
        opt.stream = stream;
        opt.fold = fold;
        opt.annotation = annotation;
        opt.events = str(events);
        opt.labels = str(labels);
        opt.truth = str(truth);
        opt.masks = mask_mode_from_string(masks ? masks : "pred");
        opt.hz = hz;
        opt.out_dir = out_dir;
        put(out_json, pipeline_run(ws->ws, opt));
    });
}

fn_status fn_annotate(const char* volume_path, const double* t_mm, const double* r_rad, const char* label,
                      const char* out_path)
{
    return guard([&] {
        need(volume_path, "volume_path");
        need(out_path, "out_path");
        Pose6D p;
        p.t = v3(t_mm);
        p.r = v3(r_rad);
        annotate(volume_path, p, label ? label : "TV", out_path);
    });
}

fn_status fn_proximity(const double* pred_t, const double* pred_r, const double* sp_t, const double* sp_r,
                       double* out_trans_mm, double* out_rot_deg)
{
    return guard([&] {
        need(out_trans_mm, "out_trans_mm");
        need(out_rot_deg, "out_rot_deg");
        Pose6D a, b;
        a.t = v3(pred_t);
        a.r = v3(pred_r);
        b.t = v3(sp_t);
        b.r = v3(sp_r);
        const auto px = proximity(validated(a), validated(b));
        *out_trans_mm = px.trans_mm;
        *out_rot_deg = px.rot_deg;
    });
}

fn_status fn_server_start(const char* host, int port, const char* volumes_dir, const char* models_dir,
                          const char* static_dir, fn_server** out)
{
    return guard([&] {
        need(host, "host");
        need(volumes_dir, "volumes_dir");
        need(models_dir, "models_dir");
        need(out, "out");
        auto s = std::make_unique<fn_server>();
        ServiceConfig cfg;
        cfg.volumes_dir = volumes_dir;
        cfg.models_dir = models_dir;
        cfg.static_dir = str(static_dir);
        s->manager = std::make_unique<SessionManager>(cfg);
        s->http = std::make_unique<HttpServer>(*s->manager, cfg.static_dir);
        s->http->start(host, port);
        *out = s.release();
    });
}

int fn_server_port(const fn_server* s)
{
    return s && s->http ? s->http->port() : 0;
}

fn_status fn_server_wait(fn_server* s)
{
    return guard([&] {
        need(s, "server");
        s->http->wait();
    });
}

void fn_server_stop(fn_server* s)
{
    if (s && s->http) {
        s->http->stop();
    }
}

void fn_server_free(fn_server* s)
{
    if (s) {
        fn_server_stop(s);
        delete s;
    }
}

}  // extern "C"
