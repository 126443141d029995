#include "fetalnav/service.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

namespace fetalnav {

namespace {

Vec3 vec_from(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key)) {
        return Vec3::Zero();
    }
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) {
        throw ValidationError(std::string(key) + " must be a 3-vector");
    }
    Vec3 v(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    if (!v.allFinite()) {
        throw ValidationError(std::string(key) + " must be finite");
    }
    return v;
}

nlohmann::json reading_json(const FrameRecord& r)
{
    nlohmann::json j{{"brain_prob", r.brain_prob}, {"brain_present", r.brain_present}, {"failed", r.failed}};
    if (r.pose) {
        j["pose"] = pose_to_json(*r.pose);
    }
    if (r.proximity) {
        j["trans_mm"] = r.proximity->trans_mm;
        j["rot_deg"] = r.proximity->rot_deg;
    } else {
        j["trans_mm"] = nullptr;
        j["rot_deg"] = nullptr;
    }
    if (r.failed) {
        j["error"] = r.error;
    }
    return j;
}

std::string encode_png(const cv::Mat& m)
{
    std::vector<uchar> buf;
    if (!cv::imencode(".png", m, buf)) {
        throw IoError("PNG encoding failed");
    }
    return std::string(buf.begin(), buf.end());
}

nlohmann::json error_json(const std::string& code, const std::string& message)
{
    return {{"v", kMessageVersion}, {"type", "error"}, {"error", {{"code", code}, {"message", message}}}};
}

}  // namespace

std::string base64_encode(const std::string& bytes)
{
    std::string out(beast::detail::base64::encoded_size(bytes.size()), '\0');
    out.resize(beast::detail::base64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

std::string base64_decode(const std::string& text)
{
    std::string out(beast::detail::base64::decoded_size(text.size()), '\0');
    const auto r = beast::detail::base64::decode(out.data(), text.data(), text.size());
    out.resize(r.first);
    return out;
}

nlohmann::json step_json(const StepResult& r, bool with_images)
{
    nlohmann::json j{{"v", kMessageVersion},
                     {"type", "step"},
                     {"seq", r.seq},
                     {"pose", pose_to_json(r.pose)},
                     {"clamped", r.clamped},
                     {"model", reading_json(r.model)},
                     {"oracle", {{"trans_mm", r.oracle.trans_mm}, {"rot_deg", r.oracle.rot_deg}}}};
    if (with_images) {
        j["slice_png_b64"] = base64_encode(r.slice_png);
        if (r.model.mask) {
            Mask m = *r.model.mask * 255;
            j["mask_png_b64"] = base64_encode(encode_png(m));
        }
    }
    return j;
}

nlohmann::json capture_json(const Capture& c, bool with_images)
{
    auto j = step_json(c.state, with_images);
    j["type"] = "capture";
    j["index"] = c.index;
    if (c.score) {
        j["score"] = *c.score;
    }
    if (!c.note.empty()) {
        j["note"] = c.note;
    }
    return j;
}

SessionManager::SessionManager(ServiceConfig cfg) : cfg_(std::move(cfg))
{
    if (!fs::is_directory(cfg_.volumes_dir)) {
        throw NotFoundError("volume directory not found: " + cfg_.volumes_dir);
    }
}

std::vector<std::string> SessionManager::volume_ids() const
{
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(cfg_.volumes_dir)) {
        if (e.path().extension() == ".json" && e.path().filename() != "family.json") {
            ids.push_back(e.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::shared_ptr<const Volume> SessionManager::volume(const std::string& id)
{
    std::lock_guard lock(mu_);
    auto it = volumes_.find(id);
    if (it != volumes_.end()) {
        return it->second;
    }
    const auto path = fs::path(cfg_.volumes_dir) / (id + ".json");
    if (id.empty() || id.find('/') != std::string::npos || !fs::exists(path)) {
        throw NotFoundError("unknown volume '" + id + "'");
    }
    auto v = std::make_shared<const Volume>(load_volume(path.string()));
    if (!v->annotation) {
        throw ValidationError("volume '" + id + "' has no annotation");
    }
    volumes_[id] = v;
    return v;
}

std::shared_ptr<SessionManager::ModelSlot> SessionManager::models(int fold)
{
    std::lock_guard lock(mu_);
    auto it = models_.find(fold);
    if (it != models_.end()) {
        return it->second;
    }
    const auto dir = fs::path(cfg_.models_dir) / ("fold" + std::to_string(fold));
    if (!fs::exists(dir / "seg_ssclass.json") || !fs::exists(dir / "pose_pred.json")) {
        throw NotFoundError("no trained models for fold " + std::to_string(fold));
    }
    auto slot = std::make_shared<ModelSlot>();
    slot->models = load_pipeline_models((dir / "seg_ssclass").string(), (dir / "pose_pred").string());
    std::ifstream in(dir / "seg_ssclass.json");
    const auto meta = nlohmann::json::parse(in);
    if (meta.contains("profile")) {
        cfg_.slice_px = meta["profile"].value("slice_px", cfg_.slice_px);
        cfg_.slice_spacing_mm = meta["profile"].value("slice_spacing_mm", cfg_.slice_spacing_mm);
    }
    models_[fold] = slot;
    return slot;
}

std::string SessionManager::create(const std::string& volume_id, int fold)
{
    auto s = std::make_shared<Session>();
    s->volume = volume(volume_id);
    s->models = models(fold);
    s->volume_id = volume_id;
    s->fold = fold;
    std::lock_guard lock(mu_);
    s->id = "s" + std::to_string(next_id_++);
    sessions_[s->id] = s;
    return s->id;
}

void SessionManager::remove(const std::string& id)
{
    std::lock_guard lock(mu_);
    if (sessions_.erase(id) == 0) {
        throw NotFoundError("unknown session '" + id + "'");
    }
}

nlohmann::json SessionManager::list() const
{
    std::vector<std::shared_ptr<Session>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, s] : sessions_) {
            all.push_back(s);
        }
    }
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : all) {
        std::lock_guard lock(s->mu);
        arr.push_back({{"session_id", s->id},
                       {"volume_id", s->volume_id},
                       {"fold", s->fold},
                       {"steps", s->history.size()},
                       {"captures", s->captures.size()},
                       {"pose", pose_to_json(s->probe)}});
    }
    return {{"v", kMessageVersion}, {"sessions", arr}};
}

std::shared_ptr<SessionManager::Session> SessionManager::get(const std::string& id) const
{
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) {
        throw NotFoundError("unknown session '" + id + "'");
    }
    return it->second;
}

StepResult SessionManager::render(Session& s)
{
    StepResult r;
    r.seq = s.seq;
    r.pose = s.probe;
    r.slice = quantize8(extract_slice(*s.volume, s.probe, cfg_.slice_px, cfg_.slice_px, cfg_.slice_spacing_mm).image);
    cv::Mat u8;
    r.slice.convertTo(u8, CV_8U, 255.0);
    r.slice_png = encode_png(u8);
    {
        std::lock_guard lock(s.models->mu);
        r.model = process_frame(s.models->models, r.slice, 0.0, *s.volume->annotation, static_cast<int>(s.seq));
    }
    r.model.image.release();
    r.oracle = proximity(s.probe, *s.volume->annotation);
    return r;
}

StepResult SessionManager::current(const std::string& id)
{
    auto s = get(id);
    std::lock_guard lock(s->mu);
    return render(*s);
}

StepResult SessionManager::step(const std::string& id, const Vec3& dt_mm, const Vec3& dr_rad)
{
    if (!dt_mm.allFinite() || !dr_rad.allFinite()) {
        throw ValidationError("step deltas must be finite");
    }
    if (dt_mm.norm() > kMaxStepMm + 1e-9) {
        throw ValidationError("translation step exceeds 10 mm");
    }
    if (dr_rad.norm() > kMaxStepRad + 1e-9) {
        throw ValidationError("rotation step exceeds 0.2 rad");
    }
    auto s = get(id);
    std::lock_guard lock(s->mu);
    Pose6D delta;
    delta.t = dt_mm;
    delta.r = dr_rad;
    Pose6D next = s->probe.compose(delta);
    const Vec3 lim = s->volume->half_extent_mm();
    const Vec3 clamped = next.t.cwiseMax(-lim).cwiseMin(lim);
    const bool was_clamped = clamped != next.t;
    next.t = clamped;
    s->probe = validated(next);
    ++s->seq;
    StepResult r = render(*s);
    r.clamped = was_clamped;
    s->history.push_back(r);
    return r;
}

Capture SessionManager::freeze(const std::string& id, std::optional<double> score, const std::string& note)
{
    auto s = get(id);
    std::lock_guard lock(s->mu);
    Capture c;
    c.index = s->captures.size();
    c.state = s->history.empty() ? render(*s) : s->history.back();
    c.score = score;
    c.note = note;
    s->captures.push_back(c);
    return c;
}

std::string SessionManager::export_jsonl(const std::string& id)
{
    auto s = get(id);
    std::lock_guard lock(s->mu);
    std::ostringstream out;
    out << nlohmann::json{{"v", kMessageVersion},
                          {"type", "session"},
                          {"session_id", s->id},
                          {"volume_id", s->volume_id},
                          {"fold", s->fold},
                          {"annotation", to_json(*s->volume->annotation)}}
               .dump()
        << '\n';
    for (const auto& h : s->history) {
        auto j = step_json(h, false);
        j["type"] = "history";
        out << j.dump() << '\n';
    }
    for (const auto& c : s->captures) {
        out << capture_json(c, true).dump() << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
    SessionManager& mgr;
    std::string static_dir;
    asio::io_context ioc{1};
    std::unique_ptr<tcp::acceptor> acceptor;
    std::thread accept_thread;
    std::mutex mu;
    std::condition_variable cv;
    bool stopped = false;
    std::list<std::shared_ptr<tcp::socket>> sockets;
    std::list<std::thread> workers;

    Impl(SessionManager& m, std::string s) : mgr(m), static_dir(std::move(s)) {}

    using Response = http::response<http::string_body>;

    Response json_response(const http::request<http::string_body>& req, http::status st, const std::string& body,
                           const char* type = "application/json")
    {
        Response res{st, req.version()};
        res.set(http::field::content_type, type);
        res.set(http::field::access_control_allow_origin, "*");
        res.set(http::field::access_control_allow_headers, "Content-Type");
        res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
        res.keep_alive(req.keep_alive());
        res.body() = body;
        res.prepare_payload();
        return res;
    }

    Response serve_static(const http::request<http::string_body>& req, std::string path)
    {
        if (static_dir.empty() || path.find("..") != std::string::npos) {
            return json_response(req, http::status::not_found, error_json("not_found", "no such endpoint").dump());
        }
        if (path == "/") {
            path = "/index.html";
        }
        const fs::path file = fs::path(static_dir) / path.substr(1);
        std::ifstream in(file, std::ios::binary);
        if (!in) {
            return json_response(req, http::status::not_found, error_json("not_found", "no such file").dump());
        }
        std::stringstream ss;
        ss << in.rdbuf();
        const auto ext = file.extension().string();
        const char* type = ext == ".html" ? "text/html"
                           : ext == ".js" ? "application/javascript"
                           : ext == ".css" ? "text/css"
                                           : "application/octet-stream";
        return json_response(req, http::status::ok, ss.str(), type);
    }

    Response route(const http::request<http::string_body>& req)
    {
        const std::string target(req.target());
        const std::string path = target.substr(0, target.find('?'));
        std::vector<std::string> parts;
        std::stringstream ss(path);
        for (std::string p; std::getline(ss, p, '/');) {
            if (!p.empty()) {
                parts.push_back(p);
            }
        }
        const auto method = req.method();
        const auto ok = [&](const nlohmann::json& j) { return json_response(req, http::status::ok, j.dump()); };
        const auto body = [&]() {
            if (req.body().empty()) {
                return nlohmann::json::object();
            }
            auto j = nlohmann::json::parse(req.body());
            if (j.contains("v") && j["v"] != kMessageVersion) {
                throw ValidationError("unsupported message version");
            }
            return j;
        };
        if (method == http::verb::options) {
            return json_response(req, http::status::no_content, "");
        }
        if (parts.empty() || parts[0] != "v1") {
            return serve_static(req, path);
        }
        if (parts.size() == 2 && parts[1] == "health" && method == http::verb::get) {
            return ok({{"v", kMessageVersion}, {"status", "ok"}});
        }
        if (parts.size() == 2 && parts[1] == "volumes" && method == http::verb::get) {
            return ok({{"v", kMessageVersion}, {"volumes", mgr.volume_ids()}});
        }
        if (parts.size() >= 2 && parts[1] == "sessions") {
            if (parts.size() == 2 && method == http::verb::get) {
                return ok(mgr.list());
            }
            if (parts.size() == 2 && method == http::verb::post) {
                const auto j = body();
                const auto id = mgr.create(j.at("volume_id").get<std::string>(), j.value("fold", 0));
                auto state = step_json(mgr.current(id));
                state["type"] = "session";
                state["session_id"] = id;
                return json_response(req, http::status::created, state.dump());
            }
            if (parts.size() == 3 && method == http::verb::delete_) {
                mgr.remove(parts[2]);
                return ok({{"v", kMessageVersion}, {"deleted", parts[2]}});
            }
            if (parts.size() == 3 && method == http::verb::get) {
                auto state = step_json(mgr.current(parts[2]));
                state["session_id"] = parts[2];
                return ok(state);
            }
            if (parts.size() == 4 && parts[3] == "step" && method == http::verb::post) {
                const auto j = body();
                return ok(step_json(mgr.step(parts[2], vec_from(j, "dt_mm"), vec_from(j, "dr_rad"))));
            }
            if (parts.size() == 4 && parts[3] == "freeze" && method == http::verb::post) {
                const auto j = body();
                std::optional<double> score;
                if (j.contains("score") && !j["score"].is_null()) {
                    score = j["score"].get<double>();
                }
                return ok(capture_json(mgr.freeze(parts[2], score, j.value("note", std::string()))));
            }
            if (parts.size() == 4 && parts[3] == "export" && method == http::verb::get) {
                return json_response(req, http::status::ok, mgr.export_jsonl(parts[2]), "application/x-ndjson");
            }
        }
        return json_response(req, http::status::not_found, error_json("not_found", "no such endpoint").dump());
    }

    Response handle(const http::request<http::string_body>& req)
    {
        try {
            return route(req);
        } catch (const NotFoundError& e) {
            return json_response(req, http::status::not_found, error_json("not_found", e.what()).dump());
        } catch (const ValidationError& e) {
            return json_response(req, http::status::bad_request, error_json("invalid", e.what()).dump());
        } catch (const nlohmann::json::exception& e) {
            return json_response(req, http::status::bad_request, error_json("invalid", e.what()).dump());
        } catch (const std::exception& e) {
            return json_response(req, http::status::internal_server_error, error_json("internal", e.what()).dump());
        }
    }

    nlohmann::json ws_message(const std::string& session_id, const std::string& text)
    {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
            if (j.value("v", kMessageVersion) != kMessageVersion) {
                throw ValidationError("unsupported message version");
            }
            const auto type = j.value("type", std::string("step"));
            nlohmann::json out;
            if (type == "step") {
                out = step_json(mgr.step(session_id, vec_from(j, "dt_mm"), vec_from(j, "dr_rad")));
            } else if (type == "freeze") {
                std::optional<double> score;
                if (j.contains("score") && !j["score"].is_null()) {
                    score = j["score"].get<double>();
                }
                out = capture_json(mgr.freeze(session_id, score, j.value("note", std::string())));
            } else if (type == "state") {
                out = step_json(mgr.current(session_id));
            } else {
                throw ValidationError("unknown message type '" + type + "'");
            }
            if (j.contains("client_seq")) {
                out["client_seq"] = j["client_seq"];
            }
            return out;
        } catch (const NotFoundError& e) {
            return error_json("not_found", e.what());
        } catch (const std::exception& e) {
            auto err = error_json("invalid", e.what());
            if (j.is_object() && j.contains("client_seq")) {
                err["client_seq"] = j["client_seq"];
            }
            return err;
        }
    }

    void run_ws(std::shared_ptr<tcp::socket> sock, http::request<http::string_body> req)
    {
        const std::string target(req.target());
        std::vector<std::string> parts;
        std::stringstream ss(target.substr(0, target.find('?')));
        for (std::string p; std::getline(ss, p, '/');) {
            if (!p.empty()) {
                parts.push_back(p);
            }
        }
        websocket::stream<tcp::socket&> ws(*sock);
        beast::error_code ec;
        ws.accept(req, ec);
        if (ec) {
            return;
        }
        ws.text(true);
        if (parts.size() != 4 || parts[0] != "v1" || parts[1] != "sessions" || parts[3] != "ws") {
            ws.write(asio::buffer(error_json("not_found", "no such socket endpoint").dump()), ec);
            ws.close(websocket::close_code::normal, ec);
            return;
        }
        const std::string id = parts[2];
        for (;;) {
            beast::flat_buffer buf;
            ws.read(buf, ec);
            if (ec) {
                return;
            }
            const auto reply = ws_message(id, beast::buffers_to_string(buf.data())).dump();
            ws.write(asio::buffer(reply), ec);
            if (ec) {
                return;
            }
        }
    }

    void serve(std::shared_ptr<tcp::socket> sock)
    {
        beast::flat_buffer buf;
        beast::error_code ec;
        for (;;) {
            http::request<http::string_body> req;
            http::read(*sock, buf, req, ec);
            if (ec) {
                break;
            }
            if (websocket::is_upgrade(req)) {
                run_ws(sock, std::move(req));
                break;
            }
            auto res = handle(req);
            http::write(*sock, res, ec);
            if (ec || !res.keep_alive()) {
                break;
            }
        }
        sock->shutdown(tcp::socket::shutdown_both, ec);
        std::lock_guard lock(mu);
        sockets.remove(sock);
    }

    void accept_loop()
    {
        for (;;) {
            auto sock = std::make_shared<tcp::socket>(ioc);
            beast::error_code ec;
            acceptor->accept(*sock, ec);
            std::lock_guard lock(mu);
            if (stopped) {
                return;
            }
            if (ec) {
                continue;
            }
            sockets.push_back(sock);
            workers.emplace_back([this, sock] { serve(sock); });
        }
    }
};

HttpServer::HttpServer(SessionManager& manager, std::string static_dir)
    : impl_(std::make_unique<Impl>(manager, std::move(static_dir)))
{
}

HttpServer::~HttpServer()
{
    stop();
}

int HttpServer::start(const std::string& host, int port)
{
    const auto addr = asio::ip::make_address(host);
    impl_->acceptor = std::make_unique<tcp::acceptor>(impl_->ioc);
    const tcp::endpoint ep(addr, static_cast<unsigned short>(port));
    impl_->acceptor->open(ep.protocol());
    impl_->acceptor->set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor->bind(ep);
    impl_->acceptor->listen();
    port_ = impl_->acceptor->local_endpoint().port();
    impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
    return port_;
}

void HttpServer::stop()
{
    if (!impl_ || !impl_->acceptor) {
        return;
    }
    {
        std::lock_guard lock(impl_->mu);
        if (impl_->stopped) {
            return;
        }
        impl_->stopped = true;
        beast::error_code ec;
        for (auto& s : impl_->sockets) {
            s->shutdown(tcp::socket::shutdown_both, ec);
        }
    }
    // A blocking accept only returns on a connection, so poke it.
    {
        asio::io_context tmp;
        tcp::socket poke(tmp);
        beast::error_code ec;
        poke.connect({impl_->acceptor->local_endpoint().address(), static_cast<unsigned short>(port_)}, ec);
    }
    if (impl_->accept_thread.joinable()) {
        impl_->accept_thread.join();
    }
    beast::error_code ec;
    impl_->acceptor->close(ec);
    std::list<std::thread> workers;
    {
        std::lock_guard lock(impl_->mu);
        workers.swap(impl_->workers);
    }
    for (auto& w : workers) {
        if (w.joinable()) {
            w.join();
        }
    }
    impl_->cv.notify_all();
}

void HttpServer::wait()
{
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait(lock, [this] { return impl_->stopped; });
}

}  // namespace fetalnav
