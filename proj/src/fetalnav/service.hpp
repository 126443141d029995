#pragma once

#include "fetalnav/pipeline.hpp"

#include <atomic>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fetalnav {

constexpr int kMessageVersion = 1;
constexpr double kMaxStepMm = 10.0;
constexpr double kMaxStepRad = 0.2;

struct ServiceConfig {
    std::string volumes_dir;
    std::string models_dir;  ///< fold<K>/seg_ssclass.* and fold<K>/pose_pred.*
    int slice_px = 96;       ///< overridden by the profile stored with the models
    double slice_spacing_mm = 1.0;
    std::string static_dir;  ///< optional UI bundle served under /
};

struct StepResult {
    std::uint64_t seq = 0;
    Pose6D pose;
    bool clamped = false;
    Image slice;              ///< 8-bit quantized, exactly what the PNG carries
    std::string slice_png;    ///< encoded bytes
    FrameRecord model;        ///< pipeline output on `slice`
    Proximity oracle;
};

struct Capture {
    std::size_t index = 0;
    StepResult state;
    std::optional<double> score;
    std::string note;
};

/// Base64 PNG plus readings, as sent to clients.
nlohmann::json step_json(const StepResult& r, bool with_images = true);
nlohmann::json capture_json(const Capture& c, bool with_images = true);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

class SessionManager {
public:
    explicit SessionManager(ServiceConfig cfg);

    std::vector<std::string> volume_ids() const;

    /// Probe at identity. Returns the session id.
    std::string create(const std::string& volume_id, int fold);
    void remove(const std::string& id);
    nlohmann::json list() const;

    /// Current state without touching the history.
    StepResult current(const std::string& id);
    /// Composes the probe pose with a probe-local delta and appends to the history.
    StepResult step(const std::string& id, const Vec3& dt_mm, const Vec3& dr_rad);
    Capture freeze(const std::string& id, std::optional<double> score, const std::string& note);
    /// One JSON object per line: session header, history steps, captures.
    std::string export_jsonl(const std::string& id);

private:
    struct ModelSlot {
        std::mutex mu;
        PipelineModels models;
    };
    struct Session {
        std::mutex mu;
        std::string id;
        std::string volume_id;
        int fold = 0;
        std::shared_ptr<const Volume> volume;
        std::shared_ptr<ModelSlot> models;
        Pose6D probe;
        std::uint64_t seq = 0;
        std::vector<StepResult> history;
        std::vector<Capture> captures;
    };

    std::shared_ptr<Session> get(const std::string& id) const;
    std::shared_ptr<const Volume> volume(const std::string& id);
    std::shared_ptr<ModelSlot> models(int fold);
    StepResult render(Session& s);

    ServiceConfig cfg_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<const Volume>> volumes_;
    std::map<int, std::shared_ptr<ModelSlot>> models_;
    std::uint64_t next_id_ = 1;
};

/// HTTP + WebSocket front end. One thread per connection.
class HttpServer {
public:
    HttpServer(SessionManager& manager, std::string static_dir = "");
    ~HttpServer();

    /// Binds and starts accepting; port 0 picks a free port. Returns the bound port.
    int start(const std::string& host, int port);
    void stop();
    /// Blocks until stop() is called from another thread.
    void wait();
    int port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

}  // namespace fetalnav
