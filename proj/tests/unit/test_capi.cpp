#include <fetalnav/fetalnav.h>

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <thread>

namespace fs = std::filesystem;

namespace {

std::string take(char* s)
{
    std::string out = s ? s : "";
    fn_string_free(s);
    return out;
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("fetalnav_capi_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("version and status names")
{
    CHECK(fn_api_version() == FN_API_VERSION);
    CHECK(std::string(fn_status_name(FN_OK)) == "ok");
    CHECK(std::string(fn_status_name(FN_ERR_NOT_FOUND)) == "not found");
    CHECK(fn_last_error_message() != nullptr);
}

TEST_CASE("proximity through the C boundary")
{
    const double zero[3] = {0, 0, 0};
    const double t[3] = {3, 4, 0};
    const double quarter[3] = {M_PI / 2, 0, 0};
    double trans = -1, rot = -1;
    REQUIRE(fn_proximity(t, zero, zero, zero, &trans, &rot) == FN_OK);
    CHECK(trans == doctest::Approx(5.0));
    CHECK(rot == doctest::Approx(0.0));
    REQUIRE(fn_proximity(zero, quarter, zero, zero, &trans, &rot) == FN_OK);
    CHECK(rot == doctest::Approx(90.0));
    CHECK(fn_proximity(nullptr, zero, zero, zero, &trans, &rot) == FN_ERR_INVALID_ARGUMENT);
    const double bad[3] = {NAN, 0, 0};
    CHECK(fn_proximity(bad, zero, zero, zero, &trans, &rot) == FN_ERR_INVALID_ARGUMENT);
    CHECK(std::string(fn_last_error_message()).size() > 0);
}

TEST_CASE("workspace and data commands")
{
    TempDir dir;
    fn_workspace* ws = nullptr;
    CHECK(fn_workspace_open(dir.path.c_str(), "galaxy", &ws) == FN_ERR_INVALID_ARGUMENT);
    REQUIRE(fn_workspace_open(dir.path.c_str(), "desk", &ws) == FN_OK);
    char* profile = nullptr;
    REQUIRE(fn_workspace_profile(ws, &profile) == FN_OK);
    CHECK(take(profile).find("\"desk\"") != std::string::npos);

    const auto vols = (dir.path / "volumes").string();
    char* out = nullptr;
    REQUIRE(fn_phantom_generate(ws, 6, 7, vols.c_str(), &out) == FN_OK);
    take(out);
    CHECK(fs::exists(dir.path / "volumes" / "vol5.json"));

    const auto folds = (dir.path / "folds.json").string();
    REQUIRE(fn_dataset_folds(vols.c_str(), folds.c_str(), &out) == FN_OK);
    CHECK(take(out).find("vol5") != std::string::npos);
    CHECK(fs::exists(folds));

    const double t[3] = {1, 2, 3};
    const double r[3] = {0, 0, 0.1};
    const auto vol0 = (dir.path / "volumes" / "vol0.json").string();
    const auto ann = (dir.path / "ann.json").string();
    CHECK(fn_annotate(vol0.c_str(), t, r, "TV", ann.c_str()) == FN_OK);
    CHECK(fs::exists(ann));
    CHECK(fn_annotate((dir.path / "none.json").c_str(), t, r, "TV", ann.c_str()) == FN_ERR_NOT_FOUND);

    CHECK(fn_seg_eval(ws, 0, "ss", &out) == FN_ERR_NOT_FOUND);
    CHECK(fn_seg_train(ws, 0, "zz", 0, &out) == FN_ERR_INVALID_ARGUMENT);
    CHECK(fn_pose_train(ws, 0, "gt", 0, &out) == FN_ERR_INVALID_ARGUMENT);
    fn_workspace_close(ws);
}

TEST_CASE("server lifecycle")
{
    TempDir dir;
    fn_server* s = nullptr;
    CHECK(fn_server_start("127.0.0.1", 0, "/nonexistent", dir.path.c_str(), nullptr, &s) == FN_ERR_NOT_FOUND);
    fs::create_directories(dir.path / "volumes");
    REQUIRE(fn_server_start("127.0.0.1", 0, (dir.path / "volumes").c_str(), dir.path.c_str(), nullptr, &s) == FN_OK);
    CHECK(fn_server_port(s) > 0);
    std::thread waiter([&] { CHECK(fn_server_wait(s) == FN_OK); });
    fn_server_stop(s);
    waiter.join();
    fn_server_free(s);
}
