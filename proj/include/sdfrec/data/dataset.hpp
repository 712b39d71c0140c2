#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "sdfrec/data/analytic.hpp"
#include "sdfrec/data/image.hpp"
#include "sdfrec/render/camera.hpp"

namespace sdfrec {

struct Frame {
    PinholeCamera cam;
    Image rgb;   // float, from the PFM (training source); PNG is for viewing
    Image mask;  // 1 channel, {0,1}
    std::string split = "train";
};

struct SceneDataset {
    std::vector<Frame> frames;
    std::vector<LidarSweep> sweeps;
    std::vector<std::string> sweep_split;
    OrientedBox cuboid;
    SE3 canonical_frame;
    std::string scene_name;  // analytic scene id when synthetic, else empty

    std::vector<int> frame_indices(const std::string& split) const {
        std::vector<int> out;
        for (int i = 0; i < (int)frames.size(); ++i)
            if (frames[i].split == split) out.push_back(i);
        return out;
    }
    std::vector<int> sweep_indices(const std::string& split) const {
        std::vector<int> out;
        for (int i = 0; i < (int)sweeps.size(); ++i)
            if (sweep_split[i] == split) out.push_back(i);
        return out;
    }
};

// ---- orbit generation ------------------------------------------------------------

struct OrbitConfig {
    int train_views = 24;
    int test_views = 6;
    double radius = 2.0;
    double elevation_deg = 18.0;
    double span_deg = 120.0;       // train arc
    double test_span_deg = 120.0;  // test arc; widen to extrapolate
    int image_size = 64;
    int lidar_nu = 48, lidar_nv = 32;
    uint64_t seed = 1;
};

namespace detail_data {

inline PinholeCamera orbit_camera(const AnalyticScene& scene, double azimuth_deg,
                                  double elevation_deg, double radius, int image_size) {
    double az = azimuth_deg * M_PI / 180.0, el = elevation_deg * M_PI / 180.0;
    Vec3 offset{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    PinholeCamera cam;
    cam.width = cam.height = image_size;
    cam.fx = cam.fy = 1.2 * image_size;
    cam.cx = cam.cy = image_size / 2.0;
    cam.pose = look_at(scene.cuboid.center + offset * radius, scene.cuboid.center);
    return cam;
}

inline std::vector<double> arc_azimuths(int n, double span_deg) {
    std::vector<double> az(n);
    if (n == 1) {
        az[0] = 0.0;
    } else if (std::fabs(span_deg - 360.0) < 1e-9) {
        for (int i = 0; i < n; ++i) az[i] = i * 360.0 / n;
    } else {
        for (int i = 0; i < n; ++i) az[i] = -span_deg / 2 + span_deg * i / (n - 1);
    }
    return az;
}

}  // namespace detail_data

// Cameras on a partial arc aimed at the cuboid center, with a paired LiDAR
// sweep from each pose. Test views interleave at half-step offsets over
// their own (possibly wider) arc.
inline SceneDataset make_orbit_dataset(const AnalyticScene& scene, const OrbitConfig& cfg) {
    if (cfg.train_views < 1) throw PreconditionError("need at least one view");
    SceneDataset ds;
    ds.cuboid = scene.cuboid;
    ds.canonical_frame = scene.canonical_frame;
    ds.scene_name = scene.name;

    double dist_to_center = cfg.radius;
    double cone = std::atan(norm(scene.cuboid.half_extents) / dist_to_center) * 1.15;
    auto pattern = lidar_grid_pattern(cfg.lidar_nu, cfg.lidar_nv, cone);

    auto add_view = [&](double az, const std::string& split) {
        PinholeCamera cam =
            detail_data::orbit_camera(scene, az, cfg.elevation_deg, cfg.radius, cfg.image_size);
        CameraCapture cap = capture_camera(scene, cam);
        Frame fr;
        fr.cam = cam;
        fr.rgb = std::move(cap.rgb);
        fr.mask = std::move(cap.mask);
        fr.split = split;
        ds.frames.push_back(std::move(fr));
        LidarSweep sweep = capture_lidar(scene, cam.pose, pattern);
        ds.sweeps.push_back(std::move(sweep));
        ds.sweep_split.push_back(split);
    };

    for (double az : detail_data::arc_azimuths(cfg.train_views, cfg.span_deg))
        add_view(az, "train");
    if (cfg.test_views > 0) {
        auto test_az = detail_data::arc_azimuths(cfg.test_views, cfg.test_span_deg);
        double half_step = cfg.test_views > 1 ? cfg.test_span_deg / (2.0 * cfg.test_views) : 7.0;
        for (double az : test_az) add_view(az + half_step, "test");
    }
    return ds;
}

// ---- directory layout -------------------------------------------------------------
// manifest.json, frames/XXXX.png + XXXX_mask.png + XXXX.pfm, lidar/XXXX.bin
// (little-endian float32 records: dir xyz, depth, intensity)

namespace detail_data {

constexpr int kDatasetVersion = 1;

inline std::string index_name(int i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%04d", i);
    return buf;
}

inline nlohmann::json pose_json(const SE3& pose) {
    nlohmann::json r = nlohmann::json::array();
    for (int i = 0; i < 9; ++i) r.push_back(pose.R.m[i]);
    return {{"rotation", r}, {"translation", {pose.t.x, pose.t.y, pose.t.z}}};
}

inline SE3 pose_from_json(const nlohmann::json& j) {
    SE3 p;
    for (int i = 0; i < 9; ++i) p.R.m[i] = j.at("rotation").at(i);
    p.t = {j.at("translation").at(0), j.at("translation").at(1), j.at("translation").at(2)};
    return p;
}

inline uint32_t file_crc(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing file: " + path);
    uint32_t crc = 0;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0)
        crc = (uint32_t)crc32(crc, (const Bytef*)buf, (uInt)f.gcount());
    return crc;
}

inline void write_sweep_bin(const std::string& path, const LidarSweep& sweep) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write sweep: " + path);
    for (int i = 0; i < sweep.count(); ++i) {
        float rec[5] = {(float)sweep.dirs[i].x, (float)sweep.dirs[i].y, (float)sweep.dirs[i].z,
                        (float)sweep.depth[i], (float)sweep.intensity[i]};
        f.write((const char*)rec, sizeof rec);
    }
}

inline void read_sweep_bin(const std::string& path, int count, LidarSweep& sweep) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing sweep file: " + path);
    for (int i = 0; i < count; ++i) {
        float rec[5];
        if (!f.read((char*)rec, sizeof rec)) throw IoError("sweep truncated: " + path);
        sweep.dirs.push_back({rec[0], rec[1], rec[2]});
        sweep.depth.push_back(rec[3]);
        sweep.intensity.push_back(rec[4]);
    }
}

}  // namespace detail_data

inline void save_dataset(const std::string& dir, const SceneDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "frames");
    fs::create_directories(fs::path(dir) / "lidar");
    nlohmann::json manifest;
    manifest["format_version"] = detail_data::kDatasetVersion;
    manifest["scene"] = ds.scene_name;
    manifest["cuboid"] = {
        {"center", {ds.cuboid.center.x, ds.cuboid.center.y, ds.cuboid.center.z}},
        {"half_extents",
         {ds.cuboid.half_extents.x, ds.cuboid.half_extents.y, ds.cuboid.half_extents.z}},
        {"rotation", std::vector<double>(ds.cuboid.rotation.m.begin(), ds.cuboid.rotation.m.end())}};
    manifest["canonical_frame"] = detail_data::pose_json(ds.canonical_frame);

    nlohmann::json frames = nlohmann::json::array();
    std::vector<std::string> files;
    for (int i = 0; i < (int)ds.frames.size(); ++i) {
        const Frame& fr = ds.frames[i];
        std::string base = detail_data::index_name(i);
        std::string png = "frames/" + base + ".png";
        std::string maskpng = "frames/" + base + "_mask.png";
        std::string pfm = "frames/" + base + ".pfm";
        save_png(dir + "/" + png, fr.rgb);
        save_png(dir + "/" + maskpng, fr.mask);
        save_pfm(dir + "/" + pfm, fr.rgb);
        files.insert(files.end(), {png, maskpng, pfm});
        frames.push_back({{"index", i},
                          {"split", fr.split},
                          {"image", png},
                          {"mask", maskpng},
                          {"pfm", pfm},
                          {"intrinsics",
                           {{"fx", fr.cam.fx},
                            {"fy", fr.cam.fy},
                            {"cx", fr.cam.cx},
                            {"cy", fr.cam.cy},
                            {"width", fr.cam.width},
                            {"height", fr.cam.height}}},
                          {"pose", detail_data::pose_json(fr.cam.pose)}});
    }
    manifest["frames"] = std::move(frames);

    nlohmann::json sweeps = nlohmann::json::array();
    for (int i = 0; i < (int)ds.sweeps.size(); ++i) {
        std::string bin = "lidar/" + detail_data::index_name(i) + ".bin";
        detail_data::write_sweep_bin(dir + "/" + bin, ds.sweeps[i]);
        files.push_back(bin);
        sweeps.push_back({{"index", i},
                          {"split", ds.sweep_split[i]},
                          {"bin", bin},
                          {"count", ds.sweeps[i].count()},
                          {"pose", detail_data::pose_json(ds.sweeps[i].pose)}});
    }
    manifest["lidar"] = std::move(sweeps);

    nlohmann::json sums = nlohmann::json::object();
    for (const std::string& f : files) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "%08x", detail_data::file_crc(dir + "/" + f));
        sums[f] = hex;
    }
    manifest["checksums"] = std::move(sums);

    std::ofstream mf(dir + "/manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

inline SceneDataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("missing manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mf);
    } catch (const std::exception& e) {
        throw IoError(std::string("manifest parse error: ") + e.what());
    }

    auto field = [&](const char* name) -> const nlohmann::json& {
        if (!manifest.contains(name))
            throw IoError(std::string("manifest missing field '") + name + "'");
        return manifest[name];
    };
    int version = field("format_version");
    if (version != detail_data::kDatasetVersion)
        throw IoError("dataset version mismatch: have " + std::to_string(version));

    for (auto& [file, sum] : field("checksums").items()) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "%08x", detail_data::file_crc(dir + "/" + file));
        if (sum != hex) throw IoError("checksum failure for " + file);
    }

    SceneDataset ds;
    ds.scene_name = field("scene");
    try {
        const auto& c = field("cuboid");
        ds.cuboid.center = {c.at("center").at(0), c.at("center").at(1), c.at("center").at(2)};
        ds.cuboid.half_extents = {c.at("half_extents").at(0), c.at("half_extents").at(1),
                                  c.at("half_extents").at(2)};
        for (int i = 0; i < 9; ++i) ds.cuboid.rotation.m[i] = c.at("rotation").at(i);
        ds.canonical_frame = detail_data::pose_from_json(field("canonical_frame"));

        for (const auto& jf : field("frames")) {
            Frame fr;
            fr.split = jf.at("split");
            const auto& in = jf.at("intrinsics");
            fr.cam.fx = in.at("fx");
            fr.cam.fy = in.at("fy");
            fr.cam.cx = in.at("cx");
            fr.cam.cy = in.at("cy");
            fr.cam.width = in.at("width");
            fr.cam.height = in.at("height");
            fr.cam.pose = detail_data::pose_from_json(jf.at("pose"));
            fr.rgb = load_pfm(dir + "/" + (std::string)jf.at("pfm"));
            fr.mask = load_png(dir + "/" + (std::string)jf.at("mask"));
            ds.frames.push_back(std::move(fr));
        }
        for (const auto& js : field("lidar")) {
            LidarSweep sweep;
            sweep.pose = detail_data::pose_from_json(js.at("pose"));
            detail_data::read_sweep_bin(dir + "/" + (std::string)js.at("bin"), js.at("count"),
                                        sweep);
            ds.sweeps.push_back(std::move(sweep));
            ds.sweep_split.push_back(js.at("split"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest field error: ") + e.what());
    }
    return ds;
}

}  // namespace sdfrec
