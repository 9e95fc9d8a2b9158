#include "proxyattn/pose_data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "proxyattn/errors.hpp"
#include "proxyattn/tensor_io.hpp"

namespace proxyattn {

namespace fs = std::filesystem;
using nlohmann::json;

void Skeleton::validate() const {
    const std::size_t J = joints();
    if (J == 0) throw ConfigError("skeleton has no joints");
    if (parents.size() != J) throw ConfigError("skeleton parents length differs from joint count");
    if (root_index >= J || parents[root_index] != -1) throw ConfigError("skeleton root must have parent -1");
    for (std::size_t j = 0; j < J; ++j) {
        if (j == root_index) continue;
        if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= J) {
            throw ConfigError("joint " + std::to_string(j) + " has an invalid parent");
        }
        // Walk to the root; a cycle would exceed J steps.
        std::size_t cur = j, steps = 0;
        while (cur != root_index) {
            if (parents[cur] < 0 || ++steps > J) throw ConfigError("skeleton parents do not form a tree");
            cur = static_cast<std::size_t>(parents[cur]);
        }
    }
    std::set<std::size_t> seen;
    for (auto [l, r] : flip_pairs) {
        if (l >= J || r >= J || l == r) throw ConfigError("invalid flip pair");
        if (!seen.insert(l).second || !seen.insert(r).second) throw ConfigError("flip pairs overlap");
    }
}

std::vector<std::size_t> Skeleton::flip_permutation() const {
    std::vector<std::size_t> perm(joints());
    for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = j;
    for (auto [l, r] : flip_pairs) {
        perm[l] = r;
        perm[r] = l;
    }
    return perm;
}

Skeleton default_h36m17_skeleton() {
    Skeleton s;
    s.joint_names = {"pelvis",   "r_hip",      "r_knee",  "r_ankle", "l_hip",      "l_knee",
                     "l_ankle",  "spine",      "thorax",  "neck",    "head",       "l_shoulder",
                     "l_elbow",  "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
    s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
    s.flip_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    s.root_index = 0;
    return s;
}

json to_json(const Skeleton& s) {
    json pairs = json::array();
    for (auto [l, r] : s.flip_pairs) pairs.push_back({l, r});
    return json{{"joint_names", s.joint_names}, {"parents", s.parents}, {"flip_pairs", pairs},
                {"root_index", s.root_index}};
}

Skeleton skeleton_from_json(const json& j) {
    Skeleton s;
    try {
        s.joint_names = j.at("joint_names").get<std::vector<std::string>>();
        s.parents = j.at("parents").get<std::vector<int>>();
        for (const auto& p : j.at("flip_pairs")) s.flip_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
        s.root_index = j.value("root_index", std::size_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed skeleton: ") + e.what());
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------

Tensor horizontal_flip(const Tensor& seq, const Skeleton& skel) {
    if (seq.rank() != 3 || seq.dim(1) != skel.joints()) {
        throw ShapeError("horizontal_flip: expected (T, " + std::to_string(skel.joints()) + ", C), got " +
                         shape_str(seq.shape()));
    }
    if (skel.flip_pairs.empty()) throw ConfigError("horizontal_flip: skeleton has no flip pairs");
    const auto perm = skel.flip_permutation();
    const std::size_t T = seq.dim(0), J = seq.dim(1), C = seq.dim(2);
    Tensor out(seq.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < J; ++j) {
            const std::size_t src = (t * J + perm[j]) * C;
            const std::size_t dst = (t * J + j) * C;
            out[dst] = -seq[src];
            for (std::size_t c = 1; c < C; ++c) out[dst + c] = seq[src + c];
        }
    return out;
}

PoseSequence2D horizontal_flip(const PoseSequence2D& seq, const Skeleton& skel) {
    return {horizontal_flip(seq.data, skel)};
}

PoseSequence3D horizontal_flip(const PoseSequence3D& seq, const Skeleton& skel) {
    return {horizontal_flip(seq.data, skel), seq.root_relative};
}

std::vector<Window> window_split(const Tensor& seq, std::size_t t_window, std::size_t stride) {
    if (seq.rank() < 1) throw ShapeError("window_split: sequence must have a time axis");
    const std::size_t T = seq.dim(0);
    if (t_window == 0 || stride == 0) throw ConfigError("window_split: window and stride must be >= 1");
    if (t_window > T) {
        throw ShapeError("window_split: window " + std::to_string(t_window) + " exceeds sequence length " +
                         std::to_string(T));
    }
    const std::size_t frame = seq.numel() / T;
    Shape wshape = seq.shape();
    wshape[0] = t_window;

    auto cut = [&](std::size_t offset) {
        Window w;
        w.offset = offset;
        w.valid = std::min(t_window, T - offset);
        w.padded = w.valid < t_window;
        w.data = Tensor(wshape);
        for (std::size_t t = 0; t < t_window; ++t) {
            const std::size_t src = std::min(offset + t, T - 1);
            std::copy_n(seq.data().begin() + static_cast<std::ptrdiff_t>(src * frame), frame,
                        w.data.data().begin() + static_cast<std::ptrdiff_t>(t * frame));
        }
        return w;
    };

    std::vector<Window> out;
    std::size_t offset = 0;
    for (; offset + t_window <= T; offset += stride) out.push_back(cut(offset));
    const std::size_t covered = out.back().offset + t_window;
    if (covered < T && offset < T) out.push_back(cut(offset));
    return out;
}

// ---------------------------------------------------------------------------

std::pair<double, double> PinholeCamera::project(double x, double y, double z) const {
    const double half = 0.5 * image_px;
    return {focal_px * x / z / half, focal_px * y / z / half};
}

void MotionParams::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("invalid motion parameters: ") + what);
    };
    need(std::isfinite(max_amplitude_mm) && max_amplitude_mm >= 0 && max_amplitude_mm <= 100.0,
         "amplitude must lie in [0, 100] mm");
    need(min_freq_hz > 0 && min_freq_hz <= max_freq_hz && std::isfinite(max_freq_hz), "need 0 < min_freq <= max_freq");
    need(fps > 0 && std::isfinite(fps), "fps must be > 0");
    need(subject_distance_mm >= 1500.0 && std::isfinite(subject_distance_mm), "subject distance must be >= 1500 mm");
    need(max_yaw_rad >= 0 && max_yaw_rad <= std::numbers::pi, "yaw range must lie in [0, pi]");
}

Tensor rest_pose_h36m17() {
    // Camera-aligned, y down, facing the camera; x > 0 is the subject's left.
    return Tensor({17, 3}, {0,    0,    0,   -130, 0,    0,   -130, 450,  0,   -130, 900,  0,   130,  0,    0,
                            130,  450,  0,   130,  900,  0,   0,    -230, 0,   0,    -480, 0,   0,    -580, 0,
                            0,    -700, 0,   170,  -480, 0,   170,  -200, 0,   170,  50,   0,   -170, -480, 0,
                            -170, -200, 0,   -170, 50,   0});
}

namespace {

// Parents before children.
std::vector<std::size_t> topological_order(const Skeleton& s) {
    std::vector<std::size_t> order{s.root_index};
    for (std::size_t k = 0; k < order.size(); ++k)
        for (std::size_t j = 0; j < s.joints(); ++j)
            if (s.parents[j] >= 0 && static_cast<std::size_t>(s.parents[j]) == order[k]) order.push_back(j);
    return order;
}

struct Wave {
    double amp, freq, phase;
    double at(double t_sec) const { return amp * std::sin(2.0 * std::numbers::pi * freq * t_sec + phase); }
};

Wave draw_wave(Rng& rng, const MotionParams& m) {
    return {rng.uniform(0.0, 1.0) * m.max_amplitude_mm, rng.uniform(m.min_freq_hz, m.max_freq_hz),
            rng.uniform(0.0, 2.0 * std::numbers::pi)};
}

}  // namespace

std::vector<SynthSequence> synth_generate(Rng& rng, std::size_t n, std::size_t T, const Skeleton& skel,
                                          const MotionParams& motion, const PinholeCamera& cam) {
    skel.validate();
    motion.validate();
    if (T < 2) throw ConfigError("synth_generate needs at least 2 frames, got " + std::to_string(T));
    if (n == 0) throw ConfigError("synth_generate needs at least one sequence");
    if (skel.joints() != 17) throw ConfigError("synthetic rest pose is defined for the 17-joint skeleton only");
    if (!(cam.focal_px > 0 && cam.image_px > 0)) throw ConfigError("camera focal length and image size must be > 0");

    const std::size_t J = skel.joints();
    const Tensor rest = rest_pose_h36m17();
    const auto order = topological_order(skel);
    std::vector<double> bone(J, 0.0);
    for (std::size_t j = 0; j < J; ++j) {
        if (skel.parents[j] < 0) continue;
        const std::size_t p = static_cast<std::size_t>(skel.parents[j]);
        double d = 0.0;
        for (std::size_t k = 0; k < 3; ++k) d += std::pow(rest.at({j, k}) - rest.at({p, k}), 2);
        bone[j] = std::sqrt(d);
    }

    std::vector<SynthSequence> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::array<Wave, 3>> waves(J);
        for (auto& w : waves)
            for (auto& a : w) a = draw_wave(rng, motion);
        std::array<Wave, 3> root_wave{draw_wave(rng, motion), draw_wave(rng, motion), draw_wave(rng, motion)};
        const double yaw = rng.uniform(-motion.max_yaw_rad, motion.max_yaw_rad);
        const double cy = std::cos(yaw), sy = std::sin(yaw);

        SynthSequence seq;
        char id[32];
        std::snprintf(id, sizeof id, "seq%03zu", s);
        seq.id = id;
        const std::size_t C = motion.confidence_channel ? 3 : 2;
        seq.pose2d = Tensor({T, J, C});
        seq.pose3d = Tensor({T, J, 3});
        seq.root = Tensor({T, 3});

        std::vector<std::array<double, 3>> pos(J);
        for (std::size_t t = 0; t < T; ++t) {
            const double ts = static_cast<double>(t) / motion.fps;
            pos[skel.root_index] = {0.0, 0.0, 0.0};
            for (std::size_t j : order) {
                if (j == skel.root_index) continue;
                const std::size_t p = static_cast<std::size_t>(skel.parents[j]);
                // Target = rest + offset; keep the direction, restore the length.
                std::array<double, 3> d{};
                double len = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    d[k] = rest.at({j, k}) + waves[j][k].at(ts) - pos[p][k];
                    len += d[k] * d[k];
                }
                len = std::sqrt(len);
                if (len < 1e-9) {
                    for (std::size_t k = 0; k < 3; ++k) d[k] = rest.at({j, k}) - rest.at({p, k});
                    len = bone[j];
                }
                for (std::size_t k = 0; k < 3; ++k) pos[j][k] = pos[p][k] + bone[j] * d[k] / len;
            }
            const double root[3] = {root_wave[0].at(ts), root_wave[1].at(ts),
                                    motion.subject_distance_mm + root_wave[2].at(ts)};
            for (std::size_t k = 0; k < 3; ++k) seq.root.at({t, k}) = root[k];
            for (std::size_t j = 0; j < J; ++j) {
                // Yaw about the vertical (y) axis, then place in front of the camera.
                const double x = cy * pos[j][0] + sy * pos[j][2];
                const double y = pos[j][1];
                const double z = -sy * pos[j][0] + cy * pos[j][2];
                seq.pose3d.at({t, j, 0}) = x;
                seq.pose3d.at({t, j, 1}) = y;
                seq.pose3d.at({t, j, 2}) = z;
                const auto [u, v] = cam.project(x + root[0], y + root[1], z + root[2]);
                seq.pose2d.at({t, j, 0}) = u;
                seq.pose2d.at({t, j, 1}) = v;
                if (C == 3) seq.pose2d.at({t, j, 2}) = 1.0;
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<double> bone_lengths(const Tensor& pose3d, const Skeleton& skel) {
    if (pose3d.rank() != 3 || pose3d.dim(1) != skel.joints() || pose3d.dim(2) != 3) {
        throw ShapeError("bone_lengths: expected (T, J, 3), got " + shape_str(pose3d.shape()));
    }
    const std::size_t T = pose3d.dim(0), J = pose3d.dim(1);
    std::vector<double> out(T * J, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < J; ++j) {
            if (skel.parents[j] < 0) continue;
            const std::size_t p = static_cast<std::size_t>(skel.parents[j]);
            double d = 0.0;
            for (std::size_t k = 0; k < 3; ++k) d += std::pow(pose3d.at({t, j, k}) - pose3d.at({t, p, k}), 2);
            out[t * J + j] = std::sqrt(d);
        }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_pose_tensor(const Tensor& t, std::optional<std::size_t> channels, const std::string& where) {
    if (t.rank() != 3 || (channels && t.dim(2) != *channels)) {
        throw ShapeMismatchError(where + ": expected a (T, J, " + (channels ? std::to_string(*channels) : "C") +
                                 ") pose tensor, got " + shape_str(t.shape()));
    }
    if (!t.all_finite()) throw IoError(where + ": non-finite coordinates");
}

void check_kind(const json& side, const char* want, const std::string& where) {
    if (side.contains("kind") && side["kind"] != want) {
        throw IoError(where + ": expected kind " + want + ", found " + side["kind"].dump());
    }
}

}  // namespace

void save_sequence(const fs::path& stem, const PoseSequence2D& seq) {
    check_pose_tensor(seq.data, std::nullopt, stem.string());
    save_tensor(stem, seq.data, json{{"kind", "pose2d"}});
}

void save_sequence(const fs::path& stem, const PoseSequence3D& seq) {
    check_pose_tensor(seq.data, 3, stem.string());
    save_tensor(stem, seq.data, json{{"kind", "pose3d"}, {"root_relative", seq.root_relative}});
}

PoseSequence2D load_pose2d(const fs::path& stem) {
    json side;
    Tensor t = load_tensor(stem, &side);
    check_kind(side, "pose2d", stem.string());
    check_pose_tensor(t, std::nullopt, stem.string());
    if (t.dim(2) != 2 && t.dim(2) != 3) throw ShapeMismatchError(stem.string() + ": 2D poses need 2 or 3 channels");
    return {std::move(t)};
}

PoseSequence3D load_pose3d(const fs::path& stem) {
    json side;
    Tensor t = load_tensor(stem, &side);
    check_kind(side, "pose3d", stem.string());
    check_pose_tensor(t, 3, stem.string());
    return {std::move(t), side.value("root_relative", true)};
}

PoseSequence2D load_pose2d_json(const fs::path& file) {
    json doc;
    Tensor t = load_json_tensor(file, &doc);
    check_kind(doc, "pose2d", file.string());
    check_pose_tensor(t, std::nullopt, file.string());
    return {std::move(t)};
}

PoseSequence3D load_pose3d_json(const fs::path& file) {
    json doc;
    Tensor t = load_json_tensor(file, &doc);
    check_kind(doc, "pose3d", file.string());
    check_pose_tensor(t, 3, file.string());
    return {std::move(t), doc.value("root_relative", true)};
}

// ---------------------------------------------------------------------------

DatasetManifest write_dataset(const fs::path& dir, const std::vector<SynthSequence>& seqs, const Skeleton& skel,
                              const std::string& split, const std::optional<PinholeCamera>& cam) {
    if (split != "train" && split != "test") throw ConfigError("split must be train or test, got " + split);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.dir = dir;
    m.split = split;
    m.skeleton = skel;
    m.camera = cam;
    json entries = json::array();
    for (const auto& s : seqs) {
        ManifestEntry e{s.id, s.id + "_2d", s.id + "_3d", s.root.empty() ? "" : s.id + "_root", s.pose3d.dim(0),
                        s.pose3d.dim(1)};
        save_sequence(dir / e.pose2d, PoseSequence2D{s.pose2d});
        save_sequence(dir / e.pose3d, PoseSequence3D{s.pose3d, true});
        if (!e.root.empty()) save_tensor(dir / e.root, s.root, json{{"kind", "root_trajectory"}});
        json je{{"id", e.id}, {"pose2d", e.pose2d}, {"pose3d", e.pose3d}, {"frames", e.frames}, {"joints", e.joints}};
        if (!e.root.empty()) je["root"] = e.root;
        entries.push_back(je);
        m.sequences.push_back(std::move(e));
    }
    json doc{{"version", kManifestVersion}, {"split", split}, {"skeleton", to_json(skel)}, {"sequences", entries}};
    if (cam) doc["camera"] = json{{"focal_px", cam->focal_px}, {"image_px", cam->image_px}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << doc.dump(2) << '\n';
    return m;
}

DatasetManifest load_manifest(const fs::path& dir) {
    const fs::path file = dir / "manifest.json";
    if (!fs::exists(dir)) throw MissingFileError("data directory not found: " + dir.string());
    if (!fs::exists(file)) throw MissingFileError("manifest not found: " + file.string());
    std::ifstream in(file);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("malformed manifest " + file.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.dir = dir;
    try {
        if (doc.at("version").get<int>() != kManifestVersion) {
            throw IoError(file.string() + ": unsupported manifest version " + doc.at("version").dump());
        }
        m.split = doc.value("split", std::string{"train"});
        m.skeleton = skeleton_from_json(doc.at("skeleton"));
        if (doc.contains("camera")) {
            m.camera = PinholeCamera{doc["camera"].at("focal_px").get<double>(),
                                     doc["camera"].at("image_px").get<double>()};
        }
        for (const auto& e : doc.at("sequences")) {
            m.sequences.push_back(ManifestEntry{e.at("id").get<std::string>(), e.at("pose2d").get<std::string>(),
                                                e.at("pose3d").get<std::string>(), e.value("root", std::string{}),
                                                e.at("frames").get<std::size_t>(), e.at("joints").get<std::size_t>()});
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + file.string() + ": " + e.what());
    }
    for (const auto& e : m.sequences) {
        for (const auto& stem : {e.pose2d, e.pose3d}) {
            if (!fs::exists(dir / (stem + ".json")) || !fs::exists(dir / (stem + ".bin"))) {
                throw MissingFileError("manifest entry " + e.id + " references missing file " + (dir / stem).string());
            }
        }
    }
    return m;
}

LoadedSequence load_entry(const DatasetManifest& m, std::size_t i) {
    const ManifestEntry& e = m.sequences.at(i);
    LoadedSequence s;
    s.pose2d = load_pose2d(m.dir / e.pose2d);
    s.pose3d = load_pose3d(m.dir / e.pose3d);
    const Shape want_prefix{e.frames, e.joints};
    for (const Tensor* t : {&s.pose2d.data, &s.pose3d.data}) {
        if (t->dim(0) != e.frames || t->dim(1) != e.joints) {
            throw ShapeMismatchError("sequence " + e.id + ": declared (T, J) = " + shape_str(want_prefix) +
                                     " but file holds " + shape_str(t->shape()));
        }
    }
    if (e.joints != m.skeleton.joints()) {
        throw ShapeMismatchError("sequence " + e.id + " has " + std::to_string(e.joints) + " joints, skeleton has " +
                                 std::to_string(m.skeleton.joints()));
    }
    if (!e.root.empty()) {
        Tensor root = load_tensor(m.dir / e.root);
        if (root.shape() != Shape{e.frames, 3}) {
            throw ShapeMismatchError("sequence " + e.id + ": root trajectory shape " + shape_str(root.shape()));
        }
        if (m.camera) {
            const std::size_t C = s.pose2d.data.dim(2);
            for (std::size_t t = 0; t < e.frames; ++t)
                for (std::size_t j = 0; j < e.joints; ++j) {
                    const auto [u, v] = m.camera->project(s.pose3d.data.at({t, j, 0}) + root.at({t, 0}),
                                                          s.pose3d.data.at({t, j, 1}) + root.at({t, 1}),
                                                          s.pose3d.data.at({t, j, 2}) + root.at({t, 2}));
                    const std::size_t base = (t * e.joints + j) * C;
                    if (std::abs(u - s.pose2d.data[base]) > 1e-9 || std::abs(v - s.pose2d.data[base + 1]) > 1e-9) {
                        throw IoError("sequence " + e.id + ": 2D does not match the projection of 3D at frame " +
                                      std::to_string(t) + ", joint " + std::to_string(j));
                    }
                }
        }
        s.root = std::move(root);
    }
    return s;
}

}  // namespace proxyattn
