#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "proxyattn/rng.hpp"
#include "proxyattn/tensor.hpp"

namespace proxyattn {

struct Skeleton {
    std::vector<std::string> joint_names;
    std::vector<int> parents;  // -1 for the root
    std::vector<std::pair<std::size_t, std::size_t>> flip_pairs;  // (left, right)
    std::size_t root_index = 0;

    std::size_t joints() const { return joint_names.size(); }
    // Throws ConfigError unless parents form a tree rooted at root_index and
    // flip pairs are disjoint.
    void validate() const;
    // Index map j -> mirrored joint (identity off the flip pairs).
    std::vector<std::size_t> flip_permutation() const;
};

// 0 pelvis, 1-3 right leg, 4-6 left leg, 7 spine, 8 thorax, 9 neck, 10 head,
// 11-13 left arm, 14-16 right arm.
Skeleton default_h36m17_skeleton();

nlohmann::json to_json(const Skeleton& s);
Skeleton skeleton_from_json(const nlohmann::json& j);

// (T, J, C_in) in normalized image coordinates; an optional third channel
// carries detector confidence.
struct PoseSequence2D {
    Tensor data;
};

// (T, J, 3) in millimetres.
struct PoseSequence3D {
    Tensor data;
    bool root_relative = true;
};

// Mirror along the image x axis: negate channel 0 and swap every flip pair.
// Works on any (T, J, C) tensor; channels past 0 are left untouched.
Tensor horizontal_flip(const Tensor& seq, const Skeleton& skel);
PoseSequence2D horizontal_flip(const PoseSequence2D& seq, const Skeleton& skel);
PoseSequence3D horizontal_flip(const PoseSequence3D& seq, const Skeleton& skel);

struct Window {
    Tensor data;             // (T_window, J, C)
    std::size_t offset = 0;  // first source frame
    std::size_t valid = 0;   // frames copied from the source; the rest replicate the last frame
    bool padded = false;
};

// Windows at offsets 0, stride, 2*stride, ... that fit inside the sequence,
// plus one edge-padded window when the last full window stops short of the end.
std::vector<Window> window_split(const Tensor& seq, std::size_t t_window, std::size_t stride);

// Fixed synthetic pinhole camera looking down +z. Camera coordinates are
// millimetres with y pointing down the image.
struct PinholeCamera {
    double focal_px = 1000.0;
    double image_px = 1000.0;  // square image, principal point at the centre

    // Normalized coordinates in [-1, 1] across the image.
    std::pair<double, double> project(double x, double y, double z) const;
};

struct MotionParams {
    double max_amplitude_mm = 100.0;
    double min_freq_hz = 0.3;
    double max_freq_hz = 1.5;
    double fps = 50.0;
    double subject_distance_mm = 4000.0;
    double max_yaw_rad = 0.6;
    bool confidence_channel = false;

    void validate() const;
};

struct SynthSequence {
    std::string id;
    Tensor pose2d;  // (T, J, 2 or 3)
    Tensor pose3d;  // (T, J, 3), root-relative mm
    Tensor root;    // (T, 3), camera-space root trajectory mm
};

// Rest pose (J, 3) in mm, left/right symmetric, root at the origin.
Tensor rest_pose_h36m17();

// Sinusoidal joint motion re-projected along the kinematic tree so every
// bone keeps its rest length; 2D is the camera projection of 3D + root.
std::vector<SynthSequence> synth_generate(Rng& rng, std::size_t n_sequences, std::size_t frames,
                                          const Skeleton& skel, const MotionParams& motion = {},
                                          const PinholeCamera& cam = {});

// Per-frame bone lengths of a (T, J, 3) sequence, row-major (T, J); the root entry is 0.
std::vector<double> bone_lengths(const Tensor& pose3d, const Skeleton& skel);

struct ManifestEntry {
    std::string id;
    std::string pose2d;  // tensor stems relative to the manifest directory
    std::string pose3d;
    std::string root;    // optional
    std::size_t frames = 0;
    std::size_t joints = 0;
};

struct DatasetManifest {
    std::filesystem::path dir;
    std::string split = "train";
    Skeleton skeleton;
    std::optional<PinholeCamera> camera;
    std::vector<ManifestEntry> sequences;
};

struct LoadedSequence {
    PoseSequence2D pose2d;
    PoseSequence3D pose3d;
    std::optional<Tensor> root;
};

inline constexpr int kManifestVersion = 1;

// Writes <dir>/manifest.json plus one tensor pair per stored array.
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<SynthSequence>& seqs,
                              const Skeleton& skel, const std::string& split = "train",
                              const std::optional<PinholeCamera>& cam = PinholeCamera{});
DatasetManifest load_manifest(const std::filesystem::path& dir);

// Loads one manifest entry and checks its shapes against the declared T, J.
// With a camera and root trajectory present, 2D is re-derived from 3D and
// must match within 1e-9.
LoadedSequence load_entry(const DatasetManifest& m, std::size_t i);

void save_sequence(const std::filesystem::path& stem, const PoseSequence2D& seq);
void save_sequence(const std::filesystem::path& stem, const PoseSequence3D& seq);
PoseSequence2D load_pose2d(const std::filesystem::path& stem);
PoseSequence3D load_pose3d(const std::filesystem::path& stem);
// Single-file JSON fixture: {"kind": "pose2d"|"pose3d", "data": nested arrays}.
PoseSequence2D load_pose2d_json(const std::filesystem::path& file);
PoseSequence3D load_pose3d_json(const std::filesystem::path& file);

}  // namespace proxyattn
