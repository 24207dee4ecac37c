// Dataset plumbing: dot-annotation JSON, the .dmap raster format, synthetic
// moving-crowd sequences, clip windowing and on-disk dataset directories.
//
// File formats (all integers and floats little-endian):
//   .dmap     "DMAP" u32 H, u32 W, then H*W float32 row-major
//   ann.json  {"size":[H,W],"frames":[{"id":0,"points":[[x,y],...]},...]}
//   dataset dir: dataset.json manifest naming per-sequence subdirectories,
//                each holding ann.json plus frame_%04d.dmap rasters
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stdnet/density.hpp"
#include "stdnet/tensor.hpp"

namespace stdnet {

struct AnnotationFile {
    i64 height = 0;
    i64 width = 0;
    std::vector<DotAnnotations> frames;
};

AnnotationFile load_annotations(const std::string& path);
AnnotationFile parse_annotations(const std::string& json_text);
void save_annotations(const AnnotationFile& ann, const std::string& path);
std::string annotations_to_json(const AnnotationFile& ann);

enum class DensityFormat { dmap, csv };
void export_density(const DensityMap& dm, const std::string& path, DensityFormat format);
DensityMap import_density(const std::string& path);  // .dmap only

// One training sample: T frames plus the last frame's annotation and its
// rendered ground-truth map.
struct Clip {
    std::vector<Tensor> frames;  // each [C, H, W]
    DotAnnotations ann;          // last frame
    DensityMap gt;
};

struct ClipDataset {
    std::string preset = "synthetic";
    i64 t = 0;
    i64 height = 0, width = 0, channels = 1;
    SigmaPolicy sigma;
    std::vector<Clip> clips;
};

// Clip presets bundle the frame depth, channel count and sigma policy used
// by the matching dataset family.
struct PresetDefaults {
    i64 t = 10;
    i64 channels = 1;
    SigmaPolicy sigma;
};
PresetDefaults preset_defaults(const std::string& preset);  // ucsd-like, mall-like, expo-like, synthetic

// Overlapping windows of length t with the given stride; each clip pairs the
// window with the annotation of its last frame. Ground truth is not rendered
// here. frames and annotations must be parallel and at least t long.
std::vector<Clip> make_clips(const std::vector<Tensor>& frames,
                             const std::vector<DotAnnotations>& annotations, i64 t, i64 stride);

// Synthetic moving-crowd spec. People are Gaussian dots of fixed appearance
// drifting with constant per-person velocity, reflecting at the image border.
// Annotations record the exact continuous centres. Everything derives from
// the seed.
struct SynthSpec {
    std::uint64_t seed = 1;
    i64 height = 16, width = 16;
    i64 n_people_min = 1, n_people_max = 6;
    double speed_min = 0.25, speed_max = 1.25;  // pixels per frame
    i64 frames_per_seq = 10;
    i64 sequences = 40;
    i64 t = 10;
    i64 stride = 1;
    double blob_sigma = 1.3;  // appearance width, not the GT sigma
    double amplitude = 1.0;

    static SynthSpec from_json_text(const std::string& text);
    static SynthSpec from_json_file(const std::string& path);
    std::string to_json() const;
};

struct Sequence {
    std::vector<Tensor> frames;  // [1, H, W] rasters
    AnnotationFile ann;
};

std::vector<Sequence> generate_sequences(const SynthSpec& spec);

// In-memory dataset: generate, window, render ground truth (fixed sigma 3).
ClipDataset gen_synthetic(const SynthSpec& spec);

// On-disk round trip of the same generation.
void write_synthetic_dataset(const SynthSpec& spec, const std::string& dir);
ClipDataset load_dataset(const std::string& dir);

// Little-endian binary primitives shared with the checkpoint format.
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f32(std::ostream& os, float v);
float read_f32(std::istream& is);
void write_lp_string(std::ostream& os, const std::string& s);  // u32 length + bytes
std::string read_lp_string(std::istream& is);
// u32 rank, u32 dims, float32 payload (doubles narrowed to f32).
void write_tensor_f32(std::ostream& os, const Tensor& t);
Tensor read_tensor_f32(std::istream& is);

}  // namespace stdnet
