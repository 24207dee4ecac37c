#include "stdnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stdnet/rng.hpp"

namespace stdnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write " + path);
    out << text;
    require(out.good(), "short write to " + path);
}

}  // namespace

AnnotationFile parse_annotations(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("annotation JSON malformed: ") + e.what());
    }
    require(doc.contains("size") && doc["size"].is_array() && doc["size"].size() == 2,
            "annotation JSON: size must be [H, W]");
    AnnotationFile out;
    out.height = doc["size"][0].get<i64>();
    out.width = doc["size"][1].get<i64>();
    require(out.height > 0 && out.width > 0, "annotation JSON: size must be positive");
    require(doc.contains("frames") && doc["frames"].is_array(),
            "annotation JSON: frames array required");

    for (const json& jf : doc["frames"]) {
        require(jf.contains("id") && jf["id"].is_number_integer(),
                "annotation JSON: frame id must be an integer");
        DotAnnotations ann;
        ann.frame_id = jf["id"].get<i64>();
        ann.height = out.height;
        ann.width = out.width;
        require(jf.contains("points") && jf["points"].is_array(),
                "annotation JSON: frame " + std::to_string(ann.frame_id) + " missing points");
        std::size_t idx = 0;
        for (const json& jp : jf["points"]) {
            require(jp.is_array() && jp.size() == 2 && jp[0].is_number() && jp[1].is_number(),
                    "annotation JSON: frame " + std::to_string(ann.frame_id) + " point " +
                        std::to_string(idx) + " must be [x, y]");
            Point p{jp[0].get<double>(), jp[1].get<double>()};
            require(p.x >= 0.0 && p.x < static_cast<double>(out.width) && p.y >= 0.0 &&
                        p.y < static_cast<double>(out.height),
                    "annotation JSON: frame " + std::to_string(ann.frame_id) + " point " +
                        std::to_string(idx) + " out of bounds");
            ann.points.push_back(p);
            ++idx;
        }
        out.frames.push_back(std::move(ann));
    }
    return out;
}

AnnotationFile load_annotations(const std::string& path) {
    return parse_annotations(read_text_file(path));
}

std::string annotations_to_json(const AnnotationFile& ann) {
    json doc;
    doc["size"] = {ann.height, ann.width};
    doc["frames"] = json::array();
    for (const DotAnnotations& f : ann.frames) {
        json jf;
        jf["id"] = f.frame_id;
        jf["points"] = json::array();
        for (const Point& p : f.points) jf["points"].push_back({p.x, p.y});
        doc["frames"].push_back(std::move(jf));
    }
    return doc.dump();
}

void save_annotations(const AnnotationFile& ann, const std::string& path) {
    write_text_file(path, annotations_to_json(ann));
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), "unexpected end of binary stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is) {
    const std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_lp_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_lp_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    require(is.good(), "unexpected end of binary stream");
    return s;
}

void write_tensor_f32(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (i64 a = 0; a < t.rank(); ++a) write_u32(os, static_cast<std::uint32_t>(t.dim(a)));
    for (i64 i = 0; i < t.numel(); ++i) write_f32(os, static_cast<float>(t[i]));
}

Tensor read_tensor_f32(std::istream& is) {
    const std::uint32_t rank = read_u32(is);
    require(rank >= 1 && rank <= 8, "tensor stream: implausible rank");
    std::vector<i64> shape;
    for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(static_cast<i64>(read_u32(is)));
    Tensor t(shape);
    for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(read_f32(is));
    return t;
}

void export_density(const DensityMap& dm, const std::string& path, DensityFormat format) {
    require(dm.values.rank() == 2, "export_density: map must be [H, W]");
    if (format == DensityFormat::dmap) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        require(out.good(), "cannot write " + path);
        out.write("DMAP", 4);
        write_u32(out, static_cast<std::uint32_t>(dm.height()));
        write_u32(out, static_cast<std::uint32_t>(dm.width()));
        for (i64 i = 0; i < dm.values.numel(); ++i)
            write_f32(out, static_cast<float>(dm.values[i]));
        require(out.good(), "short write to " + path);
        return;
    }
    std::ostringstream os;
    char buf[32];
    for (i64 i = 0; i < dm.height(); ++i) {
        for (i64 j = 0; j < dm.width(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", dm.values[i * dm.width() + j]);
            if (j) os << ',';
            os << buf;
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

DensityMap import_density(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::string(magic, 4) == "DMAP", path + " is not a density raster");
    const i64 h = static_cast<i64>(read_u32(in));
    const i64 w = static_cast<i64>(read_u32(in));
    require(h > 0 && w > 0, path + ": invalid raster size");
    Tensor t({h, w});
    for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(read_f32(in));
    return DensityMap(std::move(t));
}

PresetDefaults preset_defaults(const std::string& preset) {
    PresetDefaults d;
    if (preset == "ucsd-like") {
        d.t = 10;
        d.channels = 1;
        d.sigma = SigmaPolicy::fixed(3.0);
    } else if (preset == "mall-like") {
        d.t = 8;
        d.channels = 3;
        d.sigma = SigmaPolicy::adaptive(0.3, 3);
    } else if (preset == "expo-like") {
        d.t = 5;
        d.channels = 1;
        d.sigma = SigmaPolicy::fixed(3.0);
    } else if (preset == "synthetic") {
        d.t = 10;
        d.channels = 1;
        d.sigma = SigmaPolicy::fixed(3.0);
    } else {
        throw std::invalid_argument("unknown dataset preset: " + preset);
    }
    return d;
}

std::vector<Clip> make_clips(const std::vector<Tensor>& frames,
                             const std::vector<DotAnnotations>& annotations, i64 t, i64 stride) {
    require(t >= 1, "make_clips: t must be >= 1");
    require(stride >= 1, "make_clips: stride must be >= 1");
    require(frames.size() == annotations.size(),
            "make_clips: frames and annotations must be parallel");
    require(static_cast<i64>(frames.size()) >= t,
            "make_clips: sequence shorter than clip length");

    std::vector<Clip> clips;
    const i64 n = static_cast<i64>(frames.size());
    for (i64 s = 0; s + t <= n; s += stride) {
        Clip c;
        c.frames.assign(frames.begin() + s, frames.begin() + s + t);
        c.ann = annotations[static_cast<std::size_t>(s + t - 1)];
        clips.push_back(std::move(c));
    }
    return clips;
}

SynthSpec SynthSpec::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("synth spec JSON malformed: ") + e.what());
    }
    require(doc.is_object(), "synth spec: top level must be a JSON object");
    // Unknown keys are rejected so a typo cannot silently fall back to a
    // default value.
    static const char* known[] = {"seed",      "size",   "n_people", "speed",
                                  "frames_per_seq", "sequences", "t",     "stride",
                                  "blob_sigma",     "amplitude"};
    for (const auto& item : doc.items()) {
        require(std::find(std::begin(known), std::end(known), item.key()) != std::end(known),
                "synth spec: unknown key \"" + item.key() + "\"");
    }
    SynthSpec s;
    if (doc.contains("seed")) s.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("size")) {
        require(doc["size"].is_array() && doc["size"].size() == 2, "synth spec: size must be [H, W]");
        s.height = doc["size"][0].get<i64>();
        s.width = doc["size"][1].get<i64>();
    }
    if (doc.contains("n_people")) {
        s.n_people_min = doc["n_people"][0].get<i64>();
        s.n_people_max = doc["n_people"][1].get<i64>();
    }
    if (doc.contains("speed")) {
        s.speed_min = doc["speed"][0].get<double>();
        s.speed_max = doc["speed"][1].get<double>();
    }
    if (doc.contains("frames_per_seq")) s.frames_per_seq = doc["frames_per_seq"].get<i64>();
    if (doc.contains("sequences")) s.sequences = doc["sequences"].get<i64>();
    if (doc.contains("t")) s.t = doc["t"].get<i64>();
    if (doc.contains("stride")) s.stride = doc["stride"].get<i64>();
    if (doc.contains("blob_sigma")) s.blob_sigma = doc["blob_sigma"].get<double>();
    if (doc.contains("amplitude")) s.amplitude = doc["amplitude"].get<double>();

    require(s.height > 0 && s.width > 0, "synth spec: size must be positive");
    require(s.n_people_min >= 0 && s.n_people_max >= s.n_people_min,
            "synth spec: n_people range invalid");
    require(s.speed_min >= 0.0 && s.speed_max >= s.speed_min, "synth spec: speed range invalid");
    require(s.frames_per_seq >= 1 && s.sequences >= 1, "synth spec: sequence counts invalid");
    require(s.t >= 1 && s.t <= s.frames_per_seq, "synth spec: t must fit in frames_per_seq");
    require(s.stride >= 1, "synth spec: stride must be >= 1");
    require(s.blob_sigma > 0.0 && s.amplitude > 0.0, "synth spec: blob parameters invalid");
    return s;
}

SynthSpec SynthSpec::from_json_file(const std::string& path) {
    return from_json_text(read_text_file(path));
}

std::string SynthSpec::to_json() const {
    json doc;
    doc["seed"] = seed;
    doc["size"] = {height, width};
    doc["n_people"] = {n_people_min, n_people_max};
    doc["speed"] = {speed_min, speed_max};
    doc["frames_per_seq"] = frames_per_seq;
    doc["sequences"] = sequences;
    doc["t"] = t;
    doc["stride"] = stride;
    doc["blob_sigma"] = blob_sigma;
    doc["amplitude"] = amplitude;
    return doc.dump();
}

namespace {

struct Person {
    double x, y, vx, vy;
};

// Reflect into [lo, hi], flipping velocity on each bounce.
void reflect(double& pos, double& vel, double lo, double hi) {
    while (pos < lo || pos > hi) {
        if (pos < lo) {
            pos = 2.0 * lo - pos;
            vel = -vel;
        } else {
            pos = 2.0 * hi - pos;
            vel = -vel;
        }
    }
}

Tensor render_scene(const std::vector<Person>& people, i64 h, i64 w, double sigma, double amp) {
    Tensor img({1, h, w});
    double* ip = img.data();
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double rad = std::ceil(4.0 * sigma);
    for (const Person& p : people) {
        const i64 j0 = std::max<i64>(0, static_cast<i64>(std::ceil(p.x - rad)));
        const i64 j1 = std::min<i64>(w - 1, static_cast<i64>(std::floor(p.x + rad)));
        const i64 i0 = std::max<i64>(0, static_cast<i64>(std::ceil(p.y - rad)));
        const i64 i1 = std::min<i64>(h - 1, static_cast<i64>(std::floor(p.y + rad)));
        for (i64 i = i0; i <= i1; ++i) {
            const double dy = static_cast<double>(i) - p.y;
            double* row = ip + i * w;
            for (i64 j = j0; j <= j1; ++j) {
                const double dx = static_cast<double>(j) - p.x;
                row[j] += amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
    }
    return img;
}

}  // namespace

std::vector<Sequence> generate_sequences(const SynthSpec& spec) {
    // Margins keep people half a pixel inside the border so a later flip of
    // the exact annotations stays in bounds.
    const double lo = 0.5;
    const double hx = static_cast<double>(spec.width) - 1.5;
    const double hy = static_cast<double>(spec.height) - 1.5;
    require(hx > lo && hy > lo, "synth spec: image too small for the walk margins");

    Rng rng(substream(spec.seed, 0xda7aULL));
    std::vector<Sequence> seqs;
    for (i64 s = 0; s < spec.sequences; ++s) {
        const i64 n = rng.uniform_int(spec.n_people_min, spec.n_people_max);
        std::vector<Person> people;
        for (i64 p = 0; p < n; ++p) {
            Person pr;
            pr.x = rng.uniform(lo, hx);
            pr.y = rng.uniform(lo, hy);
            const double speed = rng.uniform(spec.speed_min, spec.speed_max);
            const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            pr.vx = speed * std::cos(angle);
            pr.vy = speed * std::sin(angle);
            people.push_back(pr);
        }

        Sequence seq;
        seq.ann.height = spec.height;
        seq.ann.width = spec.width;
        for (i64 f = 0; f < spec.frames_per_seq; ++f) {
            DotAnnotations ann;
            ann.frame_id = f;
            ann.height = spec.height;
            ann.width = spec.width;
            for (const Person& p : people) ann.points.push_back(Point{p.x, p.y});
            seq.frames.push_back(
                render_scene(people, spec.height, spec.width, spec.blob_sigma, spec.amplitude));
            seq.ann.frames.push_back(std::move(ann));
            for (Person& p : people) {
                p.x += p.vx;
                p.y += p.vy;
                reflect(p.x, p.vx, lo, hx);
                reflect(p.y, p.vy, lo, hy);
            }
        }
        seqs.push_back(std::move(seq));
    }
    return seqs;
}

namespace {

ClipDataset assemble(const std::vector<Sequence>& seqs, const std::string& preset, i64 t,
                     i64 stride, i64 channels, const SigmaPolicy& sigma) {
    require(!seqs.empty(), "dataset: no sequences");
    ClipDataset ds;
    ds.preset = preset;
    ds.t = t;
    ds.sigma = sigma;
    ds.channels = channels;
    ds.height = seqs[0].ann.height;
    ds.width = seqs[0].ann.width;

    for (const Sequence& seq : seqs) {
        require(seq.ann.height == ds.height && seq.ann.width == ds.width,
                "dataset: sequences must share one frame size");
        std::vector<Tensor> frames;
        for (const Tensor& f : seq.frames) {
            require(f.rank() == 3 && f.dim(1) == ds.height && f.dim(2) == ds.width,
                    "dataset: frame raster size mismatch");
            if (channels == 1) {
                frames.push_back(f);
            } else {
                Tensor rep({channels, ds.height, ds.width});
                for (i64 c = 0; c < channels; ++c)
                    std::copy(f.data(), f.data() + f.numel(), rep.data() + c * f.numel());
                frames.push_back(std::move(rep));
            }
        }
        std::vector<Clip> clips = make_clips(frames, seq.ann.frames, t, stride);
        for (Clip& c : clips) {
            c.gt = render_density(c.ann, sigma);
            ds.clips.push_back(std::move(c));
        }
    }
    return ds;
}

}  // namespace

ClipDataset gen_synthetic(const SynthSpec& spec) {
    const PresetDefaults d = preset_defaults("synthetic");
    return assemble(generate_sequences(spec), "synthetic", spec.t, spec.stride, d.channels,
                    d.sigma);
}

void write_synthetic_dataset(const SynthSpec& spec, const std::string& dir) {
    const std::vector<Sequence> seqs = generate_sequences(spec);
    fs::create_directories(dir);

    json manifest;
    manifest["preset"] = "synthetic";
    manifest["t"] = spec.t;
    manifest["stride"] = spec.stride;
    manifest["channels"] = 1;
    manifest["size"] = {spec.height, spec.width};
    manifest["sigma"] = preset_defaults("synthetic").sigma.str();
    manifest["sequences"] = json::array();

    char name[32];
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        std::snprintf(name, sizeof name, "seq_%03zu", s);
        const fs::path sdir = fs::path(dir) / name;
        fs::create_directories(sdir);
        save_annotations(seqs[s].ann, (sdir / "ann.json").string());
        for (std::size_t f = 0; f < seqs[s].frames.size(); ++f) {
            char fname[32];
            std::snprintf(fname, sizeof fname, "frame_%04zu.dmap", f);
            const Tensor& raster = seqs[s].frames[f];
            export_density(DensityMap(raster.reshaped({raster.dim(1), raster.dim(2)})),
                           (sdir / fname).string(), DensityFormat::dmap);
        }
        manifest["sequences"].push_back(name);
    }
    write_text_file((fs::path(dir) / "dataset.json").string(), manifest.dump(2));
}

ClipDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    json manifest;
    try {
        manifest = json::parse(read_text_file((root / "dataset.json").string()));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("dataset manifest malformed: ") + e.what());
    }
    require(manifest.contains("preset") && manifest.contains("t") &&
                manifest.contains("sequences"),
            "dataset manifest: preset, t and sequences are required");

    const std::string preset = manifest["preset"].get<std::string>();
    const PresetDefaults defaults = preset_defaults(preset);
    const i64 t = manifest["t"].get<i64>();
    const i64 stride = manifest.contains("stride") ? manifest["stride"].get<i64>() : 1;
    const i64 channels =
        manifest.contains("channels") ? manifest["channels"].get<i64>() : defaults.channels;
    const SigmaPolicy sigma = manifest.contains("sigma")
                                  ? SigmaPolicy::parse(manifest["sigma"].get<std::string>())
                                  : defaults.sigma;

    std::vector<Sequence> seqs;
    for (const json& jname : manifest["sequences"]) {
        const fs::path sdir = root / jname.get<std::string>();
        Sequence seq;
        seq.ann = load_annotations((sdir / "ann.json").string());
        for (std::size_t f = 0; f < seq.ann.frames.size(); ++f) {
            char fname[32];
            std::snprintf(fname, sizeof fname, "frame_%04zu.dmap", f);
            DensityMap raster = import_density((sdir / fname).string());
            require(raster.height() == seq.ann.height && raster.width() == seq.ann.width,
                    "dataset: raster size disagrees with annotations in " + sdir.string());
            seq.frames.push_back(raster.values.reshaped({1, raster.height(), raster.width()}));
        }
        seqs.push_back(std::move(seq));
    }
    return assemble(seqs, preset, t, stride, channels, sigma);
}

}  // namespace stdnet
