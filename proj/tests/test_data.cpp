#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stdnet/data.hpp"
#include "stdnet/rng.hpp"

using namespace stdnet;

namespace {

std::filesystem::path temp_dir() {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("stdnet_test_" + std::to_string(counter++));
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("binary primitives are little-endian and round-trip") {
    std::stringstream ss;
    write_u32(ss, 0x01020304u);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4);
    CHECK(static_cast<unsigned char>(bytes[0]) == 0x04);
    CHECK(static_cast<unsigned char>(bytes[3]) == 0x01);
    ss.seekg(0);
    CHECK(read_u32(ss) == 0x01020304u);

    std::stringstream fs;
    write_f32(fs, 1.5f);
    write_f32(fs, -0.0f);
    CHECK(read_f32(fs) == 1.5f);
    CHECK(std::signbit(read_f32(fs)));

    std::stringstream ls;
    write_lp_string(ls, "hello");
    write_lp_string(ls, "");
    CHECK(read_lp_string(ls) == "hello");
    CHECK(read_lp_string(ls).empty());
}

TEST_CASE("tensor f32 serialization round-trips") {
    Rng rng(61);
    Tensor t = Tensor::zeros({2, 3, 4});
    for (i64 i = 0; i < t.numel(); ++i)
        t[i] = static_cast<double>(static_cast<float>(rng.normal()));
    std::stringstream ss;
    write_tensor_f32(ss, t);
    Tensor u = read_tensor_f32(ss);
    REQUIRE(u.rank() == 3);
    CHECK(u.dim(2) == 4);
    for (i64 i = 0; i < t.numel(); ++i) CHECK(u[i] == t[i]);  // exact at f32 values
}

TEST_CASE("dmap files round-trip f32 exactly") {
    Rng rng(62);
    Tensor v = Tensor::zeros({5, 7});
    for (i64 i = 0; i < v.numel(); ++i)
        v[i] = static_cast<double>(static_cast<float>(rng.uniform()));
    const auto dir = temp_dir();
    const std::string path = (dir / "map.dmap").string();
    export_density(DensityMap{v}, path, DensityFormat::dmap);
    DensityMap in = import_density(path);
    REQUIRE(in.height() == 5);
    REQUIRE(in.width() == 7);
    for (i64 i = 0; i < v.numel(); ++i) CHECK(in.values[i] == v[i]);

    // Magic check: corrupting the header must be rejected.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(import_density(path), std::invalid_argument);
}

TEST_CASE("csv density export writes one row per line") {
    Tensor v = Tensor::zeros({2, 3});
    for (i64 i = 0; i < 6; ++i) v[i] = static_cast<double>(i) / 4.0;
    const auto dir = temp_dir();
    const std::string path = (dir / "map.csv").string();
    export_density(DensityMap{v}, path, DensityFormat::csv);
    std::ifstream in(path);
    std::string line1, line2, extra;
    REQUIRE(static_cast<bool>(std::getline(in, line1)));
    REQUIRE(static_cast<bool>(std::getline(in, line2)));
    CHECK_FALSE(static_cast<bool>(std::getline(in, extra)));
    CHECK(line1 == "0,0.25,0.5");
    CHECK(line2 == "0.75,1,1.25");
}

TEST_CASE("annotation json round-trips and validates") {
    AnnotationFile ann;
    ann.height = 10;
    ann.width = 12;
    DotAnnotations f0;
    f0.frame_id = 3;
    f0.height = 10;
    f0.width = 12;
    f0.points = {{0.0, 0.0}, {11.0, 9.5}};
    ann.frames = {f0};
    AnnotationFile back = parse_annotations(annotations_to_json(ann));
    REQUIRE(back.frames.size() == 1);
    CHECK(back.height == 10);
    CHECK(back.frames[0].frame_id == 3);
    CHECK(back.frames[0].points[1].x == 11.0);
    CHECK(back.frames[0].points[1].y == 9.5);
}

TEST_CASE("annotation parsing rejects out-of-bounds points naming the frame") {
    const std::string text = R"({"size":[8,8],"frames":[
        {"id":0,"points":[[1.0,2.0]]},
        {"id":7,"points":[[3.0,3.0],[8.0,1.0]]}]})";
    try {
        parse_annotations(text);
        CHECK(false);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("frame 7") != std::string::npos);
        CHECK(msg.find("point 1") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_annotations("{not json"), std::invalid_argument);
    CHECK_THROWS_AS(parse_annotations(R"({"frames":[]})"), std::invalid_argument);
}

TEST_CASE("clip windows take the last frame's annotation") {
    Rng rng(63);
    std::vector<Tensor> frames;
    std::vector<DotAnnotations> anns;
    for (int i = 0; i < 6; ++i) {
        Tensor f = Tensor::full({1, 4, 4}, static_cast<double>(i));
        frames.push_back(f);
        DotAnnotations a;
        a.frame_id = i;
        a.height = 4;
        a.width = 4;
        a.points = {{static_cast<double>(i % 4), 1.0}};
        anns.push_back(a);
    }
    std::vector<Clip> clips = make_clips(frames, anns, 4, 1);
    REQUIRE(clips.size() == 3);
    CHECK(clips[0].frames.size() == 4);
    CHECK(clips[0].ann.frame_id == 3);
    CHECK(clips[2].ann.frame_id == 5);
    CHECK(clips[1].frames[0][0] == 1.0);

    std::vector<Clip> strided = make_clips(frames, anns, 4, 2);
    REQUIRE(strided.size() == 2);
    CHECK(strided[1].ann.frame_id == 5);
    CHECK_THROWS_AS(make_clips(frames, anns, 7, 1), std::invalid_argument);
}

TEST_CASE("synthetic generation is deterministic and flip-safe") {
    SynthSpec spec;
    spec.seed = 9;
    spec.sequences = 4;
    ClipDataset a = gen_synthetic(spec);
    ClipDataset b = gen_synthetic(spec);
    REQUIRE(a.clips.size() == b.clips.size());
    REQUIRE(!a.clips.empty());
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        for (std::size_t t = 0; t < a.clips[i].frames.size(); ++t)
            for (i64 j = 0; j < a.clips[i].frames[t].numel(); ++j)
                CHECK(a.clips[i].frames[t][j] == b.clips[i].frames[t][j]);
        for (i64 j = 0; j < a.clips[i].gt.values.numel(); ++j)
            CHECK(a.clips[i].gt.values[j] == b.clips[i].gt.values[j]);
        // Annotation points stay inside [0.5, dim - 1.5] so a horizontal
        // mirror keeps them in bounds.
        for (const Point& p : a.clips[i].ann.points) {
            CHECK(p.x >= 0.5);
            CHECK(p.x <= static_cast<double>(spec.width) - 1.5);
            CHECK(p.y >= 0.5);
            CHECK(p.y <= static_cast<double>(spec.height) - 1.5);
        }
    }
    spec.seed = 10;
    ClipDataset c = gen_synthetic(spec);
    bool differs = false;
    for (i64 j = 0; j < c.clips[0].frames[0].numel() && !differs; ++j)
        differs = c.clips[0].frames[0][j] != a.clips[0].frames[0][j];
    CHECK(differs);
}

TEST_CASE("synthetic dataset writes and loads identically") {
    SynthSpec spec;
    spec.seed = 11;
    spec.sequences = 3;
    const auto dir = temp_dir();
    write_synthetic_dataset(spec, dir.string());
    CHECK(std::filesystem::exists(dir / "dataset.json"));
    ClipDataset direct = gen_synthetic(spec);
    ClipDataset loaded = load_dataset(dir.string());
    REQUIRE(loaded.clips.size() == direct.clips.size());
    CHECK(loaded.t == direct.t);
    CHECK(loaded.height == direct.height);
    for (std::size_t i = 0; i < loaded.clips.size(); ++i) {
        CHECK(loaded.clips[i].ann.points.size() == direct.clips[i].ann.points.size());
        // Frames round-trip through f32 storage.
        for (std::size_t t = 0; t < loaded.clips[i].frames.size(); ++t)
            for (i64 j = 0; j < loaded.clips[i].frames[t].numel(); ++j)
                CHECK(loaded.clips[i].frames[t][j] ==
                      doctest::Approx(direct.clips[i].frames[t][j]).epsilon(1e-6));
        CHECK(loaded.clips[i].gt.count() ==
              doctest::Approx(direct.clips[i].gt.count()).epsilon(1e-9));
    }
}

TEST_CASE("synth spec json round-trips and validates") {
    SynthSpec spec;
    spec.seed = 3;
    spec.sequences = 7;
    spec.t = 4;
    spec.frames_per_seq = 6;
    SynthSpec back = SynthSpec::from_json_text(spec.to_json());
    CHECK(back.seed == 3);
    CHECK(back.sequences == 7);
    CHECK(back.t == 4);
    CHECK_THROWS_AS(SynthSpec::from_json_text(R"({"t": 9, "frames_per_seq": 4})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(SynthSpec::from_json_text("[1,2]"), std::invalid_argument);
}

TEST_CASE("presets bundle clip depth and sigma policy") {
    PresetDefaults ucsd = preset_defaults("ucsd-like");
    CHECK(ucsd.t == 10);
    CHECK(ucsd.sigma.kind == SigmaPolicy::Kind::fixed);
    CHECK(ucsd.sigma.sigma == 3.0);
    PresetDefaults mall = preset_defaults("mall-like");
    CHECK(mall.t == 8);
    CHECK(mall.channels == 3);
    CHECK(mall.sigma.kind == SigmaPolicy::Kind::adaptive);
    PresetDefaults expo = preset_defaults("expo-like");
    CHECK(expo.t == 5);
    CHECK(expo.sigma.kind == SigmaPolicy::Kind::fixed);
    CHECK_THROWS_AS(preset_defaults("imaginary"), std::invalid_argument);
}
