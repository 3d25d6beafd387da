#include "gazeatt/data_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gazeatt {

namespace {

using nlohmann::json;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_finite(const std::vector<float>& data, const std::string& what) {
    for (float v : data)
        if (!std::isfinite(v)) throw std::invalid_argument(what + ": non-finite value");
}

// Raw payload I/O. Serialization is explicitly little-endian; on the
// little-endian targets we build for this is a straight memcpy.
void write_payload(const std::string& path, const std::vector<float>& data) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "unwritable path: " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    require(out.good(), "write failed: " + path);
}

std::vector<float> read_payload(const std::string& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    require(in.good(), "cannot open payload: " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_count * sizeof(float))
        throw std::invalid_argument("payload length mismatch: " + path + " has " +
                                    std::to_string(bytes) + " bytes, header implies " +
                                    std::to_string(expected_count * sizeof(float)));
    in.seekg(0);
    std::vector<float> data(expected_count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    require(in.good(), "read failed: " + path);
    for (float v : data)
        if (std::isnan(v)) throw std::invalid_argument("NaN in payload: " + path);
    return data;
}

json make_header(const std::string& kind, int channels, const Shape3& shape) {
    json h;
    h["kind"] = kind;
    h["dtype"] = "float32";
    h["byte_order"] = "little";
    h["order"] = "C";
    h["axes"] = "z=depth,y=width,x=height";
    h["channels"] = channels;
    h["shape"] = {shape[0], shape[1], shape[2]};
    return h;
}

void write_container(const std::string& path, const json& header,
                     const std::vector<float>& data) {
    check_finite(data, path);
    std::ofstream hdr(path + ".hdr.json");
    require(hdr.good(), "unwritable path: " + path + ".hdr.json");
    hdr << header.dump(2) << "\n";
    require(hdr.good(), "write failed: " + path + ".hdr.json");
    write_payload(path + ".raw", data);
}

json read_header(const std::string& path, const std::string& expected_kind,
                 int& channels, Shape3& shape) {
    std::ifstream hdr(path + ".hdr.json");
    require(hdr.good(), "cannot open header: " + path + ".hdr.json");
    json h = json::parse(hdr);
    if (h.at("dtype").get<std::string>() != "float32")
        throw std::invalid_argument("unknown dtype in " + path);
    if (!expected_kind.empty() && h.at("kind").get<std::string>() != expected_kind)
        throw std::invalid_argument("container kind mismatch in " + path + ": expected " +
                                    expected_kind);
    channels = h.at("channels").get<int>();
    auto s = h.at("shape");
    require(s.size() == 3, "bad shape in header: " + path);
    shape = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    return h;
}

}  // namespace

void ImageVolume::validate() const {
    require(channels >= 1, "ImageVolume: channels must be >= 1");
    for (int s : shape) require(s >= 1, "ImageVolume: all dimensions must be >= 1");
    require(data.size() == static_cast<std::size_t>(channels) * voxels(),
            "ImageVolume: data length != C*D*W*H");
    check_finite(data, "ImageVolume");
}

void SegmentationMask::validate(bool binary) const {
    require(regions >= 1, "SegmentationMask: regions must be >= 1");
    for (int s : shape) require(s >= 1, "SegmentationMask: all dimensions must be >= 1");
    require(data.size() == static_cast<std::size_t>(regions) * voxels(),
            "SegmentationMask: data length mismatch");
    for (float v : data) {
        if (binary)
            require(v == 0.0f || v == 1.0f, "SegmentationMask: ground truth must be {0,1}");
        else
            require(v >= 0.0f && v <= 1.0f, "SegmentationMask: values must lie in [0,1]");
    }
}

void GazeMap::validate() const {
    for (int s : shape) require(s >= 1, "GazeMap: all dimensions must be >= 1");
    require(data.size() == voxels(), "GazeMap: data length mismatch");
    for (float v : data)
        require(v >= 0.0f && v <= 1.0f, "GazeMap: values must lie in [0,1]");
}

void DatasetRecord::validate() const {
    volume.validate();
    require(mask.has_value() || labels.has_value(),
            "DatasetRecord: needs at least one of {mask, labels}");
    if (mask) {
        mask->validate(true);
        require(mask->shape == volume.shape, "DatasetRecord: mask shape != volume shape");
    }
    if (gaze_map) {
        gaze_map->validate();
        for (int a = 0; a < 3; ++a)
            require(gaze_map->shape[a] >= 1 && volume.shape[a] % gaze_map->shape[a] == 0,
                    "DatasetRecord: gaze map shape must divide volume shape");
    }
}

void write_volume(const ImageVolume& v, const std::string& path) {
    v.validate();
    json h = make_header("volume", v.channels, v.shape);
    if (v.spacing) h["spacing"] = {(*v.spacing)[0], (*v.spacing)[1], (*v.spacing)[2]};
    write_container(path, h, v.data);
}

ImageVolume read_volume(const std::string& path) {
    ImageVolume v;
    json h = read_header(path, "volume", v.channels, v.shape);
    if (h.contains("spacing")) {
        auto s = h["spacing"];
        v.spacing = std::array<float, 3>{s[0].get<float>(), s[1].get<float>(), s[2].get<float>()};
    }
    v.data = read_payload(path + ".raw",
                          static_cast<std::size_t>(v.channels) * v.voxels());
    v.validate();
    return v;
}

void write_mask(const SegmentationMask& m, const std::string& path) {
    m.validate(false);
    write_container(path, make_header("mask", m.regions, m.shape), m.data);
}

SegmentationMask read_mask(const std::string& path) {
    SegmentationMask m;
    read_header(path, "mask", m.regions, m.shape);
    m.data = read_payload(path + ".raw",
                          static_cast<std::size_t>(m.regions) * m.voxels());
    m.validate(false);
    return m;
}

void write_gaze_map(const GazeMap& g, const std::string& path) {
    g.validate();
    write_container(path, make_header("gaze_map", 1, g.shape), g.data);
}

GazeMap read_gaze_map(const std::string& path) {
    GazeMap g;
    int channels = 0;
    read_header(path, "gaze_map", channels, g.shape);
    require(channels == 1, "gaze map must be single channel: " + path);
    g.data = read_payload(path + ".raw", g.voxels());
    g.validate();
    return g;
}

void write_fixations(const FixationSequence& f, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "unwritable path: " + path);
    out << "t,x,y,z,duration\n";
    for (const auto& s : f.samples)
        out << s.t << "," << s.x << "," << s.y << "," << s.z << "," << s.duration << "\n";
    require(out.good(), "write failed: " + path);
}

FixationSequence read_fixations(const std::string& path, std::optional<Shape3> bounds) {
    std::ifstream in(path);
    require(in.good(), "cannot open fixations: " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "missing header row: " + path);
    // tolerate a trailing \r from CRLF files
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool has_z = true;
    if (line == "t,x,y,z,duration") has_z = true;
    else if (line == "t,x,y,duration") has_z = false;
    else throw std::invalid_argument("bad fixation header in " + path + ": " + line);

    FixationSequence seq;
    int row = 0;  // data rows, excluding the header
    double prev_t = -std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                double d = std::stod(field, &used);
                require(used == field.size(), "trailing junk");
                vals.push_back(d);
            } catch (const std::exception&) {
                throw std::invalid_argument("malformed row " + std::to_string(row) + " in " + path);
            }
        }
        const std::size_t want = has_z ? 5u : 4u;
        if (vals.size() != want)
            throw std::invalid_argument("malformed row " + std::to_string(row) + " in " + path);
        GazeSample s;
        s.t = vals[0];
        s.x = vals[1];
        s.y = vals[2];
        s.z = has_z ? vals[3] : 0.0;
        s.duration = vals[has_z ? 4 : 3];
        if (s.t <= prev_t)
            throw std::invalid_argument("non-monotonic t at row " + std::to_string(row) +
                                        " in " + path);
        prev_t = s.t;
        if (s.duration < 0)
            throw std::invalid_argument("negative duration at row " + std::to_string(row) +
                                        " in " + path);
        if (bounds) {
            const auto& b = *bounds;
            if (s.z < 0 || s.z >= b[0] || s.y < 0 || s.y >= b[1] || s.x < 0 || s.x >= b[2])
                throw std::invalid_argument("out-of-bounds coordinates at row " +
                                            std::to_string(row) + " in " + path);
        }
        s.kind = GazeSample::Kind::raw;
        seq.samples.push_back(s);
    }
    return seq;
}

}  // namespace gazeatt
