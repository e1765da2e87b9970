#include "tedio/tdt_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tedio {

namespace {

constexpr char kTdtMagic[4] = {'T', 'D', 'T', '1'};
constexpr char kContainerMagic[4] = {'T', 'D', 'T', 'C'};

template <class T>
const char* dtype_name() {
    return std::is_same_v<T, float> ? "f32" : "f64";
}

void fail_io(const std::string& what) { throw IoError(what); }

}  // namespace

template <class T>
void write_tdt(std::ostream& out, const TensorT<T>& t) {
    json header;
    header["shape"] = t.shape;
    header["dtype"] = dtype_name<T>();
    header["order"] = "C";
    const std::string h = header.dump();
    const uint32_t hlen = static_cast<uint32_t>(h.size());
    out.write(kTdtMagic, 4);
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(h.data(), hlen);
    out.write(reinterpret_cast<const char*>(t.ptr()), sizeof(T) * t.numel());
    if (!out) fail_io("tdt: write failed");
}

template <class T>
void write_tdt(const std::string& path, const TensorT<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail_io("tdt: cannot open for writing: " + path);
    write_tdt(f, t);
}

namespace {

template <class T>
TensorT<T> read_payload(std::istream& in, const Shape& shape, const std::string& what) {
    TensorT<T> t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()), sizeof(T) * t.numel());
    if (!in) fail_io("tdt: truncated payload in " + what);
    return t;
}

struct TdtHeader {
    Shape shape;
    std::string dtype;
};

TdtHeader read_header(std::istream& in, const std::string& what) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTdtMagic, 4) != 0) fail_io("tdt: bad magic in " + what);
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || hlen == 0 || hlen > (1u << 20)) fail_io("tdt: bad header length in " + what);
    std::string h(hlen, '\0');
    in.read(h.data(), hlen);
    if (!in) fail_io("tdt: truncated header in " + what);
    json j;
    try {
        j = json::parse(h);
    } catch (const std::exception& e) {
        fail_io("tdt: invalid header JSON in " + what + ": " + e.what());
    }
    TdtHeader out;
    out.shape = j.at("shape").get<Shape>();
    out.dtype = j.at("dtype").get<std::string>();
    if (j.at("order").get<std::string>() != "C") fail_io("tdt: unsupported order in " + what);
    return out;
}

}  // namespace

Tensor read_tdt(std::istream& in, const std::string& what) {
    const TdtHeader h = read_header(in, what);
    if (h.dtype == "f32") return read_payload<float>(in, h.shape, what);
    if (h.dtype == "f64") {
        TensorT<double> d = read_payload<double>(in, h.shape, what);
        Tensor t(h.shape);
        for (int64_t i = 0; i < t.numel(); ++i) t.ptr()[i] = static_cast<float>(d.ptr()[i]);
        return t;
    }
    fail_io("tdt: unknown dtype '" + h.dtype + "' in " + what);
    return {};
}

Tensor read_tdt(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail_io("tdt: missing file: " + path);
    return read_tdt(f, path);
}

TensorT<double> read_tdt_f64(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail_io("tdt: missing file: " + path);
    const TdtHeader h = read_header(f, path);
    if (h.dtype != "f64") fail_io("tdt: expected f64 in " + path);
    return read_payload<double>(f, h.shape, path);
}

void write_container(const std::string& path, const json& config,
                     const std::vector<NamedTensor>& tensors) {
    // serialize records first so the manifest can carry exact offsets
    std::ostringstream records;
    json index = json::array();
    for (const auto& [name, tensor] : tensors) {
        const int64_t offset = static_cast<int64_t>(records.tellp());
        write_tdt(records, tensor);
        const int64_t end = static_cast<int64_t>(records.tellp());
        index.push_back({{"name", name}, {"offset", offset}, {"bytes", end - offset}});
    }
    json manifest;
    manifest["config"] = config;
    manifest["tensors"] = index;
    const std::string m = manifest.dump();
    const uint64_t mlen = m.size();

    std::ofstream f(path, std::ios::binary);
    if (!f) fail_io("container: cannot open for writing: " + path);
    f.write(kContainerMagic, 4);
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(m.data(), static_cast<std::streamsize>(m.size()));
    const std::string r = records.str();
    f.write(r.data(), static_cast<std::streamsize>(r.size()));
    if (!f) fail_io("container: write failed: " + path);
}

std::pair<json, std::vector<NamedTensor>> read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail_io("container: missing file: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kContainerMagic, 4) != 0)
        fail_io("container: bad magic: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    if (!f || mlen == 0 || mlen > (1ull << 30)) fail_io("container: bad manifest length: " + path);
    std::string m(mlen, '\0');
    f.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!f) fail_io("container: truncated manifest: " + path);
    json manifest;
    try {
        manifest = json::parse(m);
    } catch (const std::exception& e) {
        fail_io("container: invalid manifest: " + path + ": " + e.what());
    }
    std::vector<NamedTensor> tensors;
    for (const auto& entry : manifest.at("tensors")) {
        NamedTensor nt;
        nt.name = entry.at("name").get<std::string>();
        nt.tensor = read_tdt(f, path + "#" + nt.name);
        tensors.push_back(std::move(nt));
    }
    return {manifest.at("config"), std::move(tensors)};
}

void write_pnm_frame(const std::string& path, const float* data, int64_t channels, int64_t height,
                     int64_t width) {
    if (channels != 1 && channels != 3)
        throw UsageError("pnm: only 1 or 3 channels supported, got " + std::to_string(channels));
    std::ofstream f(path, std::ios::binary);
    if (!f) fail_io("pnm: cannot open for writing: " + path);
    f << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(width * channels));
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x)
            for (int64_t c = 0; c < channels; ++c) {
                // data layout is [C,H,W]
                const float v = data[c * height * width + y * width + x];
                const float clamped = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
                row[static_cast<size_t>(x * channels + c)] =
                    static_cast<unsigned char>(clamped * 255.0f + 0.5f);
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) fail_io("pnm: write failed: " + path);
}

template void write_tdt<float>(std::ostream&, const TensorT<float>&);
template void write_tdt<double>(std::ostream&, const TensorT<double>&);
template void write_tdt<float>(const std::string&, const TensorT<float>&);
template void write_tdt<double>(const std::string&, const TensorT<double>&);

}  // namespace tedio
