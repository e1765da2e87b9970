#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedio/tensor.hpp"

namespace tedio {

using json = nlohmann::ordered_json;

// TDT tensor dump: magic "TDT1", u32 LE header length, UTF-8 JSON header
// {"shape":[...],"dtype":"f32"|"f64","order":"C"}, raw little-endian payload.

template <class T>
void write_tdt(std::ostream& out, const TensorT<T>& t);
template <class T>
void write_tdt(const std::string& path, const TensorT<T>& t);

Tensor read_tdt(const std::string& path);
Tensor read_tdt(std::istream& in, const std::string& what);
TensorT<double> read_tdt_f64(const std::string& path);

// TDT container archive: magic "TDTC", u64 LE manifest length, manifest
// JSON {"config": ..., "tensors": [{"name","offset","bytes"}...]}, then the
// concatenated TDT records. Round trips bit-exactly.

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void write_container(const std::string& path, const json& config,
                     const std::vector<NamedTensor>& tensors);
std::pair<json, std::vector<NamedTensor>> read_container(const std::string& path);

// P5/P6 frame export; values mapped from [-1,1] to [0,255].
void write_pnm_frame(const std::string& path, const float* data, int64_t channels, int64_t height,
                     int64_t width);

}  // namespace tedio
