#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "microcustom/tensor.hpp"

namespace mc {

// Named-tensor store. On disk: <stem>.json manifest listing name/shape/dtype
// plus offsets into <stem>.bin, a raw little-endian f32 blob.
class TensorStore {
public:
    std::map<std::string, Tensor<float>> tensors;
    std::map<std::string, std::string> meta;

    void put(const std::string& name, Tensor<float> t) { tensors[name] = std::move(t); }

    Tensor<float>& get(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("tensor store: missing " + name);
        return it->second;
    }
    const Tensor<float>& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("tensor store: missing " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    uint64_t content_hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& [name, t] : tensors) {
            for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
            h = hash_combine(h, tensor_hash(t));
        }
        return h;
    }

    void save(const std::string& stem) const {
        nlohmann::json manifest;
        manifest["format"] = "microcustom-tensors-v1";
        manifest["meta"] = meta;
        nlohmann::json list = nlohmann::json::array();
        std::ofstream blob(stem + ".bin", std::ios::binary);
        if (!blob) throw std::runtime_error("cannot write " + stem + ".bin");
        uint64_t offset = 0;
        for (const auto& [name, t] : tensors) {
            nlohmann::json e;
            e["name"] = name;
            e["shape"] = t.shape;
            e["dtype"] = "f32";
            e["offset"] = offset;
            e["bytes"] = t.data.size() * sizeof(float);
            list.push_back(e);
            blob.write(reinterpret_cast<const char*>(t.data.data()),
                       static_cast<std::streamsize>(t.data.size() * sizeof(float)));
            offset += t.data.size() * sizeof(float);
        }
        manifest["tensors"] = list;
        std::ofstream mf(stem + ".json");
        if (!mf) throw std::runtime_error("cannot write " + stem + ".json");
        mf << manifest.dump(2) << "\n";
    }

    static TensorStore load(const std::string& stem) {
        std::ifstream mf(stem + ".json");
        if (!mf) throw std::runtime_error("cannot read " + stem + ".json");
        nlohmann::json manifest;
        mf >> manifest;
        if (manifest.value("format", "") != "microcustom-tensors-v1")
            throw std::runtime_error("unknown tensor store format in " + stem + ".json");
        TensorStore s;
        if (manifest.contains("meta"))
            s.meta = manifest["meta"].get<std::map<std::string, std::string>>();
        std::ifstream blob(stem + ".bin", std::ios::binary);
        if (!blob) throw std::runtime_error("cannot read " + stem + ".bin");
        for (const auto& e : manifest["tensors"]) {
            Tensor<float> t(e["shape"].get<std::vector<int64_t>>());
            blob.seekg(static_cast<std::streamoff>(e["offset"].get<uint64_t>()));
            blob.read(reinterpret_cast<char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(float)));
            if (!blob) throw std::runtime_error("truncated blob for " + e["name"].get<std::string>());
            s.tensors[e["name"].get<std::string>()] = std::move(t);
        }
        return s;
    }
};

}  // namespace mc
