#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "transit/common.hpp"
#include "transit/encoder.hpp"
#include "transit/tensor.hpp"

namespace transit {

namespace detail {

inline const char* kB64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= bytes.size()) {
        std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += kB64Alphabet[v & 63];
        i += 3;
    }
    const std::size_t rem = bytes.size() - i;
    if (rem == 1) {
        std::uint32_t v = bytes[i] << 16;
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += "==";
    } else if (rem == 2) {
        std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& s) {
    if (s.size() % 4 != 0) throw CheckpointError("corrupt base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            char c = s[i + k];
            if (c == '=') {
                if (i + 4 != s.size() || k < 2) throw CheckpointError("corrupt base64 padding");
                ++pad;
                v <<= 6;
            } else {
                if (pad) throw CheckpointError("corrupt base64: data after padding");
                int d = b64_value(c);
                if (d < 0) throw CheckpointError(msg("corrupt base64: invalid character '", c, "'"));
                v = (v << 6) | static_cast<std::uint32_t>(d);
            }
        }
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
    return out;
}

inline std::string doubles_to_b64(const std::vector<double>& v) {
    std::vector<std::uint8_t> bytes(v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t u = std::bit_cast<std::uint64_t>(v[i]);
        for (int k = 0; k < 8; ++k) bytes[i * 8 + static_cast<std::size_t>(k)] =
            static_cast<std::uint8_t>((u >> (8 * k)) & 0xFF);  // little-endian
    }
    return base64_encode(bytes);
}

inline std::vector<double> b64_to_doubles(const std::string& s) {
    std::vector<std::uint8_t> bytes = base64_decode(s);
    if (bytes.size() % 8 != 0)
        throw CheckpointError("corrupt tensor payload: byte count not a multiple of 8");
    std::vector<double> v(bytes.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t u = 0;
        for (int k = 7; k >= 0; --k)
            u = (u << 8) | bytes[i * 8 + static_cast<std::size_t>(k)];
        v[i] = std::bit_cast<double>(u);
    }
    return v;
}

}  // namespace detail

inline constexpr int kCheckpointFormatVersion = 1;

// Writes {"format_version":1,"tensors":{name:{"shape":[...],"data_b64":...}}}.
// Keys serialize in sorted order, so save -> load -> save is byte-identical.
inline void save_tensors(const std::string& path,
                         const std::map<std::string, const Tensor*>& tensors) {
    nlohmann::json doc;
    doc["format_version"] = kCheckpointFormatVersion;
    nlohmann::json& t = doc["tensors"];
    t = nlohmann::json::object();
    for (const auto& [name, tensor] : tensors) {
        nlohmann::json entry;
        entry["shape"] = tensor->shape;
        entry["data_b64"] = detail::doubles_to_b64(tensor->data);
        t[name] = std::move(entry);
    }
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write checkpoint file: " + path);
    out << doc.dump(2) << "\n";
}

inline std::map<std::string, Tensor> load_tensors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw CheckpointError(detail::msg("corrupt checkpoint ", path, ": ", e.what()));
    }
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer())
        throw CheckpointError("checkpoint " + path + ": missing format_version");
    const int version = doc["format_version"].get<int>();
    if (version != kCheckpointFormatVersion)
        throw CheckpointError(detail::msg("checkpoint ", path, ": unsupported format_version ",
                                          version));
    if (!doc.contains("tensors") || !doc["tensors"].is_object())
        throw CheckpointError("checkpoint " + path + ": missing tensors object");
    std::map<std::string, Tensor> out;
    for (const auto& [name, entry] : doc["tensors"].items()) {
        if (!entry.contains("shape") || !entry.contains("data_b64"))
            throw CheckpointError(detail::msg("checkpoint ", path, ": tensor '", name,
                                              "' lacks shape or data"));
        std::vector<std::size_t> shape = entry["shape"].get<std::vector<std::size_t>>();
        std::vector<double> data;
        try {
            data = detail::b64_to_doubles(entry["data_b64"].get<std::string>());
        } catch (const CheckpointError& e) {
            throw CheckpointError(detail::msg("checkpoint ", path, ": tensor '", name, "': ",
                                              e.what()));
        }
        try {
            out.emplace(name, Tensor(std::move(shape), std::move(data)));
        } catch (const ShapeError& e) {
            throw CheckpointError(detail::msg("checkpoint ", path, ": tensor '", name, "': ",
                                              e.what()));
        }
    }
    return out;
}

// Copies checkpoint tensors into an existing parameter list; every parameter
// must be present with the exact shape. Nothing is mutated on failure.
inline void apply_tensors(const std::map<std::string, Tensor>& loaded, const ParamList& params,
                          const std::string& context) {
    for (const auto& p : params) {
        auto it = loaded.find(p.name);
        if (it == loaded.end())
            throw CheckpointError(context + ": missing tensor '" + p.name + "'");
        if (it->second.shape != p.tensor->shape)
            throw CheckpointError(detail::msg(context, ": tensor '", p.name, "' has shape ",
                                              shape_str(it->second.shape), ", expected ",
                                              shape_str(p.tensor->shape)));
    }
    for (const auto& p : params) *p.tensor = loaded.at(p.name);
}

inline void save_params(const std::string& path, const ParamList& params,
                        const std::map<std::string, Tensor>& extra = {}) {
    std::map<std::string, const Tensor*> m;
    for (const auto& p : params) m[p.name] = p.tensor;
    for (const auto& [name, t] : extra) m[name] = &t;
    save_tensors(path, m);
}

}  // namespace transit
