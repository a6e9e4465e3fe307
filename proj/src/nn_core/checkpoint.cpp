// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "phymt/nn_core.hpp"

namespace phymt::nn {

namespace {

constexpr char kMagic[] = "PHYMTCKPT1";
constexpr std::size_t kMagicLen = 10;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    const char* take(std::size_t n) {
        if (n > data_.size() - pos_) fail(ErrorKind::kCorruptFile, "checkpoint: truncated file");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        std::memcpy(&v, take(8), 8);
        return v;
    }
    double f64() {
        double v;
        std::memcpy(&v, take(8), 8);
        return v;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, nlohmann::json manifest, const ParamList& params,
                      const std::vector<std::pair<std::string, const lora::QuantizedMatrix*>>& quantized) {
    manifest["format"] = "phymt-checkpoint";
    manifest["version"] = 1;
    nlohmann::json plist = nlohmann::json::array();
    for (const Param* p : params) plist.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    manifest["params"] = plist;
    nlohmann::json qlist = nlohmann::json::array();
    for (const auto& [name, q] : quantized) {
        if (q->bits != 4) fail(ErrorKind::kInvalidInput, "write_checkpoint: only 4-bit sections are supported");
        qlist.push_back({{"name", name}, {"rows", q->rows}, {"cols", q->cols}, {"bits", q->bits}});
    }
    manifest["quantized"] = qlist;

    const std::string text = manifest.dump();
    std::string out(kMagic, kMagicLen);
    put_u64(out, text.size());
    out += text;
    for (const Param* p : params) {
        for (Eigen::Index i = 0; i < p->size(); ++i) put_f64(out, p->value.data()[i]);
    }
    for (const auto& [name, q] : quantized) {
        out.push_back(static_cast<char>(q->bits));
        put_f64(out, q->sigma);
        const auto packed = lora::pack_nibbles(*q);
        out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::kIo, "write_checkpoint: cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorKind::kIo, "write_checkpoint: write failed for " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::kIo, "read_checkpoint: cannot open " + path.string());
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
    if (std::memcmp(r.take(kMagicLen), kMagic, kMagicLen) != 0) fail(ErrorKind::kFormat, "read_checkpoint: bad magic");
    const std::uint64_t len = r.u64();
    CheckpointData out;
    try {
        const char* p = r.take(len);
        out.manifest = nlohmann::json::parse(p, p + len);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kCorruptFile, std::string("read_checkpoint: manifest: ") + e.what());
    }
    for (const auto& e : out.manifest.at("params")) {
        RealMatrix m(e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>());
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
        out.values.push_back(std::move(m));
    }
    for (const auto& e : out.manifest.at("quantized")) {
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const int bits = static_cast<unsigned char>(*r.take(1));
        if (bits != 4) fail(ErrorKind::kCorruptFile, "read_checkpoint: unsupported bit width");
        const double sigma = r.f64();
        const auto n = static_cast<std::size_t>((rows * cols + 1) / 2);
        const char* bytes = r.take(n);
        std::vector<std::uint8_t> packed(bytes, bytes + n);
        out.quantized.push_back(lora::unpack_nibbles(packed, rows, cols, sigma));
    }
    if (!r.done()) fail(ErrorKind::kCorruptFile, "read_checkpoint: trailing bytes");
    return out;
}

}  // namespace phymt::nn
