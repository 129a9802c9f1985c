#include "doll/formats.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

namespace doll {

std::string format_real(real x) {
    if (!std::isfinite(x)) throw ConfigError("non-canonicalizable value: non-finite real");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::string sha256_hex(const void* data, size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    EVP_Digest(data, n, md, &md_len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string canonical_kv(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::string digest_kv(const std::map<std::string, std::string>& kv) {
    return sha256_hex(canonical_kv(kv));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<uint8_t>& out, real v) {
    uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

namespace {
void need(const std::vector<uint8_t>& in, size_t off, size_t n, const char* what) {
    if (off + n > in.size()) {
        char msg[128];
        std::snprintf(msg, sizeof(msg), "truncated %s at offset %zu (need %zu bytes, have %zu)",
                      what, off, n, in.size() - off);
        throw FormatError(msg);
    }
}
}  // namespace

uint16_t get_u16(const std::vector<uint8_t>& in, size_t& off) {
    need(in, off, 2, "u16");
    uint16_t v = static_cast<uint16_t>(in[off] | (in[off + 1] << 8));
    off += 2;
    return v;
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t& off) {
    need(in, off, 4, "u32");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[off + i]) << (8 * i);
    off += 4;
    return v;
}

real get_f64(const std::vector<uint8_t>& in, size_t& off) {
    need(in, off, 8, "f64");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(in[off + i]) << (8 * i);
    off += 8;
    return std::bit_cast<real>(bits);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("cannot open: " + path);
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw FormatError("short read: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write: " + path);
}

static constexpr char kArrayMagic[4] = {'D', 'C', 'K', 'P'};
static constexpr uint16_t kArrayVersion = 1;

std::vector<uint8_t> encode_arrays(const ArrayFile& f) {
    nlohmann::json header = f.header;
    nlohmann::json arr_list = nlohmann::json::array();
    for (const auto& a : f.arrays) {
        if (a.data.size() != a.elem_count())
            throw FormatError("array '" + a.name + "': data size does not match shape");
        arr_list.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    header["arrays"] = arr_list;
    const std::string hjson = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kArrayMagic, kArrayMagic + 4);
    put_u16(out, kArrayVersion);
    put_u32(out, static_cast<uint32_t>(hjson.size()));
    out.insert(out.end(), hjson.begin(), hjson.end());
    for (const auto& a : f.arrays)
        for (real v : a.data) put_f64(out, v);
    return out;
}

ArrayFile decode_arrays(const std::vector<uint8_t>& bytes) {
    size_t off = 0;
    need(bytes, off, 4, "magic");
    if (std::memcmp(bytes.data(), kArrayMagic, 4) != 0)
        throw FormatError("bad magic at offset 0 (expected DCKP)");
    off = 4;
    uint16_t ver = get_u16(bytes, off);
    if (ver != kArrayVersion)
        throw FormatError("unsupported container version " + std::to_string(ver) + " at offset 4");
    uint32_t hlen = get_u32(bytes, off);
    need(bytes, off, hlen, "header json");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<long>(off),
                                       bytes.begin() + static_cast<long>(off + hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid header json: ") + e.what());
    }
    off += hlen;

    ArrayFile f;
    for (const auto& a : header.at("arrays")) {
        NamedArray na;
        na.name = a.at("name").get<std::string>();
        na.shape = a.at("shape").get<std::vector<int>>();
        na.data.resize(na.elem_count());
        for (real& v : na.data) v = get_f64(bytes, off);
        f.arrays.push_back(std::move(na));
    }
    header.erase("arrays");
    f.header = std::move(header);
    if (off != bytes.size()) throw FormatError("trailing bytes at offset " + std::to_string(off));
    return f;
}

void write_arrays(const std::string& path, const ArrayFile& f) {
    write_file_bytes(path, encode_arrays(f));
}

ArrayFile read_arrays(const std::string& path) {
    try {
        return decode_arrays(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::string params_digest(const std::vector<NamedArray>& arrays) {
    std::vector<uint8_t> buf;
    for (const auto& a : arrays) {
        buf.insert(buf.end(), a.name.begin(), a.name.end());
        buf.push_back(0);
        for (int d : a.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (real v : a.data) put_f64(buf, v);
    }
    return sha256_hex(buf.data(), buf.size());
}

}  // namespace doll
