#pragma once

#include "doll/core.hpp"

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace doll {

// --- canonical serialization + digests ------------------------------------

/// Shortest round-trip decimal for a real; throws ConfigError on non-finite
/// values (they have no canonical form).
std::string format_real(real x);

std::string sha256_hex(const void* data, size_t n);
std::string sha256_hex(const std::string& s);

/// Canonical form of a flat key-value config: lines "key=value\n" with keys
/// sorted bytewise. The empty config canonicalizes to the empty string.
std::string canonical_kv(const std::map<std::string, std::string>& kv);

std::string digest_kv(const std::map<std::string, std::string>& kv);

// --- named-array container (checkpoints, weights) --------------------------
//
// Layout (little-endian): magic "DCKP", u16 version=1, u32 JSON header
// length, header bytes, then each array's data as raw IEEE-754 binary64 in
// header order. The header lists arrays as {name, shape} and carries
// artifact metadata: {kind, arch_id, tags, seed, config_digest, ...}.

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<real> data;

    size_t elem_count() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

struct ArrayFile {
    nlohmann::json header;
    std::vector<NamedArray> arrays;
};

std::vector<uint8_t> encode_arrays(const ArrayFile& f);
ArrayFile decode_arrays(const std::vector<uint8_t>& bytes);

void write_arrays(const std::string& path, const ArrayFile& f);
ArrayFile read_arrays(const std::string& path);

/// Digest over names, shapes, and raw values; flipping one bit of one
/// parameter changes it.
std::string params_digest(const std::vector<NamedArray>& arrays);

// --- low-level little-endian helpers (shared with the mask codec) ----------

void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_f64(std::vector<uint8_t>& out, real v);
uint16_t get_u16(const std::vector<uint8_t>& in, size_t& off);
uint32_t get_u32(const std::vector<uint8_t>& in, size_t& off);
real get_f64(const std::vector<uint8_t>& in, size_t& off);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace doll
