#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "subnetcl/mask.hpp"

namespace subnetcl {

/// All task masks packed per weight into one T-bit symbol, then Huffman coded.
/// Canonical codes: the codebook round-trips through code lengths alone.
struct EncodedTicketBundle {
    std::uint8_t num_tasks = 0;   // symbol width in bits
    std::vector<std::uint64_t> layer_numel;
    std::map<std::uint64_t, std::uint8_t> code_lengths;  // symbol -> canonical length
    std::uint64_t payload_bits = 0;
    std::vector<std::uint8_t> payload;
    std::uint32_t checksum = 0;   // CRC32 of payload bytes
};

struct CapacityReport {
    double sparsity = 0.0;          // S: zero fraction of the accumulated mask
    double compression_rate = 0.0;  // alpha: 1 - payload_bits / (T * numel)
    int num_tasks = 0;
    double cap_formula = 0.0;       // (1 - S) + (1 - alpha) * T / 32
    double cap_measured = 0.0;      // (1 - S) + payload_bits / (32 * numel)
};

/// symbol_j = sum_t m_t[j] * 2^(T - t); task 1 occupies the most significant bit.
std::vector<std::uint64_t> pack_symbols(const std::vector<TaskMask>& masks);

EncodedTicketBundle huffman_encode(const std::vector<std::uint64_t>& symbols,
                                   const std::vector<std::uint64_t>& layer_numel,
                                   std::uint8_t symbol_width);
EncodedTicketBundle encode_masks(const std::vector<TaskMask>& masks);

std::vector<std::uint64_t> huffman_decode(const EncodedTicketBundle& bundle);
/// Reconstructs every TaskMask from a bundle; shapes restore row/col layout.
std::vector<TaskMask> decode_masks(const EncodedTicketBundle& bundle,
                                   const std::vector<MaskShape>& shapes,
                                   double capacity_pct = 0.0);

CapacityReport capacity(const std::vector<TaskMask>& masks,
                        const EncodedTicketBundle* bundle = nullptr);
/// CAP from already-known quantities; used by the formula oracle tests.
double cap_formula(double sparsity, double alpha, int num_tasks);

void write_bundle(const EncodedTicketBundle& bundle, const std::filesystem::path& path);
EncodedTicketBundle read_bundle(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);

}  // namespace subnetcl
