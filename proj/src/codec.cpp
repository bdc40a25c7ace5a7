#include "subnetcl/codec.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <queue>

#include <zlib.h>

#include "subnetcl/error.hpp"

namespace subnetcl {

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint64_t> pack_symbols(const std::vector<TaskMask>& masks) {
    if (masks.empty()) throw ConfigError("pack_symbols: no masks");
    if (masks.size() > 64) throw ConfigError("pack_symbols: more than 64 tasks");
    const auto T = masks.size();
    for (const auto& m : masks)
        if (m.shapes != masks[0].shapes) throw DimensionError("pack_symbols: shape mismatch");
    std::vector<std::uint64_t> symbols(masks[0].numel(), 0);
    std::size_t off = 0;
    for (std::size_t l = 0; l < masks[0].layers.size(); ++l) {
        std::size_t n = masks[0].layers[l].size();
        for (std::size_t t = 0; t < T; ++t) {
            std::uint64_t bit = std::uint64_t{1} << (T - 1 - t);
            const auto& bits = masks[t].layers[l];
            for (std::size_t i = 0; i < n; ++i)
                if (bits[i]) symbols[off + i] |= bit;
        }
        off += n;
    }
    return symbols;
}

namespace {

struct CanonicalCodes {
    std::map<std::uint64_t, std::uint8_t> lengths;
    std::map<std::uint64_t, std::pair<std::uint64_t, std::uint8_t>> codes;  // symbol -> (code, len)
};

std::map<std::uint64_t, std::uint8_t> huffman_lengths(
    const std::map<std::uint64_t, std::uint64_t>& freq) {
    std::map<std::uint64_t, std::uint8_t> lengths;
    if (freq.size() == 1) {
        lengths[freq.begin()->first] = 1;
        return lengths;
    }
    struct Node {
        std::uint64_t weight;
        std::uint64_t order;  // deterministic tiebreak
        int left = -1, right = -1;
        std::uint64_t symbol = 0;
        bool leaf = false;
    };
    std::vector<Node> nodes;
    auto cmp = [&nodes](int a, int b) {
        if (nodes[a].weight != nodes[b].weight) return nodes[a].weight > nodes[b].weight;
        return nodes[a].order > nodes[b].order;
    };
    std::priority_queue<int, std::vector<int>, decltype(cmp)> heap(cmp);
    std::uint64_t order = 0;
    for (const auto& [sym, count] : freq) {
        nodes.push_back({count, order++, -1, -1, sym, true});
        heap.push(static_cast<int>(nodes.size() - 1));
    }
    while (heap.size() > 1) {
        int a = heap.top(); heap.pop();
        int b = heap.top(); heap.pop();
        nodes.push_back({nodes[a].weight + nodes[b].weight, order++, a, b, 0, false});
        heap.push(static_cast<int>(nodes.size() - 1));
    }
    // Depth-first walk assigns lengths.
    std::vector<std::pair<int, std::uint8_t>> stack{{heap.top(), 0}};
    while (!stack.empty()) {
        auto [idx, depth] = stack.back();
        stack.pop_back();
        if (nodes[idx].leaf) {
            lengths[nodes[idx].symbol] = depth;
        } else {
            stack.push_back({nodes[idx].left, static_cast<std::uint8_t>(depth + 1)});
            stack.push_back({nodes[idx].right, static_cast<std::uint8_t>(depth + 1)});
        }
    }
    return lengths;
}

CanonicalCodes canonicalize(const std::map<std::uint64_t, std::uint8_t>& lengths) {
    CanonicalCodes cc;
    cc.lengths = lengths;
    std::vector<std::pair<std::uint64_t, std::uint8_t>> order(lengths.begin(), lengths.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    std::uint64_t code = 0;
    std::uint8_t prev_len = 0;
    for (const auto& [sym, len] : order) {
        code <<= (len - prev_len);
        cc.codes[sym] = {code, len};
        ++code;
        prev_len = len;
    }
    return cc;
}

class BitWriter {
  public:
    void put(std::uint64_t code, std::uint8_t len) {
        for (int b = len - 1; b >= 0; --b) {
            if (bit_ == 0) bytes_.push_back(0);
            if ((code >> b) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> bit_);
            bit_ = (bit_ + 1) % 8;
            ++total_;
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }
    std::uint64_t bits() const { return total_; }

  private:
    std::vector<std::uint8_t> bytes_;
    unsigned bit_ = 0;
    std::uint64_t total_ = 0;
};

class BitReader {
  public:
    BitReader(const std::vector<std::uint8_t>& bytes, std::uint64_t nbits)
        : bytes_(bytes), nbits_(nbits) {}
    int next() {
        if (pos_ >= nbits_) return -1;
        std::uint8_t byte = bytes_[pos_ / 8];
        int bit = (byte >> (7 - pos_ % 8)) & 1;
        ++pos_;
        return bit;
    }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::uint64_t nbits_;
    std::uint64_t pos_ = 0;
};

}  // namespace

EncodedTicketBundle huffman_encode(const std::vector<std::uint64_t>& symbols,
                                   const std::vector<std::uint64_t>& layer_numel,
                                   std::uint8_t symbol_width) {
    if (symbols.empty()) throw ConfigError("huffman_encode: empty symbol stream");
    std::map<std::uint64_t, std::uint64_t> freq;
    for (auto s : symbols) ++freq[s];
    auto cc = canonicalize(huffman_lengths(freq));

    BitWriter writer;
    for (auto s : symbols) {
        auto [code, len] = cc.codes.at(s);
        writer.put(code, len);
    }
    EncodedTicketBundle bundle;
    bundle.num_tasks = symbol_width;
    bundle.layer_numel = layer_numel;
    bundle.code_lengths = cc.lengths;
    bundle.payload_bits = writer.bits();
    bundle.payload = writer.take();
    bundle.checksum = crc32_of(bundle.payload);
    return bundle;
}

EncodedTicketBundle encode_masks(const std::vector<TaskMask>& masks) {
    auto symbols = pack_symbols(masks);
    std::vector<std::uint64_t> numel;
    for (const auto& s : masks[0].shapes) numel.push_back(s.numel());
    return huffman_encode(symbols, numel, static_cast<std::uint8_t>(masks.size()));
}

std::vector<std::uint64_t> huffman_decode(const EncodedTicketBundle& bundle) {
    if (crc32_of(bundle.payload) != bundle.checksum)
        throw IntegrityError("huffman_decode: checksum mismatch");
    if (bundle.payload_bits > bundle.payload.size() * 8)
        throw IntegrityError("huffman_decode: payload shorter than declared bit length");
    auto cc = canonicalize(bundle.code_lengths);
    // Invert to (len, code) -> symbol for bit-at-a-time canonical decoding.
    std::map<std::pair<std::uint8_t, std::uint64_t>, std::uint64_t> decode_map;
    for (const auto& [sym, cl] : cc.codes) decode_map[{cl.second, cl.first}] = sym;

    std::uint64_t expected = 0;
    for (auto n : bundle.layer_numel) expected += n;

    std::vector<std::uint64_t> symbols;
    symbols.reserve(expected);
    BitReader reader(bundle.payload, bundle.payload_bits);
    std::uint64_t code = 0;
    std::uint8_t len = 0;
    while (symbols.size() < expected) {
        int bit = reader.next();
        if (bit < 0) throw IntegrityError("huffman_decode: payload truncated");
        code = (code << 1) | static_cast<std::uint64_t>(bit);
        ++len;
        auto it = decode_map.find({len, code});
        if (it != decode_map.end()) {
            symbols.push_back(it->second);
            code = 0;
            len = 0;
        } else if (len >= 64) {
            throw IntegrityError("huffman_decode: no code matches payload");
        }
    }
    return symbols;
}

std::vector<TaskMask> decode_masks(const EncodedTicketBundle& bundle,
                                   const std::vector<MaskShape>& shapes,
                                   double capacity_pct) {
    auto symbols = huffman_decode(bundle);
    std::size_t T = bundle.num_tasks;
    std::vector<TaskMask> masks(T);
    for (std::size_t t = 0; t < T; ++t) {
        masks[t].shapes = shapes;
        masks[t].capacity_pct = capacity_pct;
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        std::size_t n = shapes[l].numel();
        if (l >= bundle.layer_numel.size() || bundle.layer_numel[l] != n)
            throw DimensionError("decode_masks: shapes disagree with the bundle layer table");
        for (std::size_t t = 0; t < T; ++t) {
            auto& bits = masks[t].layers.emplace_back(n, std::uint8_t{0});
            std::uint64_t bit = std::uint64_t{1} << (T - 1 - t);
            for (std::size_t i = 0; i < n; ++i)
                bits[i] = (symbols[off + i] & bit) ? 1 : 0;
        }
        off += n;
    }
    return masks;
}

double cap_formula(double sparsity, double alpha, int num_tasks) {
    return (1.0 - sparsity) + (1.0 - alpha) * static_cast<double>(num_tasks) / 32.0;
}

CapacityReport capacity(const std::vector<TaskMask>& masks, const EncodedTicketBundle* bundle) {
    CapacityReport report;
    if (masks.empty()) {
        report.sparsity = 1.0;
        return report;  // empty training: CAP == 0
    }
    AccumMask acc = empty_accum(masks[0].shapes);
    for (const auto& m : masks) acc = accumulate(acc, m);
    const auto numel = static_cast<double>(acc.numel());
    report.sparsity = 1.0 - static_cast<double>(acc.popcount()) / numel;
    report.num_tasks = static_cast<int>(masks.size());

    EncodedTicketBundle local;
    if (!bundle) {
        local = encode_masks(masks);
        bundle = &local;
    }
    double raw_bits = static_cast<double>(masks.size()) * numel;
    report.compression_rate = 1.0 - static_cast<double>(bundle->payload_bits) / raw_bits;
    report.cap_formula = cap_formula(report.sparsity, report.compression_rate, report.num_tasks);
    report.cap_measured =
        (1.0 - report.sparsity) + static_cast<double>(bundle->payload_bits) / (32.0 * numel);
    return report;
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw IntegrityError("bundle: truncated header");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return value;
}

constexpr std::uint8_t kVersion = 1;

}  // namespace

void write_bundle(const EncodedTicketBundle& bundle, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'W', 'S', 'N', 'T'});
    out.push_back(kVersion);
    out.push_back(bundle.num_tasks);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.layer_numel.size()));
    for (auto n : bundle.layer_numel) put_le<std::uint64_t>(out, n);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(bundle.code_lengths.size()));
    for (const auto& [sym, len] : bundle.code_lengths) {
        put_le<std::uint64_t>(out, sym);
        out.push_back(len);
    }
    put_le<std::uint64_t>(out, bundle.payload_bits);
    out.insert(out.end(), bundle.payload.begin(), bundle.payload.end());
    put_le<std::uint32_t>(out, bundle.checksum);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("write_bundle: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

EncodedTicketBundle read_bundle(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("read_bundle: cannot open " + path.string());
    std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (in.size() < 4 || std::memcmp(in.data(), "WSNT", 4) != 0)
        throw IntegrityError("read_bundle: bad magic");
    pos = 4;
    auto version = get_le<std::uint8_t>(in, pos);
    if (version != kVersion) throw IntegrityError("read_bundle: unsupported version");
    EncodedTicketBundle bundle;
    bundle.num_tasks = get_le<std::uint8_t>(in, pos);
    auto layer_count = get_le<std::uint32_t>(in, pos);
    for (std::uint32_t i = 0; i < layer_count; ++i)
        bundle.layer_numel.push_back(get_le<std::uint64_t>(in, pos));
    auto entries = get_le<std::uint16_t>(in, pos);
    for (std::uint16_t i = 0; i < entries; ++i) {
        auto sym = get_le<std::uint64_t>(in, pos);
        bundle.code_lengths[sym] = get_le<std::uint8_t>(in, pos);
    }
    bundle.payload_bits = get_le<std::uint64_t>(in, pos);
    std::size_t payload_bytes = static_cast<std::size_t>((bundle.payload_bits + 7) / 8);
    if (pos + payload_bytes + 4 > in.size())
        throw IntegrityError("read_bundle: truncated payload");
    bundle.payload.assign(in.begin() + static_cast<std::ptrdiff_t>(pos),
                          in.begin() + static_cast<std::ptrdiff_t>(pos + payload_bytes));
    pos += payload_bytes;
    bundle.checksum = get_le<std::uint32_t>(in, pos);
    if (crc32_of(bundle.payload) != bundle.checksum)
        throw IntegrityError("read_bundle: checksum mismatch");
    return bundle;
}

}  // namespace subnetcl
