#include "pcdiff/curves.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pcd::curves {

namespace {

void check_bits(std::size_t bits) {
    if (bits < 1 || bits > kMaxBits) {
        throw std::invalid_argument("curves: bits per axis must be in [1," +
                                    std::to_string(kMaxBits) + "], got " + std::to_string(bits));
    }
}

void check_cell(const Cell& cell, std::size_t bits) {
    check_bits(bits);
    const std::uint32_t limit = 1u << bits;
    for (std::size_t a = 0; a < 3; ++a) {
        if (cell[a] >= limit) {
            throw std::out_of_range("curves: coordinate " + std::to_string(cell[a]) +
                                    " overflows " + std::to_string(bits) + "-bit axis");
        }
    }
}

/// Packs the "transposed" representation: bit j of axis a lands at code bit
/// 3*j + (2-a), so axis 0 carries the most significant bit of each triple.
std::uint64_t pack_transposed(const Cell& x, std::size_t bits) {
    std::uint64_t code = 0;
    for (std::size_t j = bits; j-- > 0;) {
        for (std::size_t a = 0; a < 3; ++a) {
            code = (code << 1) | ((x[a] >> j) & 1u);
        }
    }
    return code;
}

Cell unpack_transposed(std::uint64_t code, std::size_t bits) {
    Cell x = {0, 0, 0};
    for (std::size_t j = 0; j < bits; ++j) {
        for (std::size_t a = 0; a < 3; ++a) {
            const std::size_t bit = 3 * (bits - 1 - j) + (2 - a);
            x[a] = static_cast<std::uint32_t>((x[a] << 1) | ((code >> bit) & 1u));
        }
    }
    return x;
}

}  // namespace

std::string curve_kind_name(CurveKind kind) {
    switch (kind) {
        case CurveKind::z: return "z";
        case CurveKind::z_trans: return "z-trans";
        case CurveKind::hilbert: return "hilbert";
        case CurveKind::hilbert_trans: return "hilbert-trans";
    }
    return "?";
}

CurveKind parse_curve_kind(const std::string& name) {
    if (name == "z") return CurveKind::z;
    if (name == "z-trans" || name == "z_trans") return CurveKind::z_trans;
    if (name == "hilbert") return CurveKind::hilbert;
    if (name == "hilbert-trans" || name == "hilbert_trans") return CurveKind::hilbert_trans;
    throw std::invalid_argument("unknown curve kind '" + name +
                                "' (expected z, z-trans, hilbert, hilbert-trans)");
}

std::uint64_t z_encode(const Cell& cell, std::size_t bits) {
    check_cell(cell, bits);
    std::uint64_t code = 0;
    for (std::size_t j = 0; j < bits; ++j) {
        for (std::size_t a = 0; a < 3; ++a) {
            code |= static_cast<std::uint64_t>((cell[a] >> j) & 1u) << (3 * j + a);
        }
    }
    return code;
}

Cell z_decode(std::uint64_t code, std::size_t bits) {
    check_bits(bits);
    if (bits < 21 && (code >> (3 * bits))) {
        throw std::out_of_range("z_decode: code overflows " + std::to_string(3 * bits) + " bits");
    }
    Cell cell = {0, 0, 0};
    for (std::size_t j = 0; j < bits; ++j) {
        for (std::size_t a = 0; a < 3; ++a) {
            cell[a] |= static_cast<std::uint32_t>((code >> (3 * j + a)) & 1u) << j;
        }
    }
    return cell;
}

std::uint64_t hilbert_encode(const Cell& cell, std::size_t bits) {
    check_cell(cell, bits);
    Cell x = cell;
    const std::uint32_t m = 1u << (bits - 1);
    // Inverse undo of the recursive transforms, coarsest plane first.
    for (std::uint32_t q = m; q > 1; q >>= 1) {
        const std::uint32_t p = q - 1;
        for (std::size_t a = 0; a < 3; ++a) {
            if (x[a] & q) {
                x[0] ^= p;  // invert low bits of the first axis
            } else {
                const std::uint32_t t = (x[0] ^ x[a]) & p;
                x[0] ^= t;
                x[a] ^= t;
            }
        }
    }
    // Gray encode.
    for (std::size_t a = 1; a < 3; ++a) x[a] ^= x[a - 1];
    std::uint32_t t = 0;
    for (std::uint32_t q = m; q > 1; q >>= 1) {
        if (x[2] & q) t ^= q - 1;
    }
    for (std::size_t a = 0; a < 3; ++a) x[a] ^= t;
    return pack_transposed(x, bits);
}

Cell hilbert_decode(std::uint64_t code, std::size_t bits) {
    check_bits(bits);
    if (code >> (3 * bits)) {
        throw std::out_of_range("hilbert_decode: code overflows " + std::to_string(3 * bits) +
                                " bits");
    }
    Cell x = unpack_transposed(code, bits);
    const std::uint32_t n = 2u << (bits - 1);
    // Gray decode.
    std::uint32_t t = x[2] >> 1;
    for (std::size_t a = 3; a-- > 1;) x[a] ^= x[a - 1];
    x[0] ^= t;
    // Redo the recursive transforms, finest plane first.
    for (std::uint32_t q = 2; q != n; q <<= 1) {
        const std::uint32_t p = q - 1;
        for (std::size_t a = 3; a-- > 0;) {
            if (x[a] & q) {
                x[0] ^= p;
            } else {
                const std::uint32_t tt = (x[0] ^ x[a]) & p;
                x[0] ^= tt;
                x[a] ^= tt;
            }
        }
    }
    return x;
}

Cell transpose_variant(const Cell& cell) { return Cell{cell[2], cell[0], cell[1]}; }

std::uint64_t curve_encode(const Cell& cell, CurveKind kind, std::size_t bits) {
    switch (kind) {
        case CurveKind::z: return z_encode(cell, bits);
        case CurveKind::z_trans: return z_encode(transpose_variant(cell), bits);
        case CurveKind::hilbert: return hilbert_encode(cell, bits);
        case CurveKind::hilbert_trans: return hilbert_encode(transpose_variant(cell), bits);
    }
    throw std::logic_error("curve_encode: bad kind");
}

SerializationOrder serialize_points(const std::vector<geom::Vec3>& coords, CurveKind kind,
                                    std::size_t bits) {
    check_bits(bits);
    const std::uint32_t cells = 1u << bits;
    SerializationOrder order;
    order.kind = kind;
    order.codes.resize(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        Cell cell;
        for (std::size_t a = 0; a < 3; ++a) {
            const double c = coords[i][a];
            if (c < 0.0 || c > 1.0) {
                throw std::out_of_range("serialize_points: coordinate " + std::to_string(c) +
                                        " outside [0,1]");
            }
            auto q = static_cast<long long>(std::floor(c * static_cast<double>(cells)));
            if (q >= static_cast<long long>(cells)) q = static_cast<long long>(cells) - 1;
            if (q < 0) q = 0;
            cell[a] = static_cast<std::uint32_t>(q);
        }
        order.codes[i] = curve_encode(cell, kind, bits);
    }
    order.permutation.resize(coords.size());
    std::iota(order.permutation.begin(), order.permutation.end(), 0);
    std::stable_sort(order.permutation.begin(), order.permutation.end(),
                     [&](std::size_t a, std::size_t b) { return order.codes[a] < order.codes[b]; });
    return order;
}

std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return inv;
}

}  // namespace pcd::curves
