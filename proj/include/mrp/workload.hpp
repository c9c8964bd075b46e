#pragma once

#include "mrp/core.hpp"
#include "mrp/kv.hpp"
#include "mrp/scenario.hpp"

#include <random>
#include <string>

namespace mrp {

/// Payload of message `seq` from a client: a fixed byte pattern for raw
/// workloads, or a key-value command drawn from the client's mix.
template <typename Rng>
Payload make_payload(const ClientSpec& spec, std::uint64_t seq, Rng& rng) {
    if (spec.workload == Workload::Raw) {
        Payload p(spec.size);
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = static_cast<std::uint8_t>((seq * 131 + i * 7 + spec.id) & 0xff);
        return p;
    }
    kv::Command c;
    const double x = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto key = std::uniform_int_distribution<std::uint32_t>(0, spec.kv_keys - 1)(rng);
    c.key = "k" + std::to_string(key);
    if (x < spec.kv_insert) {
        c.op = kv::Op::Insert;
    } else if (x < spec.kv_insert + spec.kv_read) {
        c.op = kv::Op::Read;
    } else {
        c.op = kv::Op::Update;
    }
    if (c.op != kv::Op::Read) {
        c.value.resize(spec.size);
        for (std::size_t i = 0; i < c.value.size(); ++i) c.value[i] = static_cast<char>('a' + ((seq + i) % 26));
    }
    return kv::encode(c);
}

}  // namespace mrp
