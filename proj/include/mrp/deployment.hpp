#pragma once

#include "mrp/ring_consensus.hpp"
#include "mrp/scenario.hpp"

#include <string>

namespace mrp {

/// Ring parameters shared by every replica of a deployment.
inline RingConfig ring_config_for(const Scenario& sc) {
    RingConfig cfg;
    cfg.batch_max_bytes = sc.batch_bytes;
    cfg.window = sc.window;
    cfg.retain_window = sc.retain;
    cfg.retry_timeout = from_millis(sc.retry_ms);
    cfg.pacing = sc.pacing.enabled;
    cfg.lambda = sc.pacing.lambda;
    cfg.delta_t = from_millis(sc.pacing.delta_t_ms);
    cfg.t_ref = Time{0};
    cfg.compensation = sc.pacing.compensation;
    // a coordinator resends unacknowledged proposals for as long as a
    // failure can take to be noticed and published
    cfg.resend_horizon = 2 * (from_millis(sc.suspicion_ms) + from_millis(sc.heartbeat_ms));
    return cfg;
}

/// TCP deployment file: the scenario format without node or client
/// sections being required. Real networks get slower failure detection.
inline Scenario parse_deployment(const std::string& text) {
    auto sc = parse_scenario("heartbeat_ms=200 suspicion_ms=2000\n" + text, false);
    if (sc.rings.empty()) throw Error(Errc::InvalidScenario, "deployment declares no rings");
    for (const auto& r : sc.rings)
        if (r.acceptors == 0)
            throw Error(Errc::InvalidScenario, "ring " + std::to_string(r.id.value) + " needs acceptors=<n>");
    return sc;
}

inline Scenario load_deployment(const std::string& path) { return parse_deployment(read_text_file(path)); }

}  // namespace mrp
