// mrp: simulation runs, TCP deployments and run reports.

#include "mrp/deployment.hpp"
#include "mrp/metrics.hpp"
#include "mrp/report.hpp"
#include "mrp/scenario.hpp"
#include "mrp/sim/bundled.hpp"
#include "mrp/tcp/load_client.hpp"
#include "mrp/tcp/node_server.hpp"
#include "mrp/tcp/registry_server.hpp"
#include "mrp/topology.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

using namespace mrp;

void configure_logging() {
    spdlog::set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("MRP_LOG")) {
        auto level = spdlog::level::from_str(lvl);
        // from_str maps unknown names to "off"
        if (level == spdlog::level::off && std::string(lvl) != "off") {
            spdlog::warn("MRP_LOG: unknown level '{}', keeping warn", lvl);
        } else {
            spdlog::set_level(level);
        }
    }
}

/// Bundled name, or a path to a scenario file.
std::string scenario_text(const std::string& arg) {
    if (auto text = bundled::by_name(arg)) return *text;
    if (std::filesystem::exists(arg)) return read_text_file(arg);
    throw Error(Errc::InvalidScenario, "'" + arg + "' is neither a bundled scenario nor a file");
}

std::vector<GroupId> parse_groups(const std::string& s) {
    std::vector<GroupId> out;
    for (const auto& part : LatencyDist::split(s, ',')) {
        if (part.empty()) continue;
        const auto v = std::stoul(part);
        if (v > 65535) throw std::invalid_argument("group id out of range: " + part);
        out.push_back(GroupId{static_cast<std::uint16_t>(v)});
    }
    if (out.empty()) throw std::invalid_argument("no groups given");
    return out;
}

/// Blocks SIGINT/SIGTERM in every thread and calls `on_signal` from a
/// dedicated waiter thread when one arrives.
void install_signal_waiter(std::function<void()> on_signal) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    std::thread t([set, on_signal = std::move(on_signal)] {
        int sig = 0;
        sigwait(&set, &sig);
        on_signal();
    });
    t.detach();
}

void stop_after(double seconds, std::function<void()> stop) {
    if (seconds <= 0) return;
    std::thread([seconds, stop = std::move(stop)] {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
        stop();
    }).detach();
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();
    CLI::App app{"Multi-ring atomic multicast: simulator, TCP runtime and reports"};
    app.require_subcommand(1);

    // ------------------------------------------------------------- sim
    auto* sim_cmd = app.add_subcommand("sim", "Simulated runs");
    sim_cmd->require_subcommand(1);

    std::string run_scenario;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::uint64_t max_events = 0;
    auto* sim_run = sim_cmd->add_subcommand("run", "Run a bundled scenario or scenario file");
    sim_run->add_option("scenario", run_scenario, "bundled name or path")->required();
    sim_run->add_option("--seed", seed, "simulation seed");
    sim_run->add_option("--out", out_dir, "output directory");
    sim_run->add_option("--max-events", max_events, "event budget; 0 = unlimited");

    auto* sim_list = sim_cmd->add_subcommand("list", "List bundled scenarios");
    std::string dump_name;
    auto* sim_dump = sim_cmd->add_subcommand("dump", "Print a bundled scenario");
    sim_dump->add_option("name", dump_name)->required();

    // ------------------------------------------------------------- registry
    std::string config_path;
    std::string listen = "127.0.0.1:7400";
    double duration_s = 0;
    auto* registry_cmd = app.add_subcommand("registry", "Run the membership registry");
    registry_cmd->add_option("--config", config_path, "deployment file")->required()->check(CLI::ExistingFile);
    registry_cmd->add_option("--listen", listen, "host:port");
    registry_cmd->add_option("--duration", duration_s, "seconds to run; 0 = until interrupted");

    // ------------------------------------------------------------- node
    std::uint16_t node_id = 0;
    std::string roles = "acceptor,learner";
    std::string rings = "1";
    std::string registry_addr = "127.0.0.1:7400";
    std::string app_kind = "none";
    std::string checkpoint_dir;
    double checkpoint_period = 30;
    bool recover = false;
    auto* node_cmd = app.add_subcommand("node", "Run one node of a TCP deployment");
    node_cmd->add_option("--config", config_path, "deployment file")->required()->check(CLI::ExistingFile);
    node_cmd->add_option("--id", node_id, "node id (1-65535)")->required()->check(CLI::Range(1, 65535));
    node_cmd->add_option("--roles", roles, "proposer,acceptor,learner or all");
    node_cmd->add_option("--rings", rings, "comma-separated group ids");
    node_cmd->add_option("--listen", listen, "host:port; port 0 picks one")->default_str("127.0.0.1:0");
    node_cmd->add_option("--registry", registry_addr, "registry host:port");
    node_cmd->add_option("--app", app_kind, "kv or none")->check(CLI::IsMember({"kv", "none"}));
    node_cmd->add_option("--checkpoint-dir", checkpoint_dir, "shared checkpoint directory");
    node_cmd->add_option("--checkpoint-period", checkpoint_period, "seconds between checkpoints");
    node_cmd->add_flag("--recover", recover, "rejoin from the cache and a checkpoint");
    node_cmd->add_option("--duration", duration_s, "seconds to run; 0 = until interrupted");

    // ------------------------------------------------------------- client
    std::uint32_t client_id = 1;
    std::string client_groups = "1";
    std::uint32_t size = 200, threads = 1;
    std::string workload = "raw";
    double timeout_ms = 2000;
    std::string latency_out;
    double client_duration = 10;
    std::uint16_t reply_from = 0;
    auto* client_cmd = app.add_subcommand("client", "Run a closed-loop load client");
    client_cmd->add_option("--id", client_id, "client id")->check(CLI::Range(1u, 0x7fffffffu));
    client_cmd->add_option("--group", client_groups, "group id(s), comma-separated");
    client_cmd->add_option("--size", size, "payload bytes")->check(CLI::Range(1u, static_cast<unsigned>(kDefaultMaxMessageSize)));
    client_cmd->add_option("--threads", threads, "closed-loop worker threads")->check(CLI::Range(1u, 4096u));
    client_cmd->add_option("--duration", client_duration, "seconds");
    client_cmd->add_option("--registry", registry_addr, "registry host:port");
    client_cmd->add_option("--workload", workload, "raw or kv")->check(CLI::IsMember({"raw", "kv"}));
    client_cmd->add_option("--timeout-ms", timeout_ms, "resubmit after this long without a reply");
    client_cmd->add_option("--reply-from", reply_from, "learner that replies to raw messages");
    client_cmd->add_option("--out", latency_out, "write latency_cdf.csv into this directory");

    // ------------------------------------------------------------- report
    std::string report_dir;
    auto* report_cmd = app.add_subcommand("report", "Summarize a run directory");
    report_cmd->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim_run->parsed()) {
            const auto text = scenario_text(run_scenario);
            sim::ClusterOptions opts;
            opts.max_events = max_events;
            const auto m = report::run_scenario(text, seed, out_dir, opts);
            std::cout << "wrote " << out_dir << "  trace " << m["trace_hash"].get<std::string>() << '\n';
            std::cout << report::summarize_run(out_dir);
            return 0;
        }
        if (sim_list->parsed()) {
            for (const auto& n : bundled::names()) std::cout << n << '\n';
            return 0;
        }
        if (sim_dump->parsed()) {
            auto text = bundled::by_name(dump_name);
            if (!text) throw Error(Errc::InvalidScenario, "no bundled scenario '" + dump_name + "'");
            std::cout << *text;
            return 0;
        }
        if (report_cmd->parsed()) {
            std::cout << report::summarize_run(report_dir);
            return 0;
        }
        if (registry_cmd->parsed()) {
            const auto dep = load_deployment(config_path);
            tcp::RegistryServer server(tcp::Endpoint::parse(listen), dep);
            install_signal_waiter([&server] { server.stop(); });
            stop_after(duration_s, [&server] { server.stop(); });
            std::cout << "registry listening on port " << server.port() << std::endl;
            server.run();
            return 0;
        }
        if (node_cmd->parsed()) {
            const auto dep = load_deployment(config_path);
            tcp::NodeOptions o;
            o.id = NodeId{node_id};
            const Roles r = parse_roles(roles);
            for (auto g : parse_groups(rings)) o.rings[g] = r;
            o.listen = tcp::Endpoint::parse(node_cmd->count("--listen") ? listen : "127.0.0.1:0");
            o.registry = tcp::Endpoint::parse(registry_addr);
            o.kv = app_kind == "kv";
            o.checkpoint_dir = checkpoint_dir;
            o.checkpoint_period_s = checkpoint_period;
            o.recover = recover;
            tcp::NodeServer server(dep, o);
            server.start();
            install_signal_waiter([&server] { server.stop(); });
            stop_after(duration_s, [&server] { server.stop(); });
            std::cout << "node " << node_id << " listening on " << server.endpoint().str() << std::endl;
            server.run();
            std::cout << "node " << node_id << " delivered " << server.delivered() << " messages" << std::endl;
            return 0;
        }
        if (client_cmd->parsed()) {
            tcp::ClientOptions o;
            o.spec.id = client_id;
            for (auto g : parse_groups(client_groups)) o.spec.groups.emplace_back(g, 1.0);
            o.spec.size = size;
            o.spec.threads = threads;
            o.spec.timeout_ms = timeout_ms;
            o.spec.workload = workload == "kv" ? Workload::Kv : Workload::Raw;
            if (reply_from) o.spec.reply_from = NodeId{reply_from};
            o.registry = tcp::Endpoint::parse(registry_addr);
            o.duration_s = client_duration;
            auto res = tcp::LoadClient(o).run();
            std::cout << "sent " << res.sent << "  completed " << res.completed << "  resubmits " << res.resubmits
                      << "  throughput " << static_cast<double>(res.completed) / client_duration << " msgs/s\n";
            if (!res.latencies.empty()) {
                const auto p = metrics::summarize(res.latencies);
                std::printf("latency p50 %.3f ms  p90 %.3f ms  p99 %.3f ms\n", report::ms(p.p50), report::ms(p.p90),
                            report::ms(p.p99));
            }
            if (!latency_out.empty()) {
                std::filesystem::create_directories(latency_out);
                std::ofstream f(std::filesystem::path(latency_out) / "latency_cdf.csv");
                metrics::write_cdf_csv(f, res.latencies);
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
