#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbq/netgraph.hpp"
#include "sbq/packet.hpp"

namespace sbq {

// Driver I/O declared in a config: external label -> packet list file.
struct DriveSpec {
    std::map<std::string, std::string> drive;
    std::map<std::string, std::string> capture;
};

struct LoadedConfig {
    std::shared_ptr<NetworkGraph> graph;
    DriveSpec io;
};

// Parses a network config file. Errors carry file:line:column context.
LoadedConfig load_network_config(const std::string& path);
LoadedConfig network_from_json(const nlohmann::json& j, const std::string& source_name);

// Inverse of network_from_json for graphs made of registry blocks only
// (composites cannot be serialized).
nlohmann::json network_to_json(const NetworkGraph& g);

// Packet list files: one packet per line as "flags,destination,hexdata"
// (decimal integers, payload hex with trailing zero bytes trimmed).
// '#' starts a comment.
std::vector<Packet> load_packet_file(const std::string& path);
void save_packet_file(const std::string& path, const std::vector<Packet>& packets);
std::string format_packet_line(const Packet& p);
Packet parse_packet_line(const std::string& line);

}  // namespace sbq
