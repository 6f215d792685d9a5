#include "sbq/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "sbq/blocks.hpp"

namespace sbq {

using nlohmann::json;

namespace {

// json.hpp parse errors report a byte offset; configs deserve line:column.
std::pair<std::size_t, std::size_t> line_col_at(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

const json& require(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(where + ": missing required key '" + key + "'");
    return *it;
}

std::string require_string(const json& j, const char* key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_string()) throw ConfigError(where + ": '" + key + "' must be a string");
    return v.get<std::string>();
}

// "instance.port" as used by connections and externals.
PortRef parse_port_ref(NetworkGraph& g, const std::string& text, const std::string& where) {
    const auto dot = text.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == text.size())
        throw ConfigError(where + ": '" + text + "' is not of the form instance.port");
    Instance* inst = g.find_instance(text.substr(0, dot));
    if (!inst) throw ConfigError(where + ": unknown instance '" + text.substr(0, dot) + "'");
    return inst->port(text.substr(dot + 1));
}

std::map<std::string, std::string> parse_file_map(const json& j, const char* key,
                                                  const std::string& where) {
    std::map<std::string, std::string> out;
    auto it = j.find(key);
    if (it == j.end()) return out;
    if (!it->is_object()) throw ConfigError(where + ": '" + key + "' must be an object");
    for (const auto& [label, file] : it->items()) {
        if (!file.is_string())
            throw ConfigError(where + ": " + key + "." + label + " must be a file path string");
        out[label] = file.get<std::string>();
    }
    return out;
}

}  // namespace

LoadedConfig load_network_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    json j;
    try {
        j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_col_at(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": " + e.what());
    }
    return network_from_json(j, path);
}

LoadedConfig network_from_json(const json& j, const std::string& source_name) {
    if (!j.is_object()) throw ConfigError(source_name + ": config must be a JSON object");

    const std::string name = require_string(j, "name", source_name);
    NetMode mode = NetMode::Distributed;
    if (auto it = j.find("mode"); it != j.end()) {
        const std::string m = it->get<std::string>();
        if (m == "distributed")
            mode = NetMode::Distributed;
        else if (m == "single_netlist")
            mode = NetMode::SingleNetlist;
        else
            throw ConfigError(source_name + ": mode must be 'distributed' or 'single_netlist'");
    }

    auto g = std::make_shared<NetworkGraph>(name, mode);
    if (auto it = j.find("max_rate_hz"); it != j.end()) {
        if (!it->is_number() || it->get<double>() < 0)
            throw ConfigError(source_name + ": max_rate_hz must be a number >= 0");
        g->set_max_rate_hz(it->get<double>());
    }

    const json& blocks = require(j, "blocks", source_name);
    if (!blocks.is_object()) throw ConfigError(source_name + ": 'blocks' must be an object");
    for (const auto& [def_name, spec] : blocks.items()) {
        const std::string where = source_name + ": blocks." + def_name;
        if (!spec.is_object()) throw ConfigError(where + " must be an object");
        const std::string type = require_string(spec, "type", where);
        json params = spec.value("params", json::object());
        double sim_rate = 1e6;
        if (auto it = spec.find("sim_rate_hz"); it != spec.end()) {
            if (!it->is_number() || it->get<double>() <= 0)
                throw ConfigError(where + ": sim_rate_hz must be a positive number");
            sim_rate = it->get<double>();
        }
        try {
            g->add_block(def_name, type, std::move(params), sim_rate);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }

    const json& instances = require(j, "instances", source_name);
    if (!instances.is_array()) throw ConfigError(source_name + ": 'instances' must be an array");
    for (std::size_t k = 0; k < instances.size(); ++k) {
        const std::string where = source_name + ": instances[" + std::to_string(k) + "]";
        const json& spec = instances[k];
        if (!spec.is_object()) throw ConfigError(where + " must be an object");
        const std::string inst_name = require_string(spec, "name", where);
        const std::string block = require_string(spec, "block", where);
        auto def_it = g->blocks().find(block);
        if (def_it == g->blocks().end())
            throw ConfigError(where + ": unknown block '" + block + "'");
        double rate = 0;
        if (auto it = spec.find("max_rate_hz"); it != spec.end()) {
            if (!it->is_number() || it->get<double>() < 0)
                throw ConfigError(where + ": max_rate_hz must be a number >= 0");
            rate = it->get<double>();
        }
        g->instantiate(def_it->second, inst_name, rate);
    }

    if (auto it = j.find("connections"); it != j.end()) {
        if (!it->is_array()) throw ConfigError(source_name + ": 'connections' must be an array");
        for (std::size_t k = 0; k < it->size(); ++k) {
            const std::string where = source_name + ": connections[" + std::to_string(k) + "]";
            const json& pair = (*it)[k];
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
                !pair[1].is_string())
                throw ConfigError(where + " must be a [\"from.port\", \"to.port\"] pair");
            g->connect(parse_port_ref(*g, pair[0].get<std::string>(), where),
                       parse_port_ref(*g, pair[1].get<std::string>(), where));
        }
    }

    if (auto it = j.find("externals"); it != j.end()) {
        if (!it->is_array()) throw ConfigError(source_name + ": 'externals' must be an array");
        for (std::size_t k = 0; k < it->size(); ++k) {
            const std::string where = source_name + ": externals[" + std::to_string(k) + "]";
            const json& spec = (*it)[k];
            if (!spec.is_object()) throw ConfigError(where + " must be an object");
            const std::string label = require_string(spec, "label", where);
            const std::string port = require_string(spec, "port", where);
            g->external(label, parse_port_ref(*g, port, where));
        }
    }

    if (auto it = j.find("tcp"); it != j.end()) {
        if (!it->is_array()) throw ConfigError(source_name + ": 'tcp' must be an array");
        for (std::size_t k = 0; k < it->size(); ++k) {
            const std::string where = source_name + ": tcp[" + std::to_string(k) + "]";
            const json& spec = (*it)[k];
            if (!spec.is_object()) throw ConfigError(where + " must be an object");
            TcpEndpointSpec ep;
            ep.mode = require_string(spec, "mode", where);
            ep.host = spec.value("host", std::string("127.0.0.1"));
            const json& port = require(spec, "port", where);
            if (!port.is_number_integer() || port.get<std::int64_t>() < 0 ||
                port.get<std::int64_t>() > 65535)
                throw ConfigError(where + ": port must be an integer in [0, 65535]");
            ep.port = static_cast<std::uint16_t>(port.get<std::int64_t>());
            const json& bindings = require(spec, "bindings", where);
            if (!bindings.is_array() || bindings.empty())
                throw ConfigError(where + ": 'bindings' must be a non-empty array");
            for (std::size_t b = 0; b < bindings.size(); ++b) {
                const std::string bwhere = where + ".bindings[" + std::to_string(b) + "]";
                const json& bind = bindings[b];
                if (!bind.is_object()) throw ConfigError(bwhere + " must be an object");
                const std::string label = require_string(bind, "label", bwhere);
                const std::string port_ref = require_string(bind, "port", bwhere);
                g->connect_tcp(parse_port_ref(*g, port_ref, bwhere), ep, label);
            }
        }
    }

    LoadedConfig out;
    out.graph = std::move(g);
    out.io.drive = parse_file_map(j, "drive", source_name);
    out.io.capture = parse_file_map(j, "capture", source_name);
    return out;
}

json network_to_json(const NetworkGraph& g) {
    json j;
    j["name"] = g.name();
    j["mode"] = g.mode() == NetMode::Distributed ? "distributed" : "single_netlist";
    if (g.max_rate_hz() > 0) j["max_rate_hz"] = g.max_rate_hz();

    json blocks = json::object();
    for (const auto& [name, def] : g.blocks()) {
        if (def->inner)
            throw ConfigError("composite block def '" + name + "' cannot be serialized");
        json spec{{"type", def->type}};
        if (!def->params.empty()) spec["params"] = def->params;
        if (def->sim_rate_hz != 1e6) spec["sim_rate_hz"] = def->sim_rate_hz;
        blocks[name] = std::move(spec);
    }
    j["blocks"] = std::move(blocks);

    json instances = json::array();
    for (const auto& inst : g.instances()) {
        if (inst->def().inner)
            throw ConfigError("instance '" + inst->name() + "' of a composite block cannot be serialized");
        if (!g.blocks().count(inst->def().name))
            throw ConfigError("instance '" + inst->name() + "' uses a block def foreign to the network");
        json spec{{"name", inst->name()}, {"block", inst->def().name}};
        if (inst->max_rate_hz() > 0) spec["max_rate_hz"] = inst->max_rate_hz();
        instances.push_back(std::move(spec));
    }
    j["instances"] = std::move(instances);

    json connections = json::array();
    for (const auto& c : g.connections())
        connections.push_back(json::array({c.from.str(), c.to.str()}));
    j["connections"] = std::move(connections);

    json externals = json::array();
    for (const auto& e : g.externals())
        externals.push_back(json{{"label", e.label}, {"port", e.port.str()}});
    j["externals"] = std::move(externals);

    if (!g.tcp_bindings().empty()) {
        json tcp = json::array();
        for (const auto& t : g.tcp_bindings()) {
            json* entry = nullptr;
            for (auto& e : tcp)
                if (e["mode"] == t.ep.mode && e["host"] == t.ep.host && e["port"] == t.ep.port)
                    entry = &e;
            if (!entry) {
                tcp.push_back(json{{"mode", t.ep.mode},
                                   {"host", t.ep.host},
                                   {"port", t.ep.port},
                                   {"bindings", json::array()}});
                entry = &tcp.back();
            }
            (*entry)["bindings"].push_back(json{{"label", t.label}, {"port", t.port.str()}});
        }
        j["tcp"] = std::move(tcp);
    }
    return j;
}

// Packet list files -------------------------------------------------------------

std::string format_packet_line(const Packet& p) {
    std::size_t len = p.data.size();
    while (len > 0 && p.data[len - 1] == 0) --len;
    std::string hex;
    hex.reserve(len * 2);
    static const char digits[] = "0123456789abcdef";
    for (std::size_t i = 0; i < len; ++i) {
        hex.push_back(digits[p.data[i] >> 4]);
        hex.push_back(digits[p.data[i] & 0xf]);
    }
    return std::to_string(p.flags) + "," + std::to_string(p.destination) + "," + hex;
}

namespace {

std::uint32_t parse_u32_field(const std::string& s, const std::string& what) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) {
            return std::isdigit(c);
        }))
        throw ConfigError(what + " must be a decimal integer, got '" + s + "'");
    unsigned long long v = 0;
    try {
        v = std::stoull(s);
    } catch (const std::exception&) {
        throw ConfigError(what + " is out of range: '" + s + "'");
    }
    if (v > 0xffffffffULL) throw ConfigError(what + " is out of range: '" + s + "'");
    return static_cast<std::uint32_t>(v);
}

int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string strip(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

Packet parse_packet_line(const std::string& line) {
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
        throw ConfigError("packet line needs three comma-separated fields: '" + line + "'");
    Packet p;
    p.flags = parse_u32_field(strip(line.substr(0, c1)), "flags");
    p.destination = parse_u32_field(strip(line.substr(c1 + 1, c2 - c1 - 1)), "destination");
    const std::string hex = strip(line.substr(c2 + 1));
    if (hex.size() % 2 != 0)
        throw ConfigError("payload hex has an odd number of digits: '" + hex + "'");
    if (hex.size() > kPayloadBytes * 2)
        throw ConfigError("payload hex is longer than " + std::to_string(kPayloadBytes) +
                          " bytes: '" + hex + "'");
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = hex_nibble(hex[i]);
        const int lo = hex_nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw ConfigError("bad hex digit in payload: '" + hex + "'");
        p.data[i / 2] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return p;
}

std::vector<Packet> load_packet_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open packet file: " + path);
    std::vector<Packet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = strip(line);
        if (line.empty()) continue;
        try {
            out.push_back(parse_packet_line(line));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_packet_file(const std::string& path, const std::vector<Packet>& packets) {
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot write packet file: " + path);
    f << "# flags,destination,payload_hex\n";
    for (const auto& p : packets) f << format_packet_line(p) << '\n';
    if (!f) throw IoFailure("short write to packet file: " + path);
}

}  // namespace sbq
