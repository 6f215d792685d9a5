#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <chrono>
#include <cstring>
#include <optional>
#include <sstream>
#include <string>

#include "sbq/errors.hpp"
#include "sbq/pacing.hpp"
#include "sbq/packet.hpp"
#include "sbq/shm_queue.hpp"

namespace py = pybind11;
using namespace sbq;

namespace {

// None means wait forever, matching the C++ convention of a negative timeout.
std::chrono::nanoseconds to_timeout(const std::optional<double>& seconds) {
    if (!seconds || *seconds < 0) return std::chrono::nanoseconds{-1};
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::duration<double>(*seconds));
}

Packet make_packet(std::uint32_t flags, std::uint32_t destination, const py::bytes& data) {
    const std::string raw = data;
    return Packet(flags, destination,
                  {reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Shared-memory packet queues, the performance model, and rate pacing.";

    auto err = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<WrongLength>(m, "WrongLength", err);
    py::register_exception<BadSize>(m, "BadSize", err);
    py::register_exception<IoFailure>(m, "IoFailure", err);
    py::register_exception<InvalidParam>(m, "InvalidParam", err);

    m.attr("PACKET_BYTES") = kPacketBytes;
    m.attr("PAYLOAD_BYTES") = kPayloadBytes;
    m.attr("QUEUE_CAPACITY") = kQueueCapacity;
    m.attr("FLAG_LAST") = kFlagLast;

    py::class_<Packet>(m, "Packet",
                       "One 64-byte switchboard packet: flags, destination, 52-byte payload.")
        .def(py::init(&make_packet), py::arg("flags") = 0, py::arg("destination") = 0,
             py::arg("data") = py::bytes(),
             "Payloads shorter than 52 bytes are zero-padded; longer ones raise WrongLength.")
        .def_readwrite("flags", &Packet::flags)
        .def_readwrite("destination", &Packet::destination)
        .def_property(
            "data",
            [](const Packet& p) {
                return py::bytes(reinterpret_cast<const char*>(p.data.data()), p.data.size());
            },
            [](Packet& p, const py::bytes& data) {
                p = make_packet(p.flags, p.destination, data);
            })
        .def_property_readonly("last", &Packet::last, "True when the last-marker flag is set.")
        .def("encode",
             [](const Packet& p) {
                 const auto raw = encode_packet(p);
                 return py::bytes(reinterpret_cast<const char*>(raw.data()), raw.size());
             },
             "Serialize to the 64-byte wire format (little-endian, reserved bytes zero).")
        .def_static("decode",
                    [](const py::bytes& raw) {
                        const std::string s = raw;
                        return decode_packet(
                            {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
                    },
                    py::arg("raw"), "Parse a 64-byte buffer; reserved bytes are ignored.")
        .def(py::self == py::self)
        .def("__repr__", [](const Packet& p) {
            std::size_t used = p.data.size();
            while (used > 0 && p.data[used - 1] == 0) --used;
            std::ostringstream os;
            os << "Packet(flags=0x" << std::hex << p.flags << std::dec
               << ", destination=" << p.destination << ", data=" << used << "+"
               << (p.data.size() - used) << " zero bytes)";
            return os.str();
        });

    py::class_<QueueProducer>(m, "QueueProducer",
                              "Writing end of a file-backed single-producer queue. Bare names "
                              "are placed under $SBQ_DIR.")
        .def(py::init<const std::string&, bool>(), py::arg("name_or_path"),
             py::arg("fresh") = false)
        .def("try_send", &QueueProducer::try_send, py::arg("packet"),
             "Nonblocking; False when the queue is full.")
        .def("send_blocking",
             [](QueueProducer& q, const Packet& p, const std::optional<double>& timeout) {
                 py::gil_scoped_release release;
                 return q.send_blocking(p, to_timeout(timeout));
             },
             py::arg("packet"), py::arg("timeout") = py::none(),
             "Blocks until sent; timeout in seconds, None waits forever. False on timeout.")
        .def("can_accept", &QueueProducer::can_accept)
        .def_property_readonly("path", &QueueProducer::path);

    py::class_<QueueConsumer>(m, "QueueConsumer",
                              "Reading end of a file-backed single-consumer queue.")
        .def(py::init<const std::string&, bool>(), py::arg("name_or_path"),
             py::arg("fresh") = false)
        .def("try_recv",
             [](QueueConsumer& q) -> std::optional<Packet> {
                 Packet p;
                 if (!q.try_recv(p)) return std::nullopt;
                 return p;
             },
             "Nonblocking; None when the queue is empty.")
        .def("recv_blocking",
             [](QueueConsumer& q, const std::optional<double>& timeout) -> std::optional<Packet> {
                 Packet p;
                 bool ok;
                 {
                     py::gil_scoped_release release;
                     ok = q.recv_blocking(p, to_timeout(timeout));
                 }
                 if (!ok) return std::nullopt;
                 return p;
             },
             py::arg("timeout") = py::none(),
             "Blocks until a packet arrives; timeout in seconds, None waits forever. "
             "None on timeout.")
        .def_property_readonly("path", &QueueConsumer::path);

    py::class_<PerfParams>(m, "PerfParams",
                           "Inputs to the delay-measurement model: block A measures a delay of "
                           "n_cycles of block B's clock over bridged queues.")
        .def(py::init([](double n_cycles, double f_a_sim, double f_b_sim, double f_a_wall,
                         double f_b_wall, double t_comm, double n_rx, double n_tx) {
                 PerfParams p;
                 p.n_cycles = n_cycles;
                 p.f_a_sim = f_a_sim;
                 p.f_b_sim = f_b_sim;
                 p.f_a_wall = f_a_wall;
                 p.f_b_wall = f_b_wall;
                 p.t_comm = t_comm;
                 p.n_rx = n_rx;
                 p.n_tx = n_tx;
                 return p;
             }),
             py::arg("n_cycles") = 0.0, py::arg("f_a_sim") = 0.0, py::arg("f_b_sim") = 0.0,
             py::arg("f_a_wall") = 0.0, py::arg("f_b_wall") = 0.0, py::arg("t_comm") = 0.0,
             py::arg("n_rx") = 0.0, py::arg("n_tx") = 0.0)
        .def_readwrite("n_cycles", &PerfParams::n_cycles)
        .def_readwrite("f_a_sim", &PerfParams::f_a_sim)
        .def_readwrite("f_b_sim", &PerfParams::f_b_sim)
        .def_readwrite("f_a_wall", &PerfParams::f_a_wall)
        .def_readwrite("f_b_wall", &PerfParams::f_b_wall)
        .def_readwrite("t_comm", &PerfParams::t_comm)
        .def_readwrite("n_rx", &PerfParams::n_rx)
        .def_readwrite("n_tx", &PerfParams::n_tx);

    m.def("ideal_delay", &ideal_delay, py::arg("params"),
          "Delay A should observe if both clocks kept their nominal ratio.");
    m.def("actual_delay", &actual_delay, py::arg("params"),
          "Delay A observes once transport and bridge cycle costs are included.");
    m.def("wall_rate_bound", py::overload_cast<double, double>(&wall_rate_bound),
          py::arg("n_ideal"), py::arg("t_comm"),
          "Highest wall rate at which transport stays negligible; inf when t_comm is 0.");
    m.def("wall_rate_bound", py::overload_cast<const PerfParams&>(&wall_rate_bound),
          py::arg("params"));
    m.def("required_wall_ratio", &required_wall_ratio, py::arg("params"),
          "Wall-clock rate ratio that preserves the simulated ratio.");
    m.attr("MIN_MEASURABLE_DELAY_CYCLES") = kMinMeasurableDelayCycles;

    py::class_<RateLimiter>(m, "RateLimiter",
                            "Caps a loop at max_rate_hz with absolute deadlines; short stalls "
                            "are made up (at most 100 periods), long ones reset the schedule.")
        .def(py::init<double>(), py::arg("max_rate_hz"))
        .def("pace",
             [](RateLimiter& r) {
                 py::gil_scoped_release release;
                 r.pace();
             },
             "Block until the next deadline.")
        .def_property_readonly("max_rate_hz", &RateLimiter::max_rate_hz)
        .def_readonly_static("MAX_CATCH_UP_PERIODS", &RateLimiter::kMaxCatchUpPeriods);
}
