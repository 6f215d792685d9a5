#pragma once

#include <stdexcept>
#include <string>

namespace sbq {

// Root of all exceptions thrown by this library. Hot-path operations
// (try_send/try_recv and the blocking variants) report failure through
// return values instead; exceptions are reserved for contract violations
// and unrecoverable I/O.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A byte buffer had the wrong size for the packet codec.
class WrongLength : public Error {
public:
    using Error::Error;
};

// An existing queue file is not exactly one page long.
class BadSize : public Error {
public:
    using Error::Error;
};

// mmap/open/socket/spawn style failures; message carries errno text.
class IoFailure : public Error {
public:
    using Error::Error;
};

// Nonpositive or otherwise meaningless performance-model parameter.
class InvalidParam : public Error {
public:
    using Error::Error;
};

// TCP peers did not present mirror-compatible binding lists.
class HandshakeMismatch : public Error {
public:
    using Error::Error;
};

// Malformed frame or out-of-range binding index on an established link.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Graph construction errors ------------------------------------------------

class GraphError : public Error {
public:
    using Error::Error;
};

class DirectionMismatch : public GraphError {
public:
    using GraphError::GraphError;
};

class AlreadyBound : public GraphError {
public:
    using GraphError::GraphError;
};

class DuplicateLabel : public GraphError {
public:
    using GraphError::GraphError;
};

class UnboundPort : public GraphError {
public:
    using GraphError::GraphError;
};

class ModeMismatch : public GraphError {
public:
    using GraphError::GraphError;
};

class ShapeMismatch : public GraphError {
public:
    using GraphError::GraphError;
};

// Config file could not be parsed or does not describe a valid network.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Launching a worker process failed.
class SpawnFailure : public Error {
public:
    using Error::Error;
};

// A worker exited while the run was supposed to be live.
class WorkerDied : public Error {
public:
    WorkerDied(const std::string& instance, const std::string& what)
        : Error(what), instance_(instance) {}
    const std::string& instance() const { return instance_; }

private:
    std::string instance_;
};

// Synchronous run hit its cycle horizon before completing.
class HorizonExceeded : public Error {
public:
    using Error::Error;
};

// Memory transaction touched bytes outside the target block.
class OutOfRange : public Error {
public:
    using Error::Error;
};

// A driver-side wait (transaction reply, result stream) expired.
class Timeout : public Error {
public:
    using Error::Error;
};

}  // namespace sbq
