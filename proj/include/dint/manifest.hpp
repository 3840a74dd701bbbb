#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dint/rng.hpp"

namespace dint {

// Run manifest: the CLI records every input that determines its outputs
// (command, config, seeds, tuning knobs) as JSON before doing any work, and
// every produced file carries a comment with the manifest's hash so outputs
// can be traced back to the exact invocation.
struct Manifest {
    nlohmann::json j;

    std::string text() const { return j.dump(2) + "\n"; }

    std::string hash_hex() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a(text())));
        return buf;
    }

    std::string comment() const { return "manifest=" + hash_hex(); }

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("manifest: cannot open '" + path + "' for writing");
        os << text();
        if (!os) throw std::runtime_error("manifest: short write to '" + path + "'");
    }
};

}  // namespace dint
