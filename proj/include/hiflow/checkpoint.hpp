#pragma once

#include <hiflow/params.hpp>
#include <hiflow/tensor_io.hpp>

#include <fstream>
#include <map>

namespace hiflow {

// Checkpoint archive: a sequence of (u32 name length, UTF-8 name, HIFT tensor record) until EOF.

template <class Module>
void write_checkpoint(std::ostream& os, Module& m) {
    m.visit("", [&](const ParamInfo& info, auto& t) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(info.name.size()));
        os.write(info.name.data(), std::streamsize(info.name.size()));
        write_hift(os, t);
    });
    if (!os) throw FormatError("checkpoint: write failed");
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> read_checkpoint_entries(std::istream& is) {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        const auto len = detail::read_le<std::uint32_t>(is);
        if (len > 4096) throw FormatError("checkpoint: implausible name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
        out.emplace_back(std::move(name), read_hift<T>(is));
    }
    return out;
}

/// Copies archived tensors into the module; every parameter must be present with matching shape.
template <class Module>
void read_checkpoint(std::istream& is, Module& m) {
    using T = double;
    std::map<std::string, Tensor<T>> entries;
    for (auto& [name, t] : read_checkpoint_entries<T>(is)) entries.emplace(name, t);
    m.visit("", [&](const ParamInfo& info, auto& t) {
        using U = typename std::decay_t<decltype(t)>::value_type;
        const auto it = entries.find(info.name);
        if (it == entries.end()) throw FormatError("checkpoint: missing parameter " + info.name);
        if (it->second.shape() != t.shape())
            throw FormatError("checkpoint: shape mismatch for " + info.name + ": " + to_string(it->second.shape()) +
                              " vs " + to_string(t.shape()));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<U>(it->second[i]);
        entries.erase(it);
    });
    if (!entries.empty()) throw FormatError("checkpoint: unexpected parameter " + entries.begin()->first);
}

template <class Module>
void save_checkpoint(const std::string& path, Module& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_checkpoint(os, m);
}

template <class Module>
void load_checkpoint(const std::string& path, Module& m) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    read_checkpoint(is, m);
}

}  // namespace hiflow
