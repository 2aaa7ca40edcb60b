#include "unicodec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace unicodec {

namespace {

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void append_mat(std::string& out, const nn::Mat& m) {
    // Row-major little-endian doubles; Eigen default storage is column-major,
    // so serialize explicitly by element.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            char buf[sizeof(double)];
            std::memcpy(buf, &v, sizeof(double));
            out.append(buf, sizeof(double));
        }
    }
}

nn::Mat read_mat(const std::string& in, size_t& at, Eigen::Index rows, Eigen::Index cols) {
    size_t need = static_cast<size_t>(rows * cols) * sizeof(double);
    if (at + need > in.size()) throw std::runtime_error("checkpoint: truncated parameter data");
    nn::Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v;
            std::memcpy(&v, in.data() + at, sizeof(double));
            at += sizeof(double);
            m(r, c) = v;
        }
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamStore& ps,
                     const std::map<std::string, std::string>& meta, const AdamStateBlob* adam) {
    std::ostringstream header;
    header << "UCKP 1\n";
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
            throw std::invalid_argument("checkpoint: meta keys must be tokens, values single-line");
        header << "meta " << k << " " << v << "\n";
    }
    for (const auto& [name, p] : ps.all())
        header << "param " << name << " " << p.rows() << " " << p.cols() << "\n";
    header << "adam " << (adam ? 1 : 0) << " " << (adam ? adam->steps_done : 0) << "\n";
    header << "data\n";

    std::string payload;
    for (const auto& [name, p] : ps.all()) append_mat(payload, p.value());
    if (adam) {
        for (const auto& [name, p] : ps.all()) {
            auto it = adam->moments.find(name);
            nn::Mat zero = nn::Mat::Zero(p.rows(), p.cols());
            const nn::Mat& m = it != adam->moments.end() ? it->second.first : zero;
            const nn::Mat& v = it != adam->moments.end() ? it->second.second : zero;
            append_mat(payload, m);
            append_mat(payload, v);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << header.str();
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    uint64_t sum = fnv1a(payload);
    out << "\nsum " << sum << "\n";
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string all = buf.str();

    std::istringstream head(all);
    std::string line;
    if (!std::getline(head, line) || line != "UCKP 1")
        throw std::runtime_error("checkpoint: bad magic in " + path);

    LoadedCheckpoint out;
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
    bool has_adam = false;
    int64_t adam_steps = 0;
    while (std::getline(head, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string k;
            ls >> k;
            std::string v;
            std::getline(ls, v);
            if (!v.empty() && v.front() == ' ') v.erase(0, 1);
            out.meta[k] = v;
        } else if (tag == "param") {
            std::string name;
            Eigen::Index r, c;
            ls >> name >> r >> c;
            if (!ls || r < 0 || c < 0) throw std::runtime_error("checkpoint: bad param line");
            shapes.emplace_back(name, r, c);
        } else if (tag == "adam") {
            int flag;
            ls >> flag >> adam_steps;
            has_adam = flag != 0;
        } else if (tag == "data") {
            break;
        } else {
            throw std::runtime_error("checkpoint: unknown header line: " + line);
        }
    }
    size_t data_at = static_cast<size_t>(head.tellg());
    if (data_at == static_cast<size_t>(-1) || data_at > all.size())
        throw std::runtime_error("checkpoint: missing data section");

    size_t at = data_at;
    for (const auto& [name, r, c] : shapes) out.params[name] = read_mat(all, at, r, c);
    if (has_adam) {
        for (const auto& [name, r, c] : shapes) {
            nn::Mat m = read_mat(all, at, r, c);
            nn::Mat v = read_mat(all, at, r, c);
            out.adam.moments[name] = {std::move(m), std::move(v)};
        }
        out.adam.steps_done = adam_steps;
        out.has_adam = true;
    }

    std::string payload = all.substr(data_at, at - data_at);
    std::istringstream tail(all.substr(at));
    std::string tag;
    uint64_t sum = 0;
    tail >> tag >> sum;
    if (tag != "sum" || sum != fnv1a(payload))
        throw std::runtime_error("checkpoint: checksum mismatch in " + path);
    return out;
}

void apply_params(nn::ParamStore& ps, const std::map<std::string, nn::Mat>& params) {
    if (params.size() != ps.all().size())
        throw std::runtime_error("checkpoint: parameter set does not match model");
    for (auto& [name, p] : ps.all()) {
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
        if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        ps.at(name).value_mut() = it->second;
    }
}

}  // namespace unicodec
