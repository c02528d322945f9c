#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sacreg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad integer '" + tok + "' in " +
                                        key);
        }
    }
    return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("config: bad boolean '" + s + "' for " + key);
}

template <typename F>
auto parse_num(const std::string& s, const std::string& key, F conv) {
    try {
        return conv(s);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number '" + s + "' for " + key);
    }
}

}  // namespace

void TrainConfig::validate() const {
    check(lr > 0.0, "config: lr must be > 0");
    check(iterations >= 1, "config: iterations must be >= 1");
    check(lambda >= 0.0, "config: lambda must be >= 0");
    check(encoder_channels.size() == 5,
          "config: encoder.channels must list 5 widths");
    for (int c : encoder_channels) {
        check(c >= 1, "config: encoder channel widths must be >= 1");
    }
    check(encoder_kernel % 2 == 1 && encoder_kernel >= 1,
          "config: encoder.kernel_size must be odd");
    for (int s : sacb_scales) {
        check(s >= 2 && s <= 5, "config: sacb.scales entries must lie in {2,3,4,5}");
    }
    check(sacb_clusters >= 1, "config: sacb.clusters must be >= 1");
    check(sacb_kmeans_max_iter >= 1, "config: sacb.kmeans_max_iter must be >= 1");
    check(sacb_kmeans_tol > 0.0, "config: sacb.kmeans_tol must be > 0");
    check(match_window % 2 == 1 && match_window >= 1,
          "config: match.window must be odd");
    check(ncc_window % 2 == 1 && ncc_window >= 1,
          "config: loss.ncc_window must be odd");
    if (data_dir.empty()) {
        check(synth_size >= 16 && synth_size % 16 == 0,
              "config: data.synth_size must be a multiple of 16 and >= 16");
        check(synth_max_disp >= 0.0, "config: data.synth_max_disp must be >= 0");
        check(synth_sigma > 0.0, "config: data.synth_sigma must be > 0");
    }
    check(!checkpoint_path.empty(), "config: checkpoint.path must be set");
    check(checkpoint_every >= 0, "config: checkpoint.every must be >= 0");
}

bool TrainConfig::sacb_enabled(int scale) const {
    return std::find(sacb_scales.begin(), sacb_scales.end(), scale) !=
           sacb_scales.end();
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string TrainConfig::serialize() const {
    std::ostringstream os;
    os << "lr = " << fmt_double(lr) << "\n";
    os << "iterations = " << iterations << "\n";
    os << "lambda = " << fmt_double(lambda) << "\n";
    os << "seed = " << seed << "\n";
    os << "encoder.channels = " << join_ints(encoder_channels) << "\n";
    os << "encoder.kernel_size = " << encoder_kernel << "\n";
    os << "sacb.scales = " << join_ints(sacb_scales) << "\n";
    os << "sacb.clusters = " << sacb_clusters << "\n";
    os << "sacb.mode = " << context_mode_name(sacb_mode) << "\n";
    os << "sacb.share_streams = " << (sacb_share_streams ? "true" : "false") << "\n";
    os << "sacb.kmeans_max_iter = " << sacb_kmeans_max_iter << "\n";
    os << "sacb.kmeans_tol = " << fmt_double(sacb_kmeans_tol) << "\n";
    os << "sacb.detach_centroids = " << (sacb_detach_centroids ? "true" : "false")
       << "\n";
    os << "match.window = " << match_window << "\n";
    os << "loss.ncc_window = " << ncc_window << "\n";
    os << "loss.ncc_mean = " << (ncc_mean ? "true" : "false") << "\n";
    if (!data_dir.empty()) os << "data.dir = " << data_dir << "\n";
    os << "data.synth_seed = " << synth_seed << "\n";
    os << "data.synth_size = " << synth_size << "\n";
    os << "data.synth_max_disp = " << fmt_double(synth_max_disp) << "\n";
    os << "data.synth_sigma = " << fmt_double(synth_sigma) << "\n";
    os << "checkpoint.path = " << checkpoint_path << "\n";
    os << "checkpoint.every = " << checkpoint_every << "\n";
    os << "trace.path = " << trace_path << "\n";
    return os.str();
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        check(eq != std::string::npos, "config: line " + std::to_string(lineno) +
                                           " is not a key=value pair");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        check(!key.empty(), "config: empty key at line " + std::to_string(lineno));

        if (key == "lr") {
            cfg.lr = parse_num(val, key, [](const std::string& s) { return std::stod(s); });
        } else if (key == "iterations") {
            cfg.iterations = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "lambda") {
            cfg.lambda = parse_num(val, key, [](const std::string& s) { return std::stod(s); });
        } else if (key == "seed") {
            cfg.seed = parse_num(val, key, [](const std::string& s) { return std::stoull(s); });
        } else if (key == "encoder.channels") {
            cfg.encoder_channels = parse_int_list(val, key);
        } else if (key == "encoder.kernel_size") {
            cfg.encoder_kernel = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "sacb.scales") {
            cfg.sacb_scales = parse_int_list(val, key);
        } else if (key == "sacb.clusters") {
            cfg.sacb_clusters = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "sacb.mode") {
            cfg.sacb_mode = parse_context_mode(val);
        } else if (key == "sacb.share_streams") {
            cfg.sacb_share_streams = parse_bool(val, key);
        } else if (key == "sacb.kmeans_max_iter") {
            cfg.sacb_kmeans_max_iter = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "sacb.kmeans_tol") {
            cfg.sacb_kmeans_tol = parse_num(val, key, [](const std::string& s) { return std::stod(s); });
        } else if (key == "sacb.detach_centroids") {
            cfg.sacb_detach_centroids = parse_bool(val, key);
        } else if (key == "match.window") {
            cfg.match_window = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "loss.ncc_window") {
            cfg.ncc_window = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "loss.ncc_mean") {
            cfg.ncc_mean = parse_bool(val, key);
        } else if (key == "data.dir") {
            cfg.data_dir = val;
        } else if (key == "data.synth_seed") {
            cfg.synth_seed = parse_num(val, key, [](const std::string& s) { return std::stoull(s); });
        } else if (key == "data.synth_size") {
            cfg.synth_size = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "data.synth_max_disp") {
            cfg.synth_max_disp = parse_num(val, key, [](const std::string& s) { return std::stod(s); });
        } else if (key == "data.synth_sigma") {
            cfg.synth_sigma = parse_num(val, key, [](const std::string& s) { return std::stod(s); });
        } else if (key == "checkpoint.path") {
            cfg.checkpoint_path = val;
        } else if (key == "checkpoint.every") {
            cfg.checkpoint_every = parse_num(val, key, [](const std::string& s) { return std::stoi(s); });
        } else if (key == "trace.path") {
            cfg.trace_path = val;
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "' at line " +
                                        std::to_string(lineno));
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace sacreg
