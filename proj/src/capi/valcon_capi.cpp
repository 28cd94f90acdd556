#include "valcon/valcon.h"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <cstring>
#include <memory>
#include <fstream>
#include <sstream>
#include <string>

#include "commands.hpp"
#include "divergence.hpp"
#include "text_util.hpp"

using valcon::Error;
using valcon::ErrorKind;
using json = nlohmann::json;
namespace fs = std::filesystem;

struct vc_corpus {
    valcon::Corpus corpus;
};

struct vc_mock_server {
    std::unique_ptr<valcon::MockServer> server;
    std::string base_url;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_message;

vc_status status_of(valcon::ExitCode c) { return static_cast<vc_status>(static_cast<int>(c)); }

vc_status set_error(vc_status s, const std::string& message) {
    g_last_error = message;
    return s;
}

// Runs f, mapping exceptions onto status codes and the thread's last error.
template <typename F>
vc_status guarded(F&& f) {
    try {
        g_last_error.clear();
        return f();
    } catch (const Error& e) {
        return set_error(status_of(valcon::exit_code_for(e.kind())), e.what());
    } catch (const json::exception& e) {
        return set_error(VC_ERR_CONFIG, e.what());
    } catch (const std::exception& e) {
        return set_error(VC_ERR_OTHER, e.what());
    } catch (...) {
        return set_error(VC_ERR_OTHER, "unknown error");
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::vector<std::string> split_list(const char* s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char* p = s; ; ++p) {
        if (*p == ',' || *p == '\0') {
            out.push_back(valcon::trim(cur));
            cur.clear();
            if (*p == '\0') break;
        } else {
            cur += *p;
        }
    }
    return out;
}

void apply_overrides(json& j, const vc_overrides* o) {
    if (!o) return;
    if (o->abstain >= 0) j["abstain"] = o->abstain != 0;
    if (o->in_context_example >= 0) j["in_context_example"] = o->in_context_example != 0;
    if (o->use_cases) j["use_cases"] = split_list(o->use_cases);
    if (o->languages) j["languages"] = split_list(o->languages);
    if (o->value_conditions) {
        auto values = split_list(o->value_conditions);
        for (auto& v : values) {
            if (v == "none") v.clear();
        }
        j["value_conditions"] = values;
    }
}

vc_status run(const char* command, const std::string& config_text, const fs::path& base_dir,
              const vc_overrides* overrides, char** summary_json) {
    if (summary_json) *summary_json = nullptr;
    valcon::CommandOutcome outcome;
    const vc_status status = guarded([&] {
        if (!command) valcon::fail(ErrorKind::config, "no command given");
        json j;
        try {
            j = json::parse(config_text);
        } catch (const json::parse_error& e) {
            valcon::fail(ErrorKind::config, std::string("config is not JSON: ") + e.what());
        }
        apply_overrides(j, overrides);
        valcon::RunConfig config = valcon::run_config_from_json(j, base_dir);
        if (overrides && overrides->output_dir) config.output_dir = fs::absolute(overrides->output_dir);
        outcome = valcon::run_command(command, config);
        return outcome.code == valcon::ExitCode::ok ? VC_OK : set_error(status_of(outcome.code), outcome.message);
    });
    if (status != VC_OK && outcome.message.empty()) outcome.message = g_last_error;
    g_last_message = outcome.message;
    if (summary_json) {
        json files = json::array();
        for (const auto& f : outcome.files) files.push_back(f.string());
        const json doc{{"status", static_cast<int>(status)},
                       {"message", outcome.message},
                       {"summary", outcome.summary},
                       {"files", files}};
        *summary_json = dup_string(doc.dump(2));
    }
    return status;
}

std::vector<valcon::Distribution> rows_of(const double* probs, size_t n_dists, size_t n_labels) {
    valcon::require(probs != nullptr && n_dists > 0 && n_labels > 0, "empty distribution matrix");
    std::vector<std::string> labels;
    for (size_t k = 0; k < n_labels; ++k) labels.push_back(std::to_string(k));
    std::vector<valcon::Distribution> out;
    for (size_t i = 0; i < n_dists; ++i) {
        out.emplace_back(labels, std::vector<double>(probs + i * n_labels, probs + (i + 1) * n_labels));
    }
    return out;
}

}  // namespace

extern "C" {

const char* vc_version(void) { return "0.1.0"; }

const char* vc_last_error(void) { return g_last_error.c_str(); }

const char* vc_last_message(void) { return g_last_message.c_str(); }

void vc_string_free(char* s) { std::free(s); }

vc_status vc_set_log_level(const char* level) {
    return guarded([&] {
        valcon::require(level != nullptr, "null log level");
        const auto l = spdlog::level::from_str(level);
        if (l == spdlog::level::off && std::string(level) != "off") {
            valcon::fail(ErrorKind::config, std::string("unknown log level '") + level + "'");
        }
        spdlog::set_level(l);
        return VC_OK;
    });
}

void vc_overrides_init(vc_overrides* o) {
    if (!o) return;
    o->abstain = -1;
    o->in_context_example = -1;
    o->use_cases = nullptr;
    o->languages = nullptr;
    o->value_conditions = nullptr;
    o->output_dir = nullptr;
}

vc_status vc_run_command(const char* command, const char* config_json, const char* base_dir,
                         const vc_overrides* overrides, char** summary_json) {
    return run(command, config_json ? config_json : "{}", base_dir ? fs::path(base_dir) : fs::path{}, overrides,
               summary_json);
}

vc_status vc_run_command_file(const char* command, const char* config_path, const vc_overrides* overrides,
                              char** summary_json) {
    if (summary_json) *summary_json = nullptr;
    if (!config_path) return set_error(VC_ERR_CONFIG, "no config path given");
    std::ifstream in(config_path, std::ios::binary);
    if (!in) return set_error(VC_ERR_CONFIG, std::string("cannot read config ") + config_path);
    std::ostringstream text;
    text << in.rdbuf();
    return run(command, text.str(), fs::absolute(config_path).parent_path(), overrides, summary_json);
}

#define VC_COMMAND(name)                                                                      \
    vc_status vc_cmd_##name(const char* config_json, const char* base_dir, char** summary_json) { \
        return vc_run_command(#name, config_json, base_dir, nullptr, summary_json);           \
    }
VC_COMMAND(generate)
VC_COMMAND(survey)
VC_COMMAND(judge)
VC_COMMAND(analyze)
VC_COMMAND(simulate)
VC_COMMAND(report)
VC_COMMAND(stats)
#undef VC_COMMAND

vc_status vc_dd_divergence(const double* probs, size_t n_dists, size_t n_labels, double* out) {
    return guarded([&] {
        valcon::require(out != nullptr, "null output");
        const auto rows = rows_of(probs, n_dists, n_labels);
        *out = valcon::dd_divergence(rows);
        return VC_OK;
    });
}

vc_status vc_js_centroid(const double* probs, size_t n_dists, size_t n_labels, double* centroid_out) {
    return guarded([&] {
        valcon::require(centroid_out != nullptr, "null output");
        const auto rows = rows_of(probs, n_dists, n_labels);
        const auto sol = valcon::js_centroid(rows);
        std::copy(sol.centroid.probs().begin(), sol.centroid.probs().end(), centroid_out);
        return VC_OK;
    });
}

double vc_dd_upper_bound(size_t n_labels) {
    try {
        return valcon::dd_upper_bound(n_labels);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return -1.0;
    }
}

vc_status vc_corpus_load(const char* path, vc_corpus** out) {
    return guarded([&] {
        valcon::require(path != nullptr && out != nullptr, "null argument");
        *out = nullptr;
        auto c = std::make_unique<vc_corpus>();
        c->corpus = valcon::load_corpus(path);
        *out = c.release();
        return VC_OK;
    });
}

size_t vc_corpus_item_count(const vc_corpus* c) { return c ? c->corpus.items.size() : 0; }

size_t vc_corpus_topic_count(const vc_corpus* c) { return c ? c->corpus.topics.size() : 0; }

vc_status vc_corpus_stats_csv(const vc_corpus* c, char** csv_out) {
    return guarded([&] {
        valcon::require(c != nullptr && csv_out != nullptr, "null argument");
        *csv_out = dup_string(valcon::corpus_stats_csv(valcon::corpus_stats(c->corpus)));
        return VC_OK;
    });
}

void vc_corpus_free(vc_corpus* c) { delete c; }

vc_status vc_mock_server_start(const char* respondent_path, const char* corpus_path, const char* pvq_paths,
                               const char* host, int port, vc_mock_server** out) {
    return guarded([&] {
        valcon::require(respondent_path != nullptr && out != nullptr, "respondent path and output are required");
        *out = nullptr;
        auto resp = valcon::load_respondent(respondent_path);
        valcon::Corpus corpus;
        if (corpus_path && *corpus_path) corpus = valcon::load_corpus(corpus_path);
        std::vector<valcon::PvqItem> pvq;
        if (pvq_paths && *pvq_paths) {
            for (const auto& p : split_list(pvq_paths)) {
                auto items = valcon::load_pvq_items(p);
                pvq.insert(pvq.end(), items.begin(), items.end());
            }
        }
        auto s = std::make_unique<vc_mock_server>();
        s->server = std::make_unique<valcon::MockServer>(std::move(resp), std::move(corpus), std::move(pvq));
        s->server->start(host ? host : "127.0.0.1", port);
        s->base_url = s->server->base_url();
        *out = s.release();
        return VC_OK;
    });
}

int vc_mock_server_port(const vc_mock_server* s) { return s ? s->server->port() : -1; }

const char* vc_mock_server_base_url(const vc_mock_server* s) { return s ? s->base_url.c_str() : ""; }

size_t vc_mock_server_requests(const vc_mock_server* s) { return s ? s->server->requests_served() : 0; }

void vc_mock_server_stop(vc_mock_server* s) {
    if (!s) return;
    s->server->stop();
    delete s;
}

}  // extern "C"
