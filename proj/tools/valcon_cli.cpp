#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "valcon/valcon.h"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

std::string json_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

struct Switches {
    std::string config;
    std::string corpus;  // stats shortcut
    bool abstain = false;
    bool no_abstain = false;
    bool in_context = false;
    std::vector<std::string> use_cases;
    std::vector<std::string> languages;
    std::vector<std::string> value_conditions;
    std::string out;
    bool json = false;
};

int run(const std::string& command, const Switches& sw) {
    vc_overrides o;
    vc_overrides_init(&o);
    if (sw.abstain) o.abstain = 1;
    if (sw.no_abstain) o.abstain = 0;
    if (sw.in_context) o.in_context_example = 1;
    const std::string use_cases = join(sw.use_cases), languages = join(sw.languages),
                      values = join(sw.value_conditions);
    if (!sw.use_cases.empty()) o.use_cases = use_cases.c_str();
    if (!sw.languages.empty()) o.languages = languages.c_str();
    if (!sw.value_conditions.empty()) o.value_conditions = values.c_str();
    if (!sw.out.empty()) o.output_dir = sw.out.c_str();

    char* summary = nullptr;
    vc_status status;
    if (!sw.config.empty()) {
        status = vc_run_command_file(command.c_str(), sw.config.c_str(), &o, &summary);
    } else if (command == "stats" && !sw.corpus.empty()) {
        const std::string config = "{\"corpus\": " + json_string(sw.corpus) + ", \"output_dir\": \".\"}";
        status = vc_run_command(command.c_str(), config.c_str(), nullptr, &o, &summary);
    } else {
        std::fprintf(stderr, "%s needs --config%s\n", command.c_str(), command == "stats" ? " or --corpus" : "");
        return VC_ERR_CONFIG;
    }
    if (summary && sw.json) std::printf("%s\n", summary);
    vc_string_free(summary);
    if (status == VC_OK) {
        if (!sw.json) std::printf("%s\n", vc_last_message());
    } else {
        std::fprintf(stderr, "error: %s\n", vc_last_error());
    }
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Value consistency measurement for question-answering models"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    Switches sw;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"generate", "Generate a corpus by prompting the generator endpoint"},
        {"survey", "Probe every subject endpoint over the corpus and append to the record log"},
        {"judge", "Classify open-ended generations with the judge endpoints"},
        {"analyze", "Compute inconsistency scores, support and steerability from the record log"},
        {"simulate", "Run the full pipeline against a spawned synthetic respondent"},
        {"report", "Render SVG bar charts and CSV from the last analysis"},
        {"stats", "Print per-language/country corpus statistics"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", sw.config, "Run config JSON file")->check(CLI::ExistingFile);
        sub->add_option("-o,--out", sw.out, "Output directory (overrides output_dir)");
        sub->add_flag("--json", sw.json, "Print the full JSON summary");
        if (name == "stats") {
            sub->add_option("--corpus", sw.corpus, "Corpus file (instead of a config)")->check(CLI::ExistingFile);
        }
        if (name == "survey" || name == "simulate" || name == "analyze" || name == "judge") {
            sub->add_flag("--abstain", sw.abstain, "Offer the abstention option");
            sub->add_flag("--no-abstain", sw.no_abstain, "Withhold the abstention option");
            sub->add_flag("--in-context-example", sw.in_context, "Prepend the worked multiple-choice example");
            sub->add_option("--use-case", sw.use_cases, "multiple_choice (mc) and/or open_ended (open)")
                ->delimiter(',');
            sub->add_option("--languages", sw.languages, "Languages in scope, e.g. eng,ger,chi")->delimiter(',');
            sub->add_option("--value-condition", sw.value_conditions,
                            "Steering values; 'none' is the unsteered baseline")
                ->delimiter(',');
        }
    }

    std::string respondent, corpus, pvq, host = "127.0.0.1";
    int port = 8089;
    CLI::App* serve = app.add_subcommand("serve-mock", "Serve a synthetic respondent over the chat-completion wire format");
    serve->add_option("--respondent", respondent, "Respondent JSON file")->required()->check(CLI::ExistingFile);
    serve->add_option("--corpus", corpus, "Corpus whose items the mock answers")->check(CLI::ExistingFile);
    serve->add_option("--pvq", pvq, "Comma-separated PVQ item files");
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--port", port, "Port; 0 picks a free one")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : VC_ERR_CONFIG;
    }
    if (vc_set_log_level(log_level.c_str()) != VC_OK) {
        std::fprintf(stderr, "error: %s\n", vc_last_error());
        return VC_ERR_CONFIG;
    }

    if (serve->parsed()) {
        vc_mock_server* server = nullptr;
        const vc_status s = vc_mock_server_start(respondent.c_str(), corpus.empty() ? nullptr : corpus.c_str(),
                                                 pvq.empty() ? nullptr : pvq.c_str(), host.c_str(), port, &server);
        if (s != VC_OK) {
            std::fprintf(stderr, "error: %s\n", vc_last_error());
            return s;
        }
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::printf("serving %s (Ctrl-C to stop)\n", vc_mock_server_base_url(server));
        std::fflush(stdout);
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        std::printf("served %zu request(s)\n", vc_mock_server_requests(server));
        vc_mock_server_stop(server);
        return 0;
    }
    for (const auto& [name, help] : commands) {
        if (app.get_subcommand(name)->parsed()) return run(name, sw);
    }
    return VC_ERR_CONFIG;
}
