// datg: diagnostics toolkit for scoring reasoning traces against reference
// DAGs, detecting degenerate generations, driving test-time retries, and
// aggregating results -- runnable fully offline via a record/replay gateway.

#include <atomic>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "datg/datg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::vector<json> read_jsonl(const std::string& path) {
    std::vector<json> lines;
    std::istringstream in(datg::detail::read_file(path));
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (datg::detail::trim(line).empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded())
            throw datg::MalformedDocument(path + ":" + std::to_string(lineno) +
                                          ": not valid JSON");
        lines.push_back(std::move(doc));
    }
    return lines;
}

void write_output(const std::string& out_path, const std::string& bytes) {
    if (out_path.empty()) {
        std::cout << bytes;
        std::cout.flush();
    } else {
        datg::detail::write_file_atomic(out_path, bytes);
    }
}

std::string resolve_relative(const std::string& base_file, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_file).parent_path() / p).string();
}

// Accepts a single-object JSON file or a JSON-lines file.
datg::TraceDocument load_trace(const std::string& path, const std::string& trace_id) {
    std::string bytes = datg::detail::read_file(path);
    json whole = json::parse(bytes, nullptr, false);
    if (whole.is_object()) {
        datg::TraceDocument trace = datg::TraceDocument::from_json(whole);
        if (trace_id.empty() || trace.trace_id() == trace_id) return trace;
        throw datg::UsageError("trace '" + trace_id + "' not found in " + path);
    }
    for (const json& doc : read_jsonl(path)) {
        datg::TraceDocument trace = datg::TraceDocument::from_json(doc);
        if (trace_id.empty() || trace.trace_id() == trace_id) return trace;
    }
    throw datg::UsageError("trace '" + trace_id + "' not found in " + path);
}

// Shared command-line state resolved into a RunConfig (flags > env > file >
// defaults).
struct CommonFlags {
    std::string config_file;
    std::string cache_dir, endpoint, model, templates, prompts;
    size_t jobs = 0;

    datg::RunConfig resolve() const {
        json file = json::object();
        if (!config_file.empty()) {
            file = json::parse(datg::detail::read_file(config_file), nullptr, false);
            if (file.is_discarded())
                throw datg::ConfigError("config file is not valid JSON: " + config_file);
        }
        json flags = json::object();
        if (!cache_dir.empty()) flags["paths"]["cache"] = cache_dir;
        if (!endpoint.empty()) flags["gateway"]["endpoint"] = endpoint;
        if (!model.empty()) flags["gateway"]["model"] = model;
        if (!templates.empty()) flags["paths"]["templates"] = templates;
        if (!prompts.empty()) flags["paths"]["prompts"] = prompts;
        if (jobs > 0) flags["jobs"] = jobs;
        return datg::resolve_config(file, datg::detail_config::process_env(), flags);
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file");
        cmd->add_option("--cache-dir", cache_dir, "gateway response cache directory");
        cmd->add_option("--endpoint", endpoint, "chat-completions endpoint URL");
        cmd->add_option("--model", model, "model name sent to the provider");
        cmd->add_option("--templates", templates, "language template JSON file");
        cmd->add_option("--prompts", prompts, "prompt data directory");
        cmd->add_option("--jobs", jobs, "parallel workers for batch commands");
    }
};

// ---------------------------------------------------------------------------
// validate-dag
// ---------------------------------------------------------------------------

int cmd_validate_dag(const std::vector<std::string>& files) {
    bool all_ok = true;
    std::string out;
    for (const std::string& file : files) {
        datg::ReferenceDag dag = datg::parse_dag(datg::detail::read_file(file));
        datg::ValidationReport report = datg::validate_dag(dag);
        ordered_json doc;
        doc["file"] = file;
        doc["report"] = datg::to_json(report);
        out += doc.dump() + "\n";
        if (!report.ok) all_ok = false;
    }
    write_output("", out);
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

ordered_json card_with_meta(const datg::ScoreCard& card, const datg::TraceDocument& trace) {
    ordered_json doc = datg::to_json(card);
    ordered_json meta = ordered_json::object();
    for (const auto& [k, v] : trace.meta()) meta[k] = v;
    doc["meta"] = std::move(meta);
    std::string gold = trace.meta_value("gold_answer");
    if (!gold.empty()) {
        std::optional<std::string> predicted;
        if (trace.final_response()) predicted = datg::extract_boxed(*trace.final_response());
        if (!predicted) predicted = datg::extract_boxed(trace.text());
        doc["correct"] = predicted.has_value() && datg::verify_answer(*predicted, gold);
    }
    return doc;
}

struct ScoreTask {
    std::string trace_file, trace_id, dag_file, alignment_file;
};

std::string score_one(const ScoreTask& task, datg::Gateway* gateway, datg::GatewayMode mode,
                      const datg::PromptLibrary* prompts) {
    datg::ReferenceDag dag = datg::parse_dag(datg::detail::read_file(task.dag_file));
    datg::ValidationReport report = datg::validate_dag(dag);
    if (!report.ok)
        throw datg::SchemaViolation("DAG failed validation: " + task.dag_file + ": " +
                                    datg::to_json(report).dump());
    if (dag.source_id.empty()) dag.source_id = fs::path(task.dag_file).filename().string();
    datg::TraceDocument trace = load_trace(task.trace_file, task.trace_id);

    std::string alignment_text;
    if (!task.alignment_file.empty()) {
        alignment_text = datg::detail::read_file(task.alignment_file);
    } else {
        if (!gateway) throw datg::UsageError("no alignment file and no gateway configured");
        datg::ChatRequest request = datg::build_align_request(
            *prompts, dag, trace, trace.meta_value("language", "en"));
        alignment_text = gateway->complete(request, mode).content;
    }
    datg::AlignmentRecord alignment = datg::parse_alignment(alignment_text, dag);
    if (alignment.dag_ref.empty()) alignment.dag_ref = dag.source_id;
    datg::ScoreCard card = datg::score_trace(trace, dag, alignment);
    return card_with_meta(card, trace).dump();
}

// One CSV line per card: trace_id, dag_ref, car, pmf, har.
std::string card_csv_line(const std::string& card_json) {
    json doc = json::parse(card_json);
    datg::ScoreCard card = datg::card_from_json(doc);
    return datg::to_csv_row(card);
}

int cmd_score(const CommonFlags& common, const std::string& dag_file,
              const std::string& trace_file, const std::string& trace_id,
              const std::string& alignment_file, const std::string& manifest,
              const std::string& gateway_mode, const std::string& format,
              const std::string& out_path) {
    datg::RunConfig cfg = common.resolve();
    if (format != "json" && format != "csv")
        throw datg::UsageError("score --format must be json or csv");
    auto render = [&](const std::vector<std::string>& cards) {
        std::string out;
        if (format == "csv") out += "trace_id,dag_ref,car,pmf,har\n";
        for (const std::string& c : cards)
            out += (format == "csv" ? card_csv_line(c) : c) + "\n";
        return out;
    };
    std::optional<datg::Gateway> gateway;
    std::optional<datg::PromptLibrary> prompts;
    datg::GatewayMode mode = datg::parse_gateway_mode(gateway_mode);
    auto ensure_gateway = [&] {
        if (!gateway) {
            gateway.emplace(cfg.gateway);
            prompts = datg::PromptLibrary::load(cfg.paths.prompts);
        }
    };

    if (manifest.empty()) {
        if (dag_file.empty() || trace_file.empty())
            throw datg::UsageError("score needs --dag and --trace (or --manifest)");
        ScoreTask task{trace_file, trace_id, dag_file, alignment_file};
        if (alignment_file.empty()) ensure_gateway();
        std::string card = score_one(task, gateway ? &*gateway : nullptr, mode,
                                     prompts ? &*prompts : nullptr);
        write_output(out_path, render({card}));
        return 0;
    }

    std::vector<ScoreTask> tasks;
    bool any_gateway = false;
    for (const json& line : read_jsonl(manifest)) {
        ScoreTask task;
        task.trace_file = resolve_relative(manifest, line.at("trace_file").get<std::string>());
        task.trace_id = line.value("trace_id", "");
        task.dag_file = resolve_relative(manifest, line.at("dag_file").get<std::string>());
        if (line.contains("alignment_file"))
            task.alignment_file =
                resolve_relative(manifest, line["alignment_file"].get<std::string>());
        else
            any_gateway = true;
        tasks.push_back(std::move(task));
    }
    if (any_gateway) ensure_gateway();

    // fan out per task; output is buffered and emitted in input order
    std::vector<std::string> results(tasks.size());
    std::vector<std::string> errors(tasks.size());
    size_t workers = cfg.jobs > 1 ? std::min(cfg.jobs, tasks.size()) : 1;
    std::atomic<size_t> next{0};
    auto work = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            try {
                results[i] = score_one(tasks[i], gateway ? &*gateway : nullptr, mode,
                                       prompts ? &*prompts : nullptr);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (size_t i = 0; i < tasks.size(); ++i)
        if (!errors[i].empty())
            throw datg::Error("task " + std::to_string(i) + " failed: " + errors[i]);

    write_output(out_path, render(results));
    return 0;
}

// ---------------------------------------------------------------------------
// select-reference
// ---------------------------------------------------------------------------

ordered_json flat_row(const json& card_line) {
    ordered_json row;
    row["trace_id"] = card_line.value("trace_id", "");
    row["dag_ref"] = card_line.value("dag_ref", "");
    row["car"] = card_line.value("car", 0.0);
    row["pmf"] = card_line.value("pmf", 0.0);
    row["har"] = card_line.value("har", 0.0);
    if (card_line.contains("meta") && card_line["meta"].is_object()) {
        for (const char* key : {"language", "difficulty", "model", "direction"}) {
            if (card_line["meta"].contains(key)) row[key] = card_line["meta"][key];
        }
    }
    for (const char* key : {"language", "difficulty", "model", "direction"}) {
        if (card_line.contains(key)) row[key] = card_line[key];
    }
    if (card_line.contains("correct")) row["correct"] = card_line["correct"];
    if (card_line.contains("tokens")) row["tokens"] = card_line["tokens"];
    if (card_line.contains("trials")) row["trials"] = card_line["trials"];
    return row;
}

int cmd_select_reference(const std::string& cards_file, const std::string& out_path) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<json>> by_trace;
    for (const json& line : read_jsonl(cards_file)) {
        std::string trace_id = line.value("trace_id", "");
        if (!by_trace.count(trace_id)) order.push_back(trace_id);
        by_trace[trace_id].push_back(line);
    }
    std::string out;
    for (const std::string& trace_id : order) {
        const auto& lines = by_trace[trace_id];
        std::vector<datg::ScoreCard> cards;
        for (const json& line : lines) cards.push_back(datg::card_from_json(line));
        size_t best = datg::select_best_reference(cards);
        out += flat_row(lines[best]).dump() + "\n";
    }
    write_output(out_path, out);
    return 0;
}

// ---------------------------------------------------------------------------
// ref-diversity
// ---------------------------------------------------------------------------

int cmd_ref_diversity(const std::string& input_file, const std::string& format,
                      const std::string& out_path) {
    std::vector<datg::DiversityObservation> observations;
    for (const json& line : read_jsonl(input_file)) {
        datg::DiversityObservation obs;
        obs.difficulty = line.value("difficulty", "");
        for (const json& card : line.at("cards"))
            obs.candidates.push_back(datg::card_from_json(card));
        observations.push_back(std::move(obs));
    }
    auto rows = datg::reference_diversity(observations);
    datg::Table table;
    table.columns = {"difficulty", "best_other_car", "best_other_pmf", "best_other_har", "n"};
    auto cell = [](double mean, double sd) {
        return datg::format_fraction(mean) + " ± " + datg::format_fraction(sd);
    };
    for (const auto& r : rows) {
        table.rows.push_back({r.difficulty, cell(r.car_mean, r.car_sd),
                              cell(r.pmf_mean, r.pmf_sd), cell(r.har_mean, r.har_sd),
                              std::to_string(r.n)});
    }
    write_output(out_path, datg::emit(table, format));
    return 0;
}

// ---------------------------------------------------------------------------
// detect-loop
// ---------------------------------------------------------------------------

int cmd_detect_loop(const CommonFlags& common, const std::string& text_file, size_t budget) {
    datg::RunConfig cfg = common.resolve();
    datg::DetectorReport report =
        datg::should_abort(datg::detail::read_file(text_file), budget, cfg.detector);
    write_output("", datg::to_json(report).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// run-retry
// ---------------------------------------------------------------------------

std::unique_ptr<datg::Generator> make_generator(const std::string& spec, uint64_t seed,
                                                std::optional<datg::Gateway>& gateway,
                                                const datg::RunConfig& cfg,
                                                const std::string& gateway_mode) {
    if (spec.rfind("scripted:", 0) == 0) {
        std::string path = spec.substr(std::string("scripted:").size());
        json doc = json::parse(datg::detail::read_file(path));
        std::string seed_key = std::to_string(seed);
        if (doc.is_object() && doc.contains(seed_key))
            return std::make_unique<datg::ScriptedGenerator>(
                datg::ScriptedGenerator::from_json(doc[seed_key]));
        return std::make_unique<datg::ScriptedGenerator>(
            datg::ScriptedGenerator::from_json(doc));
    }
    if (spec == "gateway") {
        if (!gateway) gateway.emplace(cfg.gateway);
        return std::make_unique<datg::GatewayGenerator>(*gateway,
                                                        datg::parse_gateway_mode(gateway_mode));
    }
    throw datg::UsageError("unknown generator: " + spec + " (want scripted:<file> or gateway)");
}

int cmd_run_retry(const CommonFlags& common, const std::string& method,
                  const std::string& difficulty, size_t budget_override,
                  const std::string& generator_spec, const std::string& seeds_csv,
                  const std::string& problem_file, const std::string& gateway_mode,
                  const std::string& out_path) {
    datg::RunConfig cfg = common.resolve();
    size_t budget = budget_override > 0 ? budget_override : cfg.budget_for(difficulty);

    std::vector<uint64_t> seeds = cfg.seeds;
    if (!seeds_csv.empty()) {
        seeds.clear();
        for (const auto& part : datg::detail::split(seeds_csv, ','))
            if (!datg::detail::trim(part).empty())
                seeds.push_back(std::stoull(datg::detail::trim(part)));
    }

    json problem = json::parse(datg::detail::read_file(problem_file));
    datg::PromptParts reasoning{problem.value("system", ""), problem.value("user", ""),
                                problem.value("assistant_prefix", "")};
    datg::PromptParts scaffold_prompt = reasoning;
    if (problem.contains("scaffold_system"))
        scaffold_prompt.system = problem["scaffold_system"].get<std::string>();
    scaffold_prompt.assistant_prefix = "<think>\n<execution_state>\nKnown:\n-";

    datg::RetryConfig retry_cfg;
    retry_cfg.detector = cfg.detector;
    retry_cfg.target_language_starter = problem.value("starter", "");

    std::optional<datg::Gateway> gateway;
    std::string out;
    std::vector<datg::RetrySession> sessions;
    for (uint64_t seed : seeds) {
        auto generator = make_generator(generator_spec, seed, gateway, cfg, gateway_mode);
        datg::RetrySession session;
        if (method == "base") {
            session = datg::run_base(reasoning, *generator, budget, retry_cfg);
        } else if (method == "loop") {
            session = datg::run_loop_retry(reasoning, *generator, budget, retry_cfg);
        } else if (method == "formula") {
            session = datg::run_formula_retry(scaffold_prompt, reasoning, *generator, budget,
                                              retry_cfg);
        } else {
            throw datg::UsageError("unknown method: " + method + " (want base|loop|formula)");
        }
        ordered_json line = datg::to_json(session);
        line["seed"] = seed;
        line["budget"] = budget;
        out += line.dump() + "\n";
        sessions.push_back(std::move(session));
    }
    write_output(out_path, out);
    if (!out_path.empty())
        write_output("", datg::to_json(datg::account_costs(sessions)).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// compliance
// ---------------------------------------------------------------------------

int cmd_compliance(const std::string& traces_file, const std::string& requested_lang,
                   const std::string& format, bool with_table, const std::string& out_path) {
    datg::ScriptRangeDetector detector;
    std::string out;
    struct CellKey {
        std::string pair, model, difficulty;
        bool operator<(const CellKey& o) const {
            return std::tie(pair, model, difficulty) < std::tie(o.pair, o.model, o.difficulty);
        }
    };
    std::map<CellKey, std::pair<size_t, size_t>> cells;  // consistent / total

    for (const json& line : read_jsonl(traces_file)) {
        datg::TraceDocument trace = datg::TraceDocument::from_json(line);
        std::string lang =
            requested_lang.empty() ? trace.meta_value("language", "en") : requested_lang;
        datg::ComplianceResult result = datg::check_compliance(trace, lang, detector);
        ordered_json doc = datg::to_json(result);
        doc["trace_id"] = trace.trace_id();
        out += doc.dump() + "\n";

        CellKey key{"en-" + lang, trace.meta_value("model", "?"),
                    trace.meta_value("difficulty", "?")};
        auto& [consistent, total] = cells[key];
        if (result.consistent) ++consistent;
        ++total;
    }
    write_output(out_path, out);

    if (with_table) {
        // per-cell percentage table: one row per pair, Low/Med/High per model
        std::vector<std::string> models, pairs;
        for (const auto& [key, counts] : cells) {
            if (std::find(models.begin(), models.end(), key.model) == models.end())
                models.push_back(key.model);
            if (std::find(pairs.begin(), pairs.end(), key.pair) == pairs.end())
                pairs.push_back(key.pair);
        }
        std::sort(models.begin(), models.end());
        std::sort(pairs.begin(), pairs.end());
        const char* difficulties[] = {"low", "medium", "high"};
        datg::Table table;
        table.columns = {"pair"};
        for (const auto& m : models)
            for (const char* d : difficulties) table.columns.push_back(m + " " + d);
        for (const auto& p : pairs) {
            std::vector<std::string> row{p};
            for (const auto& m : models) {
                for (const char* d : difficulties) {
                    auto it = cells.find(CellKey{p, m, d});
                    if (it == cells.end() || it->second.second == 0) {
                        row.push_back(datg::kEmptyCell);
                    } else {
                        double pct =
                            100.0 * double(it->second.first) / double(it->second.second);
                        row.push_back(datg::format_percent(pct));
                    }
                }
            }
            table.rows.push_back(std::move(row));
        }
        write_output("", datg::emit(table, format));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// probe-prompts
// ---------------------------------------------------------------------------

int cmd_probe_prompts(const CommonFlags& common, const std::string& setting,
                      const std::string& lang, const std::string& problem_en_file,
                      const std::string& problem_x_file) {
    datg::RunConfig cfg = common.resolve();
    datg::PromptTemplateSet templates =
        cfg.paths.templates.empty() ? datg::PromptTemplateSet::builtin()
                                    : datg::PromptTemplateSet::load(cfg.paths.templates);
    std::string problem_en =
        problem_en_file.empty() ? "" : datg::detail::read_file(problem_en_file);
    std::string problem_x =
        problem_x_file.empty() ? "" : datg::detail::read_file(problem_x_file);
    datg::ChatRequest request = datg::build_probe_request(
        datg::parse_probe_setting(setting), problem_en, problem_x, lang, templates);
    write_output("", request.to_json().dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::string& input_file, const std::string& group_by,
               const std::string& metrics_csv, bool stratify,
               const std::string& resource_metric, bool wilson, const std::string& format,
               const std::string& out_path) {
    std::vector<datg::Row> rows;
    std::vector<datg::RecordRow> records;
    for (const json& line : read_jsonl(input_file)) {
        datg::RecordRow record = datg::RecordRow::from_json(line);
        records.push_back(record);
        rows.push_back(record.to_row());
    }

    std::string out;
    if (stratify) {
        out += datg::emit(datg::stratify_correctness(rows), format);
    } else if (!resource_metric.empty()) {
        out += datg::emit(datg::resource_group_average(
                              rows, resource_metric, {"model", "difficulty", "direction"}),
                          format);
    } else {
        std::vector<std::string> keys;
        for (const auto& k : datg::detail::split(group_by, ','))
            if (!k.empty()) keys.push_back(k);
        std::vector<std::string> metrics;
        for (const auto& m : datg::detail::split(metrics_csv, ','))
            if (!m.empty()) metrics.push_back(m);
        datg::Table table = datg::aggregate(rows, keys, metrics);
        if (wilson) {
            // accuracy interval per group from pooled successes over n
            table.columns.push_back("wilson95");
            std::map<std::string, std::pair<size_t, size_t>> counts;
            for (const auto& r : records) {
                if (!r.correct) continue;
                datg::Row row = r.to_row();
                std::string key;
                for (const auto& k : keys) key += row.dims[k] + "\x1f";
                auto& [succ, n] = counts[key];
                if (*r.correct) ++succ;
                ++n;
            }
            for (auto& table_row : table.rows) {
                std::string key;
                for (size_t i = 0; i < keys.size(); ++i) key += table_row[i] + "\x1f";
                auto it = counts.find(key);
                if (it == counts.end() || it->second.second == 0) {
                    table_row.push_back(datg::kEmptyCell);
                } else {
                    auto [lo, hi] = datg::wilson_interval(it->second.first, it->second.second);
                    table_row.push_back("[" + datg::format_fraction(lo) + ", " +
                                        datg::format_fraction(hi) + "]");
                }
            }
        }
        out += datg::emit(table, format);
    }
    write_output(out_path, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reasoning-trace graph diagnostics toolkit"};
    app.require_subcommand(1);

    // validate-dag
    auto* validate = app.add_subcommand("validate-dag", "validate reference DAG files");
    std::vector<std::string> dag_files;
    validate->add_option("files", dag_files, "DAG JSON files")->required();

    // score
    auto* score = app.add_subcommand("score", "score traces against reference DAGs");
    CommonFlags score_common;
    score_common.attach(score);
    std::string score_dag, score_trace_file, score_trace_id, score_alignment, score_manifest,
        score_gateway_mode = "replay", score_format = "json", score_out;
    score->add_option("--dag", score_dag, "reference DAG file");
    score->add_option("--trace", score_trace_file, "trace JSON or JSON-lines file");
    score->add_option("--trace-id", score_trace_id, "trace id within a JSON-lines file");
    score->add_option("--alignment", score_alignment, "alignment JSON file");
    score->add_option("--manifest", score_manifest, "batch manifest (JSON-lines)");
    score->add_option("--gateway-mode", score_gateway_mode, "live|record|replay");
    score->add_option("--format", score_format, "json|csv (csv projects trace_id,dag_ref,car,pmf,har)");
    score->add_option("--out", score_out, "output file (default stdout)");

    // select-reference
    auto* select =
        app.add_subcommand("select-reference", "pick the most compatible reference per trace");
    std::string select_cards, select_out;
    select->add_option("--cards", select_cards, "score card JSON-lines")->required();
    select->add_option("--out", select_out, "output file (default stdout)");

    // ref-diversity
    auto* diversity = app.add_subcommand("ref-diversity", "best-other reference statistics");
    std::string div_input, div_format = "text", div_out;
    diversity->add_option("--input", div_input, "observations JSON-lines")->required();
    diversity->add_option("--format", div_format, "text|csv|json");
    diversity->add_option("--out", div_out, "output file (default stdout)");

    // detect-loop
    auto* detect = app.add_subcommand("detect-loop", "inspect a partial trace for loops");
    CommonFlags detect_common;
    detect_common.attach(detect);
    std::string detect_text;
    size_t detect_budget = 16384;
    detect->add_option("--text", detect_text, "partial trace text file")->required();
    detect->add_option("--budget", detect_budget, "generation budget B (checkpoint B/4)");

    // run-retry
    auto* retry = app.add_subcommand("run-retry", "run a test-time retry session");
    CommonFlags retry_common;
    retry_common.attach(retry);
    std::string retry_method = "base", retry_difficulty = "high", retry_generator, retry_seeds,
                retry_problem, retry_gateway_mode = "replay", retry_out;
    size_t retry_budget = 0;
    retry->add_option("--method", retry_method, "base|loop|formula");
    retry->add_option("--difficulty", retry_difficulty, "low|med|high (sets budget)");
    retry->add_option("--budget", retry_budget, "override token budget B");
    retry->add_option("--generator", retry_generator, "scripted:<file> or gateway")->required();
    retry->add_option("--seeds", retry_seeds, "comma-separated seeds");
    retry->add_option("--problem", retry_problem, "prompt parts JSON file")->required();
    retry->add_option("--gateway-mode", retry_gateway_mode, "live|record|replay");
    retry->add_option("--out", retry_out, "session log JSON-lines file");

    // compliance
    auto* compliance = app.add_subcommand("compliance", "reasoning-language consistency check");
    std::string comp_traces, comp_lang, comp_format = "text", comp_out;
    bool comp_table = false;
    compliance->add_option("--traces", comp_traces, "trace JSON-lines")->required();
    compliance->add_option("--requested-lang", comp_lang,
                           "override the per-trace requested language");
    compliance->add_option("--format", comp_format, "text|csv|json for the table");
    compliance->add_flag("--table", comp_table, "emit the per-cell percentage table");
    compliance->add_option("--out", comp_out, "per-trace output file (default stdout)");

    // probe-prompts
    auto* probe = app.add_subcommand("probe-prompts", "assemble a direction-probe request");
    CommonFlags probe_common;
    probe_common.attach(probe);
    std::string probe_setting, probe_lang, probe_en, probe_x;
    probe->add_option("--setting", probe_setting, "en_en|en_x|x_en|x_x")->required();
    probe->add_option("--lang", probe_lang, "target language code")->required();
    probe->add_option("--problem-en", probe_en, "English problem statement file");
    probe->add_option("--problem-x", probe_x, "target-language problem statement file");

    // report
    auto* report = app.add_subcommand("report", "aggregate result rows into tables");
    std::string rep_input, rep_group = "language,difficulty,model", rep_metrics = "car,pmf,har",
                rep_resource, rep_format = "text", rep_out;
    bool rep_stratify = false, rep_wilson = false;
    report->add_option("--input", rep_input, "result rows JSON-lines")->required();
    report->add_option("--group-by", rep_group, "comma-separated dimensions");
    report->add_option("--metrics", rep_metrics, "comma-separated metrics");
    report->add_flag("--stratify-correctness", rep_stratify, "C/I table per difficulty");
    report->add_option("--resource-groups", rep_resource,
                       "unweighted language-group average of the given metric");
    report->add_flag("--wilson", rep_wilson, "add 95% Wilson intervals for accuracy");
    report->add_option("--format", rep_format, "text|csv|json");
    report->add_option("--out", rep_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return 2;
    }

    try {
        if (*validate) return cmd_validate_dag(dag_files);
        if (*score)
            return cmd_score(score_common, score_dag, score_trace_file, score_trace_id,
                             score_alignment, score_manifest, score_gateway_mode,
                             score_format, score_out);
        if (*select) return cmd_select_reference(select_cards, select_out);
        if (*diversity) return cmd_ref_diversity(div_input, div_format, div_out);
        if (*detect) return cmd_detect_loop(detect_common, detect_text, detect_budget);
        if (*retry)
            return cmd_run_retry(retry_common, retry_method, retry_difficulty, retry_budget,
                                 retry_generator, retry_seeds, retry_problem, retry_gateway_mode,
                                 retry_out);
        if (*compliance)
            return cmd_compliance(comp_traces, comp_lang, comp_format, comp_table, comp_out);
        if (*probe)
            return cmd_probe_prompts(probe_common, probe_setting, probe_lang, probe_en, probe_x);
        if (*report)
            return cmd_report(rep_input, rep_group, rep_metrics, rep_stratify, rep_resource,
                              rep_wilson, rep_format, rep_out);
    } catch (const datg::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const datg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
