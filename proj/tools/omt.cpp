#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "omt/error.hpp"
#include "omt/eval.hpp"
#include "omt/gguf.hpp"
#include "omt/parallel.hpp"
#include "omt/pipeline.hpp"
#include "omt/service.hpp"
#include "omt/text.hpp"
#include "synth.hpp"

namespace {

using namespace omt;
using nlohmann::json;

// Exit codes shared by every command.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitEmptyInput = 2;
constexpr int kExitContextOverflow = 3;

struct LoadFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    if (err->code() == Errc::EmptyInput) return kExitEmptyInput;
    if (err->code() == Errc::ContextOverflow) return kExitContextOverflow;
  }
  return kExitFailure;
}

// Error::what() already leads with the code name.
std::string describe(const std::exception& e) { return e.what(); }

struct ModelArgs {
  std::string model;
  std::string prompts;
  std::string dir = "vi-en";
  int max_tokens = 256;
  float temperature = 0.0f;
  std::uint64_t seed = 0;
  std::size_t ctx = 0;
  std::size_t threads = 0;

  void add_to(CLI::App* app, bool with_dir = true) {
    app->add_option("-m,--model", model, "GGUF model file (default: $OMT_MODEL)");
    app->add_option("--prompts", prompts, "JSON file with system instruction wording");
    if (with_dir) app->add_option("--dir", dir, "vi-en or en-vi")->check(CLI::IsMember({"vi-en", "en-vi"}));
    app->add_option("--max-tokens", max_tokens, "maximum generated tokens per turn");
    app->add_option("--temperature", temperature, "0 for greedy decoding");
    app->add_option("--seed", seed, "sampling seed");
    app->add_option("--ctx", ctx, "context length cap (0: model's own)");
    app->add_option("--threads", threads, "worker threads (0: all cores)");
  }

  std::string model_path() const {
    if (!model.empty()) return model;
    if (const char* env = std::getenv("OMT_MODEL"); env && *env) return env;
    throw LoadFailure("no model given: pass --model or set OMT_MODEL");
  }

  pipeline::SessionOptions session_options() const {
    pipeline::SessionOptions o;
    o.direction = pipeline::parse_direction(dir);
    o.gen.max_new_tokens = max_tokens;
    o.gen.temperature = temperature;
    o.gen.seed = seed;
    o.context_len = ctx;
    return o;
  }
};

struct Loaded {
  std::shared_ptr<const gguf::GgufFile> file;
  std::shared_ptr<const llm::Model> model;
  std::shared_ptr<const tok::Vocab> vocab;
};

Loaded load_model_files(const std::string& path) {
  try {
    Loaded l;
    l.file = std::make_shared<const gguf::GgufFile>(gguf::open(path));
    l.vocab = std::make_shared<const tok::Vocab>(tok::load_vocab(*l.file));
    l.model = std::make_shared<const llm::Model>(llm::load_model(l.file));
    for (const auto& k : l.model->config.defaulted) std::cerr << "note: " << k << " not in file, using default\n";
    return l;
  } catch (const std::exception& e) {
    throw LoadFailure("cannot load " + path + ": " + describe(e));
  }
}

std::shared_ptr<pipeline::Session> open_session(const ModelArgs& args) {
  parallel::set_thread_count(args.threads);
  auto options = args.session_options();
  const Loaded l = load_model_files(args.model_path());
  if (!args.prompts.empty()) {
    options.prompt = pipeline::template_for_file(*l.file, *l.vocab, pipeline::load_wording(args.prompts));
  }
  try {
    return std::make_shared<pipeline::Session>(l.model, l.vocab, options);
  } catch (const std::exception& e) {
    throw LoadFailure(describe(e));
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Plain text, or the target column of a TSV.
std::vector<std::string> read_sentences(const std::string& path) {
  auto lines = read_lines(path);
  for (auto& l : lines) {
    if (const auto tab = l.find('\t'); tab != std::string::npos) l = l.substr(tab + 1);
  }
  return lines;
}

void emit(const std::string& table, const json& j, const std::string& json_path) {
  if (json_path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::cout << table;
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) fail(Errc::IoError, "cannot write " + json_path);
    out << j.dump(2) << '\n';
  }
}

std::string human_bytes(std::uint64_t n) {
  char buf[32];
  if (n >= (1ULL << 30)) {
    std::snprintf(buf, sizeof buf, "%.2f GiB", static_cast<double>(n) / (1ULL << 30));
  } else if (n >= (1ULL << 20)) {
    std::snprintf(buf, sizeof buf, "%.2f MiB", static_cast<double>(n) / (1ULL << 20));
  } else {
    std::snprintf(buf, sizeof buf, "%llu B", static_cast<unsigned long long>(n));
  }
  return buf;
}

std::string short_value(const gguf::MetaValue& v) {
  using gguf::MetaType;
  switch (v.type()) {
    case MetaType::String: {
      const auto& s = v.as_string();
      std::string out = s.size() > 60 ? s.substr(0, 57) + "..." : s;
      text::replace_all(out, "\n", "\\n");
      return "\"" + out + "\"";
    }
    case MetaType::Array: {
      const auto& a = v.as_array();
      return "[" + std::string(gguf::meta_type_name(a.elem_type)) + " x " + std::to_string(a.items.size()) + "]";
    }
    case MetaType::Bool: return v.as_bool() ? "true" : "false";
    case MetaType::F32:
    case MetaType::F64: {
      std::ostringstream o;
      o << v.as_number();
      return o.str();
    }
    default: return std::to_string(v.as_int());
  }
}

int cmd_inspect(const std::string& path, bool as_json) {
  gguf::GgufFile f;
  try {
    f = gguf::open(path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << describe(e) << '\n';
    return kExitFailure;
  }
  const auto report = gguf::validate(f);
  std::map<std::string, std::pair<std::size_t, std::uint64_t>> hist;
  for (const auto& t : f.tensors) {
    auto& h = hist[std::string(quant::type_name(t.type))];
    ++h.first;
    if (!t.opaque()) h.second += t.byte_size();
  }
  if (as_json) {
    json j;
    j["version"] = f.version;
    j["alignment"] = f.alignment;
    j["file_bytes"] = report.stats.file_bytes;
    j["tensor_count"] = f.tensors.size();
    j["metadata_count"] = f.metadata.size();
    for (const auto& [k, v] : f.metadata) j["metadata"][k] = short_value(v);
    for (const auto& [name, h] : hist) j["types"][name] = {{"tensors", h.first}, {"bytes", h.second}};
    j["valid"] = report.ok();
    j["violations"] = json::array();
    for (const auto& v : report.violations) j["violations"].push_back({{"code", v.code}, {"subject", v.subject}, {"message", v.message}});
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "file        " << path << '\n'
              << "version     " << f.version << '\n'
              << "alignment   " << f.alignment << '\n'
              << "size        " << report.stats.file_bytes << " (" << human_bytes(report.stats.file_bytes) << ")\n"
              << "tensors     " << f.tensors.size() << '\n'
              << "metadata    " << f.metadata.size() << " keys\n";
    for (const auto& [k, v] : f.metadata) std::cout << "  " << k << " = " << short_value(v) << '\n';
    std::cout << "types\n";
    for (const auto& [name, h] : hist) {
      std::cout << "  " << name << std::string(name.size() < 8 ? 8 - name.size() : 1, ' ') << h.first << " tensors, "
                << human_bytes(h.second) << '\n';
    }
    if (f.tensors.size() <= 16) {
      for (const auto& t : f.tensors) {
        std::string dims;
        for (auto d : t.dims) dims += (dims.empty() ? "" : "x") + std::to_string(d);
        std::cout << "  " << t.name << "  " << quant::type_name(t.type) << "  " << dims << '\n';
      }
    }
    if (report.ok()) {
      std::cout << "validation  OK\n";
    } else {
      std::cout << "validation  FAILED\n";
      for (const auto& v : report.violations) std::cout << "  " << v.code << ": " << v.message << '\n';
    }
  }
  return report.ok() ? kExitOk : kExitFailure;
}

void print_timing(const pipeline::TranslationTurn& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "[%s] %zu prompt + %zu generated tokens, %.1f ms total, %.1f ms/token%s\n",
                std::string(pipeline::direction_code(t.direction)).c_str(), t.prompt_tokens, t.generated_tokens,
                t.total_ms, t.ms_per_generated_token, t.truncated ? " (truncated)" : "");
  std::cerr << buf;
}

int cmd_translate(const ModelArgs& args, const std::optional<std::string>& text, bool use_stdin) {
  if (!text && !use_stdin) {
    std::cerr << "error: give --text or --stdin\n";
    return kExitFailure;
  }
  if (text && text::trim(*text).empty()) {
    std::cerr << "error: EmptyInput: source text is empty\n";
    return kExitEmptyInput;
  }
  auto session = open_session(args);
  if (text) {
    const auto turn = session->translate(*text);
    std::cout << turn.output_text << '\n';
    print_timing(turn);
    return kExitOk;
  }
  int status = kExitOk;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      const auto turn = session->translate(line);
      std::cout << turn.output_text << '\n' << std::flush;
      print_timing(turn);
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyInput && e.code() != Errc::ContextOverflow) throw;
      // Keep output lines aligned with input lines.
      std::cout << '\n' << std::flush;
      std::cerr << "error: " << describe(e) << '\n';
      if (status == kExitOk) status = exit_code(e);
    }
  }
  return status;
}

volatile std::sig_atomic_t g_interrupted = 0;

extern "C" void on_sigint(int) { g_interrupted = 1; }

int cmd_chat(const ModelArgs& args) {
  auto session = open_session(args);
  struct sigaction sa {};
  sa.sa_handler = on_sigint;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  std::cerr << "commands: /dir toggles direction, /dir vi-en|en-vi sets it, /quit exits\n";
  while (true) {
    g_interrupted = 0;
    std::cout << "[" << pipeline::direction_code(session->direction()) << "] > " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line)) {
      if (g_interrupted && !std::cin.eof()) {
        std::cin.clear();
        std::cout << '\n';
        continue;
      }
      std::cout << '\n';
      return kExitOk;
    }
    const std::string cmd(text::trim(line));
    if (cmd.empty()) continue;
    if (cmd == "/quit" || cmd == "/exit") return kExitOk;
    if (cmd == "/dir") {
      session->set_direction(pipeline::flipped(session->direction()));
      continue;
    }
    if (text::starts_with(cmd, "/dir ")) {
      try {
        session->set_direction(pipeline::parse_direction(text::trim(std::string_view(cmd).substr(5))));
      } catch (const std::exception& e) {
        std::cerr << "error: " << describe(e) << '\n';
      }
      continue;
    }
    try {
      const auto turn = session->translate(line, [](const pipeline::StreamEvent& ev) {
        std::cout << ev.text << std::flush;
        return g_interrupted == 0;
      });
      if (turn.cancelled) {
        std::cout << "\n(interrupted, turn discarded)\n";
        continue;
      }
      std::cout << "\n= " << turn.output_text << '\n';
      print_timing(turn);
    } catch (const std::exception& e) {
      std::cout << '\n';
      std::cerr << "error: " << describe(e) << '\n';
    }
  }
}

int cmd_serve(const ModelArgs& args, service::ServiceConfig config) {
  config.model_path = args.model_path();
  config.direction = pipeline::parse_direction(args.dir);
  service::check_config(config);
  auto session = open_session(args);
  service::Service svc(session, config);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  svc.start();
  std::cerr << "listening on http://" << config.bind_address << ":" << svc.port() << " (offline, loopback only"
            << (config.allow_nonlocal ? " disabled" : "") << ")\n";
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down\n";
  svc.stop();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline Vietnamese-English translation on GGUF models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "omt 0.1.0");

  std::string inspect_path;
  bool inspect_json = false;
  auto* inspect = app.add_subcommand("inspect", "print a GGUF file's header, tensor types and validation result");
  inspect->add_option("path", inspect_path, "GGUF file")->required();
  inspect->add_flag("--json", inspect_json, "machine-readable output");

  ModelArgs tr_args;
  std::optional<std::string> tr_text;
  bool tr_stdin = false;
  auto* translate = app.add_subcommand("translate", "translate one text, or each line of standard input");
  tr_args.add_to(translate);
  translate->add_option("--text", tr_text, "text to translate");
  translate->add_flag("--stdin", tr_stdin, "translate standard input line by line");

  ModelArgs chat_args;
  auto* chat = app.add_subcommand("chat", "interactive translation in the terminal");
  chat_args.add_to(chat);

  ModelArgs bench_args;
  std::string bench_prompts;
  int bench_reps = 3;
  std::string bench_json;
  auto* benchc = app.add_subcommand("bench", "time greedy translation over a prompt file");
  bench_args.add_to(benchc);
  benchc->add_option("--prompt-file", bench_prompts, "one source sentence per line (TSV: source column)")->required();
  benchc->add_option("--reps", bench_reps, "timed repetitions per prompt");
  benchc->add_option("--json", bench_json, "also write the structured report here ('-' prints only JSON)");

  ModelArgs eval_args;
  std::string eval_hyp, eval_ref, eval_testset, eval_smoothing = "none", eval_json;
  auto* evalc = app.add_subcommand("eval", "BLEU of hypotheses against references, or of a model on a test set");
  eval_args.add_to(evalc);
  evalc->add_option("--hyp", eval_hyp, "hypothesis file (text, or TSV target column)");
  evalc->add_option("--ref", eval_ref, "reference file (text, or TSV target column)");
  evalc->add_option("--testset", eval_testset, "TSV source/target pairs to translate with --model");
  evalc->add_option("--smoothing", eval_smoothing, "none or add-one")->check(CLI::IsMember({"none", "add-one"}));
  evalc->add_option("--json", eval_json, "also write the structured report here ('-' prints only JSON)");

  ModelArgs cmp_args;
  std::string cmp_a, cmp_b, cmp_testset, cmp_json;
  int cmp_reps = 1;
  auto* compare = app.add_subcommand("compare", "size, speed and BLEU of two quantizations of one model");
  cmp_args.add_to(compare);
  compare->add_option("--a", cmp_a, "baseline GGUF file")->required();
  compare->add_option("--b", cmp_b, "candidate GGUF file")->required();
  compare->add_option("--testset", cmp_testset, "TSV source/target pairs")->required();
  compare->add_option("--reps", cmp_reps, "timed repetitions per sentence");
  compare->add_option("--json", cmp_json, "also write the structured report here ('-' prints only JSON)");

  std::string clean_in, clean_out, clean_json;
  eval::CleaningRules rules;
  auto* clean = app.add_subcommand("clean", "normalize and deduplicate a TSV parallel corpus");
  clean->add_option("--in", clean_in, "input TSV")->required();
  clean->add_option("--out", clean_out, "cleaned TSV")->required();
  clean->add_option("--min-ratio", rules.min_ratio, "lowest source/target word ratio kept");
  clean->add_option("--max-ratio", rules.max_ratio, "highest source/target word ratio kept");
  clean->add_option("--json", clean_json, "also write the structured report here ('-' prints only JSON)");

  ModelArgs serve_args;
  service::ServiceConfig serve_cfg;
  int busy_ms = 30000;
  auto* serve = app.add_subcommand("serve", "HTTP and WebSocket API on a loopback address");
  serve_args.add_to(serve);
  serve->add_option("--host", serve_cfg.bind_address, "bind address");
  serve->add_option("--port", serve_cfg.port, "TCP port");
  serve->add_flag("--allow-nonlocal", serve_cfg.allow_nonlocal, "accept non-loopback binds and peers");
  serve->add_option("--queue-depth", serve_cfg.queue_depth, "requests allowed to wait for the model");
  serve->add_option("--busy-timeout-ms", busy_ms, "how long a queued request waits");

  SynthOptions synth_opt;
  std::string synth_out, synth_vocab;
  auto* synth = app.add_subcommand("synth", "write a random-weight model with TinyLlama 1.1B geometry");
  synth->add_option("--out", synth_out, "output GGUF path")->required();
  synth->add_option("--vocab", synth_vocab, "GGUF file to copy tokenizer metadata from")->required();
  synth->add_option("--mix", synth_opt.mix, "q4_k_m, q8_0 or f32")->check(CLI::IsMember({"q4_k_m", "q8_0", "f32"}));
  synth->add_option("--layers", synth_opt.layers);
  synth->add_option("--embed", synth_opt.embed);
  synth->add_option("--heads", synth_opt.heads);
  synth->add_option("--kv-heads", synth_opt.kv_heads);
  synth->add_option("--ffn", synth_opt.ffn);
  synth->add_option("--context", synth_opt.context);
  synth->add_option("--seed", synth_opt.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) return cmd_inspect(inspect_path, inspect_json);
    if (*translate) return cmd_translate(tr_args, tr_text, tr_stdin);
    if (*chat) return cmd_chat(chat_args);
    if (*benchc) {
      auto session = open_session(bench_args);
      std::vector<std::string> prompts;
      for (auto& l : read_lines(bench_prompts)) {
        if (text::trim(l).empty()) continue;
        prompts.push_back(l.substr(0, l.find('\t')));
      }
      eval::BenchOptions bo;
      bo.reps = bench_reps;
      const auto r = eval::bench(*session, prompts, bo);
      emit(eval::format_table(r), eval::to_json(r), bench_json);
      return kExitOk;
    }
    if (*evalc) {
      eval::BleuOptions bo;
      bo.smoothing = eval::parse_smoothing(eval_smoothing);
      std::vector<std::string> hyps, refs;
      if (!eval_testset.empty()) {
        auto session = open_session(eval_args);
        for (const auto& p : eval::read_tsv(eval_testset).pairs) {
          hyps.push_back(session->translate(p.source).output_text);
          refs.push_back(p.target);
        }
      } else if (!eval_hyp.empty() && !eval_ref.empty()) {
        hyps = read_sentences(eval_hyp);
        refs = read_sentences(eval_ref);
      } else {
        std::cerr << "error: give --hyp and --ref, or --testset with a model\n";
        return kExitFailure;
      }
      const auto r = eval::bleu(hyps, refs, bo);
      emit(eval::format_table(r), eval::to_json(r), eval_json);
      return kExitOk;
    }
    if (*compare) {
      parallel::set_thread_count(cmp_args.threads);
      eval::CompareOptions co;
      co.session = cmp_args.session_options();
      co.bench.reps = cmp_reps;
      const auto corpus = eval::read_tsv(cmp_testset);
      const auto r = eval::compare_quants(cmp_a, cmp_b, corpus.pairs, co);
      emit(eval::format_table(r), eval::to_json(r), cmp_json);
      return kExitOk;
    }
    if (*clean) {
      const auto res = eval::clean_corpus(eval::read_tsv(clean_in), rules);
      std::ofstream out(clean_out, std::ios::binary);
      if (!out) fail(Errc::IoError, "cannot write " + clean_out);
      eval::write_tsv(out, res.pairs);
      emit(eval::format_table(res.report), eval::to_json(res.report), clean_json);
      return kExitOk;
    }
    if (*serve) {
      serve_cfg.busy_timeout = std::chrono::milliseconds(busy_ms);
      return cmd_serve(serve_args, serve_cfg);
    }
    if (*synth) {
      synth_opt.out = synth_out;
      synth_opt.vocab = synth_vocab;
      write_synthetic_model(synth_opt);
      std::cerr << "wrote " << synth_out << '\n';
      return kExitOk;
    }
  } catch (const LoadFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << describe(e) << '\n';
    return exit_code(e);
  }
  return kExitFailure;
}
