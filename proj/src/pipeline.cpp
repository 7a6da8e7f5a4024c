#include "lensdyn/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lensdyn/parallel.hpp"

namespace lensdyn {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* status_name(QuestionStatus s) {
  switch (s) {
    case QuestionStatus::result:
      return "result";
    case QuestionStatus::nonsensical:
      return "nonsensical";
    case QuestionStatus::error:
      break;
  }
  return "error";
}

ordered_json vec_json(const VectorD& v) {
  ordered_json a = ordered_json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ordered_json json_of(const CorrelationResult& c) {
  const FormattedCell cell = format_correlation(c);
  return {{"r", c.r}, {"se", c.standard_error}, {"p", c.p_value}, {"n", c.n}, {"formatted", cell.text}, {"bold", cell.bold}};
}

ordered_json json_of(const KappaResult& k) {
  return {{"accuracy", k.accuracy}, {"chance_rate", k.chance_rate}, {"kappa", k.kappa}, {"n", k.n}};
}

ordered_json json_of(const std::optional<TrajectoryAggregate>& agg) {
  if (!agg) return nullptr;
  auto group = [](const std::optional<GroupTrajectory>& g) -> ordered_json {
    if (!g) return nullptr;
    return {{"count", g->count},
            {"top_mean", vec_json(g->top_mean)},
            {"top_se", vec_json(g->top_se)},
            {"cond_mean", vec_json(g->cond_mean)},
            {"cond_se", vec_json(g->cond_se)}};
  };
  ordered_json j = {{"n_states", agg->n_states}, {"correct", group(agg->correct)}, {"incorrect", group(agg->incorrect)}};
  ordered_json flags = ordered_json::array();
  if (!agg->correct) flags.push_back("correct group empty");
  if (!agg->incorrect) flags.push_back("incorrect group empty");
  j["flags"] = flags;
  return j;
}

ordered_json json_of(const std::optional<PdDistribution>& pd) {
  if (!pd) return nullptr;
  auto pct = [](const std::vector<double>& v) -> ordered_json {
    if (v.empty()) return nullptr;
    return v;
  };
  return {{"n_states", pd->n_states},
          {"n_correct", pd->n_correct},
          {"n_incorrect", pd->n_incorrect},
          {"pct_correct", pct(pd->pct_correct)},
          {"pct_incorrect", pct(pd->pct_incorrect)}};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string path_string(const std::vector<char>& labels) { return std::string(labels.begin(), labels.end()); }

QuestionRecord analyze_question(const LensStack& stack, const McqQuestion& q, CondensedMode mode) {
  const ModelBundle& model = stack.model();
  QuestionRecord rec;
  rec.id = q.id;
  rec.gold_label = q.gold_label;
  rec.num_choices = static_cast<int>(q.choices.size());
  try {
    const PromptRecord prompt = render_prompt(q, model.tokenizer());
    const HiddenTrace trace = forward(model, prompt.tokens, prompt.probe_position);
    rec.head_deviation =
        static_cast<double>((decode_layer(stack, trace, stack.n_layers()) - trace.final_logits).cwiseAbs().maxCoeff());
    const TokenId generated = argmax_lowest(trace.final_logits);
    const AnswerOutcome outcome = classify_answer(q, generated, model.tokenizer());
    rec.outcome = outcome;
    rec.generated_text = model.tokenizer().decode(generated);
    if (!outcome.sensical) {
      rec.status = QuestionStatus::nonsensical;
      return rec;
    }
    rec.result = question_result(label_distributions(stack, trace, prompt), outcome, mode);
    rec.status = QuestionStatus::result;
  } catch (const Error& e) {
    rec.status = QuestionStatus::error;
    rec.message = e.what();
    rec.outcome.reset();
    rec.result.reset();
  }
  return rec;
}

void summarize_dataset(DatasetReport& ds) {
  std::vector<AnswerOutcome> outcomes;
  std::vector<int> choices;
  for (const auto& q : ds.questions) {
    switch (q.status) {
      case QuestionStatus::result:
        ++ds.n_sensical;
        outcomes.push_back(*q.outcome);
        choices.push_back(q.num_choices);
        break;
      case QuestionStatus::nonsensical:
        ++ds.n_nonsensical;
        break;
      case QuestionStatus::error:
        ++ds.n_errors;
        break;
    }
    ds.head_consistency_max_abs = std::max(ds.head_consistency_max_abs, q.head_deviation);
  }
  if (ds.n_sensical == 0) {
    ds.skip_reason = "no sensical answers";
    return;
  }
  const std::vector<QuestionResult> results = ds.results();
  ds.kappa = cohens_kappa(outcomes, choices);
  ds.trajectories = aggregate_trajectories(results);
  ds.pd_hist = pd_distribution(results);
  try {
    ds.correlation = incorrectness_pd_correlation(results);
  } catch (const StatsError& e) {
    ds.correlation_note = e.what();
  }
  try {
    ds.pd_gap = pd_gap(results);
  } catch (const StatsError& e) {
    ds.pd_gap_note = e.what();
  }
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

DatasetSpec parse_dataset_spec(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw ConfigError("--dataset expects NAME=PATH, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void RunConfig::validate() const {
  auto exists = [](const fs::path& p, const char* what) {
    if (p.empty() || !fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
  };
  exists(model_path, "model archive");
  exists(model_config_path, "model config");
  if (lens != "logit") exists(lens, "lens archive");
  if (datasets.empty()) throw ConfigError("at least one --dataset NAME=PATH is required");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (!names.insert(d.name).second) throw ConfigError("dataset name '" + d.name + "' given twice");
    if (d.name.find_first_of("/\\") != std::string::npos) throw ConfigError("dataset name '" + d.name + "' contains a path separator");
    exists(d.path, "dataset");
  }
  if (out_dir.empty()) throw ConfigError("--out is required");
  if (workers < 1) throw ConfigError("--workers must be at least 1");
}

ordered_json RunConfig::digest_fields() const {
  ordered_json ds = ordered_json::array();
  for (const auto& d : datasets) ds.push_back({{"name", d.name}, {"path", d.path.string()}});
  return {{"model", model_path.string()},
          {"model_config", model_config_path.string()},
          {"lens", lens},
          {"datasets", ds},
          {"seed", seed},
          {"condensed", to_string(condensed)}};
}

std::vector<QuestionResult> DatasetReport::results() const {
  std::vector<QuestionResult> out;
  for (const auto& q : questions) {
    if (q.result) out.push_back(*q.result);
  }
  return out;
}

bool RunReport::any_skipped() const {
  for (const auto& d : datasets) {
    if (d.skip_reason) return true;
  }
  return false;
}

RunReport run_analysis(const RunConfig& cfg) {
  cfg.validate();
  RunReport report;
  report.started_at = utc_now();
  const auto model = load_model(cfg.model_path, cfg.model_config_path);
  const LensStack stack = cfg.lens == "logit" ? LensStack::logit(model) : load_lens(cfg.lens, model);

  report.model_name = cfg.model_name.value_or(cfg.model_path.stem().string());
  report.model_fingerprint = model->fingerprint();
  report.lens_kind = to_string(stack.kind());
  report.lens_path = cfg.lens;
  report.n_layers = model->config().n_layers;
  report.condensed = cfg.condensed;
  report.seed = cfg.seed;
  report.config_digest = sha256_hex(cfg.digest_fields().dump());

  TrajectoryAccumulator pooled(report.n_layers + 1);
  std::vector<QuestionResult> pooled_results;
  for (const auto& spec : cfg.datasets) {
    DatasetReport ds;
    ds.name = spec.name;
    ds.path = spec.path.string();
    std::vector<McqQuestion> questions;
    try {
      ds.digest = sha256_hex(read_file(spec.path));
      questions = load_dataset(spec.path);
    } catch (const Error& e) {
      ds.skip_reason = std::string("dataset failed to load: ") + e.what();
      report.datasets.push_back(std::move(ds));
      continue;
    }
    if (questions.empty()) {
      ds.skip_reason = "dataset is empty";
      report.datasets.push_back(std::move(ds));
      continue;
    }
    ds.questions.resize(questions.size());
    parallel_for(questions.size(), cfg.workers,
                 [&](std::size_t i) { ds.questions[i] = analyze_question(stack, questions[i], cfg.condensed); });
    summarize_dataset(ds);
    for (const auto& r : ds.results()) {
      pooled.add(r);
      pooled_results.push_back(r);
    }
    if (ds.kappa && ds.pd_gap) report.kappa_points.push_back({ds.name, ds.kappa->kappa, *ds.pd_gap});
    report.datasets.push_back(std::move(ds));
  }
  if (!pooled_results.empty()) {
    report.pooled_trajectories = pooled.finish();
    report.pooled_pd_hist = pd_distribution(pooled_results);
  }
  try {
    report.kappa_vs_gap = kappa_vs_gap(report.kappa_points);
  } catch (const StatsError& e) {
    report.kappa_vs_gap_note = e.what();
  }
  report.finished_at = utc_now();
  return report;
}

ordered_json to_json(const RunReport& report) {
  ordered_json j;
  j["model"] = {{"name", report.model_name}, {"fingerprint", report.model_fingerprint}, {"n_layers", report.n_layers}};
  j["lens"] = {{"kind", report.lens_kind}, {"path", report.lens_path}};
  j["condensed"] = to_string(report.condensed);
  j["seed"] = report.seed;

  ordered_json datasets = ordered_json::array();
  for (const auto& ds : report.datasets) {
    ordered_json d;
    d["name"] = ds.name;
    d["path"] = ds.path;
    d["digest"] = ds.digest;
    d["skip_reason"] = ds.skip_reason ? ordered_json(*ds.skip_reason) : ordered_json(nullptr);
    d["n_questions"] = ds.questions.size();
    d["n_sensical"] = ds.n_sensical;
    d["n_nonsensical"] = ds.n_nonsensical;
    d["n_errors"] = ds.n_errors;
    d["accuracy"] = ds.kappa ? ordered_json(ds.kappa->accuracy) : ordered_json(nullptr);
    d["kappa"] = ds.kappa ? json_of(*ds.kappa) : ordered_json(nullptr);
    d["correlation"] = ds.correlation ? json_of(*ds.correlation) : ordered_json(nullptr);
    if (ds.correlation_note) d["correlation_note"] = *ds.correlation_note;
    d["pd_gap"] = ds.pd_gap ? ordered_json(*ds.pd_gap) : ordered_json(nullptr);
    if (ds.pd_gap_note) d["pd_gap_note"] = *ds.pd_gap_note;
    d["head_consistency_max_abs"] = ds.head_consistency_max_abs;
    d["trajectories"] = json_of(ds.trajectories);
    d["pd_hist"] = json_of(ds.pd_hist);
    ordered_json errors = ordered_json::array();
    ordered_json questions = ordered_json::array();
    for (const auto& q : ds.questions) {
      ordered_json e = {{"id", q.id}, {"status", status_name(q.status)}};
      if (q.outcome) {
        e["generated_token"] = q.outcome->generated_token;
        e["generated_text"] = q.generated_text;
      }
      if (q.result) {
        e["predicted_label"] = std::string(1, *q.outcome->predicted_label);
        e["gold_label"] = std::string(1, q.gold_label);
        e["correct"] = q.result->correct;
        e["top_label"] = std::string(1, q.result->top_label);
        e["prediction_depth"] = q.result->prediction_depth;
        e["argmax_path"] = path_string(q.result->argmax_path);
      }
      if (q.status == QuestionStatus::error) errors.push_back({{"id", q.id}, {"message", q.message}});
      questions.push_back(e);
    }
    d["errors"] = errors;
    d["questions"] = questions;
    datasets.push_back(d);
  }
  j["datasets"] = datasets;
  j["pooled"] = {{"trajectories", json_of(report.pooled_trajectories)}, {"pd_hist", json_of(report.pooled_pd_hist)}};

  ordered_json points = ordered_json::array();
  for (const auto& p : report.kappa_points) points.push_back({{"dataset", p.dataset}, {"kappa", p.kappa}, {"pd_gap", p.pd_gap}});
  ordered_json kg = {{"points", points}};
  if (report.kappa_vs_gap) {
    kg["correlation"] = json_of(report.kappa_vs_gap->correlation);
    kg["fit"] = {{"slope", report.kappa_vs_gap->fit.slope}, {"intercept", report.kappa_vs_gap->fit.intercept}};
  } else {
    kg["correlation"] = nullptr;
    kg["fit"] = nullptr;
    kg["note"] = report.kappa_vs_gap_note.value_or("");
  }
  j["kappa_vs_gap"] = kg;
  j["provenance"] = {{"tool", "lensdyn"},
                     {"version", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"config_digest", report.config_digest},
                     {"started_at", report.started_at},
                     {"finished_at", report.finished_at}};
  return j;
}

std::string trajectories_csv(const std::optional<TrajectoryAggregate>& agg, Index n_states) {
  std::ostringstream os;
  os << "layer,top_correct_mean,top_correct_se,cond_correct_mean,cond_correct_se,"
        "top_incorrect_mean,top_incorrect_se,cond_incorrect_mean,cond_incorrect_se,n_correct,n_incorrect\n";
  const GroupTrajectory* c = agg && agg->correct ? &*agg->correct : nullptr;
  const GroupTrajectory* w = agg && agg->incorrect ? &*agg->incorrect : nullptr;
  auto cells = [&](const GroupTrajectory* g, Index l) {
    if (!g) return std::string(",,,");
    return format_number(g->top_mean[l]) + "," + format_number(g->top_se[l]) + "," + format_number(g->cond_mean[l]) +
           "," + format_number(g->cond_se[l]);
  };
  for (Index l = 0; l < n_states; ++l) {
    os << l << "," << cells(c, l) << "," << cells(w, l) << "," << (c ? c->count : 0) << "," << (w ? w->count : 0)
       << "\n";
  }
  return os.str();
}

std::string pd_hist_csv(const std::optional<PdDistribution>& pd, Index n_states) {
  std::ostringstream os;
  os << "layer,pct_correct,pct_incorrect\n";
  for (Index l = 0; l < n_states; ++l) {
    os << l << ",";
    if (pd && !pd->pct_correct.empty()) os << format_number(pd->pct_correct[l]);
    os << ",";
    if (pd && !pd->pct_incorrect.empty()) os << format_number(pd->pct_incorrect[l]);
    os << "\n";
  }
  return os.str();
}

namespace {

std::string kappa_scatter_csv(const std::vector<DatasetPoint>& points, const std::optional<KappaGapResult>& fit,
                              const std::optional<std::string>& note) {
  std::ostringstream os;
  if (fit) {
    os << "# fit slope=" << format_number(fit->fit.slope) << " intercept=" << format_number(fit->fit.intercept)
       << " r=" << format_number(fit->correlation.r) << " p=" << format_number(fit->correlation.p_value)
       << " n=" << fit->correlation.n << "\n";
  } else {
    os << "# fit unavailable: " << note.value_or("") << "\n";
  }
  os << "dataset,kappa,pd_gap\n";
  for (const auto& p : points) os << csv_escape(p.dataset) << "," << format_number(p.kappa) << "," << format_number(p.pd_gap) << "\n";
  return os.str();
}

}  // namespace

void write_run_outputs(const RunReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const Index n_states = report.n_layers + 1;
  write_file(out_dir / "report.json", to_json(report).dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
  write_file(out_dir / "trajectories.csv", trajectories_csv(report.pooled_trajectories, n_states));
  write_file(out_dir / "pd_hist.csv", pd_hist_csv(report.pooled_pd_hist, n_states));

  std::ostringstream corr;
  corr << "dataset,r,se,p,n,formatted\n";
  for (const auto& ds : report.datasets) {
    if (!ds.correlation) continue;
    const auto& c = *ds.correlation;
    corr << csv_escape(ds.name) << "," << format_number(c.r) << "," << format_number(c.standard_error) << ","
         << format_number(c.p_value) << "," << c.n << "," << format_correlation(c).text << "\n";
  }
  write_file(out_dir / "correlations.csv", corr.str());
  write_file(out_dir / "kappa_scatter.csv",
             kappa_scatter_csv(report.kappa_points, report.kappa_vs_gap, report.kappa_vs_gap_note));

  for (const auto& ds : report.datasets) {
    const fs::path dir = out_dir / "datasets" / ds.name;
    fs::create_directories(dir);
    write_file(dir / "trajectories.csv", trajectories_csv(ds.trajectories, n_states));
    write_file(dir / "pd_hist.csv", pd_hist_csv(ds.pd_hist, n_states));
    std::ostringstream qs;
    qs << "id,status,generated_text,predicted_label,gold_label,correct,top_label,prediction_depth,argmax_path\n";
    for (const auto& q : ds.questions) {
      qs << csv_escape(q.id) << "," << status_name(q.status) << "," << csv_escape(q.generated_text) << ",";
      if (q.result) {
        qs << *q.outcome->predicted_label << "," << q.gold_label << "," << (q.result->correct ? 1 : 0) << ","
           << q.result->top_label << "," << q.result->prediction_depth << "," << path_string(q.result->argmax_path);
      } else {
        qs << "," << q.gold_label << ",,,,";
      }
      qs << "\n";
    }
    write_file(dir / "questions.csv", qs.str());
  }
}

TrainLensOutcome run_train_lens(const TrainLensJob& job) {
  for (const auto& [p, what] : {std::pair{job.model_path, "model archive"}, {job.model_config_path, "model config"},
                                {job.corpus_path, "corpus"}}) {
    if (p.empty() || !fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
  }
  if (job.heldout_path && !fs::exists(*job.heldout_path)) {
    throw ConfigError("held-out corpus not found: " + job.heldout_path->string());
  }
  if (job.out_dir.empty()) throw ConfigError("--out is required");
  try {
    job.train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }

  const std::string started = utc_now();
  const auto model = load_model(job.model_path, job.model_config_path);
  const std::vector<TokenId> corpus = model->tokenizer().encode(read_file(job.corpus_path));
  const LensTrainResult trained = train_tuned_lens(model, corpus, job.train);

  TrainLensOutcome out;
  fs::create_directories(job.out_dir);
  out.lens_path = job.out_dir / "lens.safetensors";
  out.curves_path = job.out_dir / "loss_curves.json";
  save_lens(trained.stack, out.lens_path);

  const LensTrainConfig& t = job.train;
  const std::size_t needed = static_cast<std::size_t>(t.steps) * static_cast<std::size_t>(t.tokens_per_step);
  if (t.steps == 0) out.warnings.push_back("steps=0: translators stay at zero, lens is equivalent to the logit lens");
  if (trained.cycled_corpus) {
    out.warnings.push_back("corpus of " + std::to_string(corpus.size()) + " tokens cycled to supply " +
                           std::to_string(needed) + " training tokens");
  }
  if (!trained.total_loss.empty()) {
    out.initial_total_loss = trained.total_loss.front();
    out.final_total_loss = trained.total_loss.back();
  }

  ordered_json curves;
  curves["n_layers"] = model->config().n_layers;
  curves["steps"] = t.steps;
  curves["total_loss"] = trained.total_loss;
  ordered_json per_layer = ordered_json::array();
  for (Index l = 0; l < model->config().n_layers; ++l) {
    std::vector<double> c;
    for (const auto& step : trained.layer_loss) c.push_back(step[static_cast<std::size_t>(l)]);
    per_layer.push_back(c);
  }
  curves["layer_loss"] = per_layer;
  if (job.heldout_path) {
    const std::vector<TokenId> heldout = model->tokenizer().encode(read_file(*job.heldout_path));
    curves["heldout_kl_tuned"] = evaluate_lens_kl(trained.stack, heldout, t.sequence_length, t.workers);
    curves["heldout_kl_logit"] = evaluate_lens_kl(LensStack::logit(model), heldout, t.sequence_length, t.workers);
  }
  write_file(out.curves_path, curves.dump(2) + "\n");

  std::ostringstream log;
  log << "lensdyn " << kVersion << " train-lens\n"
      << "started " << started << "\nfinished " << utc_now() << "\n"
      << "model " << job.model_path.string() << " fingerprint " << model->fingerprint() << "\n"
      << "corpus " << job.corpus_path.string() << " tokens " << corpus.size() << "\n"
      << "learning_rate " << t.learning_rate << "\nsteps " << t.steps << "\nweight_decay " << t.weight_decay
      << "\nbeta1 " << t.beta1 << "\nbeta2 " << t.beta2 << "\nepsilon " << t.epsilon << "\ntokens_per_step "
      << t.tokens_per_step << "\nsequence_length " << t.sequence_length << "\nseed " << t.seed << "\nworkers "
      << t.workers << "\ntokens_seen " << trained.tokens_seen << "\n"
      << "initial_total_loss " << out.initial_total_loss << "\nfinal_total_loss " << out.final_total_loss << "\n";
  for (const auto& w : out.warnings) log << "warning: " << w << "\n";
  write_file(job.out_dir / "run.log", log.str());
  return out;
}

void run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  struct Column {
    std::string model;
    std::map<std::string, ordered_json> datasets;
    ordered_json kappa_vs_gap;
  };
  std::vector<Column> columns;
  std::vector<std::string> dataset_order;
  std::map<std::string, std::string> digests;
  std::set<std::string> models;
  for (const auto& dir : run_dirs) {
    const fs::path file = dir / "report.json";
    if (!fs::exists(file)) throw ConfigError("no report.json in " + dir.string());
    const ordered_json j = ordered_json::parse(read_file(file));
    Column col;
    col.model = j.at("model").at("name").get<std::string>();
    if (!models.insert(col.model).second) throw ConfigError("model '" + col.model + "' appears in two runs");
    for (const auto& d : j.at("datasets")) {
      const std::string name = d.at("name").get<std::string>();
      const std::string digest = d.at("digest").get<std::string>();
      auto [it, inserted] = digests.emplace(name, digest);
      if (inserted) dataset_order.push_back(name);
      if (!digest.empty() && !it->second.empty() && it->second != digest) {
        throw ConfigError("dataset '" + name + "' refers to different files across runs");
      }
      if (it->second.empty()) it->second = digest;
      col.datasets[name] = d;
    }
    col.kappa_vs_gap = j.at("kappa_vs_gap");
    columns.push_back(std::move(col));
  }

  fs::create_directories(out_dir);
  std::ostringstream t1;
  std::ostringstream t1md;
  std::ostringstream t2;
  t1 << "dataset";
  t2 << "dataset";
  t1md << "| Dataset |";
  for (const auto& c : columns) {
    t1 << "," << csv_escape(c.model);
    t2 << "," << csv_escape(c.model);
    t1md << " " << c.model << " |";
  }
  t1 << "\n";
  t2 << "\n";
  t1md << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) t1md << "---|";
  t1md << "\n";

  ordered_json tables = {{"models", ordered_json::array()}, {"correlation_grid", ordered_json::array()}, {"sensical_grid", ordered_json::array()}};
  for (const auto& c : columns) tables["models"].push_back(c.model);
  for (const auto& name : dataset_order) {
    t1 << csv_escape(name);
    t2 << csv_escape(name);
    t1md << "| " << name << " |";
    ordered_json row1 = {{"dataset", name}, {"cells", ordered_json::array()}};
    ordered_json row2 = {{"dataset", name}, {"counts", ordered_json::array()}};
    for (const auto& c : columns) {
      auto it = c.datasets.find(name);
      const ordered_json* corr = (it != c.datasets.end() && !it->second.at("correlation").is_null())
                                     ? &it->second.at("correlation")
                                     : nullptr;
      if (corr) {
        CorrelationResult r{corr->at("r").get<double>(), corr->at("se").get<double>(), corr->at("p").get<double>(),
                            corr->at("n").get<std::size_t>()};
        const FormattedCell cell = format_correlation(r);
        t1 << "," << cell.text;
        if (cell.bold) {
          const auto star = cell.text.find_first_of("*(");
          t1md << " **" << cell.text.substr(0, star) << "**" << cell.text.substr(star) << " |";
        } else {
          t1md << " " << cell.text << " |";
        }
        row1["cells"].push_back({{"text", cell.text}, {"bold", cell.bold}});
      } else {
        t1 << ",";
        t1md << "  |";
        row1["cells"].push_back(nullptr);
      }
      if (it != c.datasets.end()) {
        t2 << "," << it->second.at("n_sensical").get<std::size_t>();
        row2["counts"].push_back(it->second.at("n_sensical"));
      } else {
        t2 << ",";
        row2["counts"].push_back(nullptr);
      }
    }
    t1 << "\n";
    t2 << "\n";
    t1md << "\n";
    tables["correlation_grid"].push_back(row1);
    tables["sensical_grid"].push_back(row2);
  }
  write_file(out_dir / "correlation_grid.csv", t1.str());
  write_file(out_dir / "correlation_grid.md", t1md.str());
  write_file(out_dir / "sensical_grid.csv", t2.str());

  tables["kappa_gap"] = ordered_json::object();
  for (const auto& c : columns) {
    std::vector<DatasetPoint> points;
    for (const auto& p : c.kappa_vs_gap.at("points")) {
      points.push_back({p.at("dataset").get<std::string>(), p.at("kappa").get<double>(), p.at("pd_gap").get<double>()});
    }
    std::optional<KappaGapResult> fit;
    std::optional<std::string> note;
    try {
      fit = kappa_vs_gap(points);
    } catch (const StatsError& e) {
      note = e.what();
    }
    std::string safe = c.model;
    for (char& ch : safe) {
      if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
    }
    write_file(out_dir / ("kappa_gap_" + safe + ".csv"), kappa_scatter_csv(points, fit, note));
    tables["kappa_gap"][c.model] = fit ? ordered_json{{"slope", fit->fit.slope},
                                                 {"intercept", fit->fit.intercept},
                                                 {"correlation", json_of(fit->correlation)}}
                                  : ordered_json{{"note", note.value_or("")}};
  }
  write_file(out_dir / "grids.json", tables.dump(2) + "\n");
}

}  // namespace lensdyn
