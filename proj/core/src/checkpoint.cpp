#include "tra/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "tra/errors.hpp"

namespace tra {

namespace {

using Json = nlohmann::ordered_json;

Json tensor_to_json(const Matrix& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.flat().begin(), m.flat().end());
  return j;
}

Matrix tensor_from_json(const Json& j, const char* what) {
  const std::size_t rows = j.at("rows").get<std::size_t>();
  const std::size_t cols = j.at("cols").get<std::size_t>();
  Vec data = j.at("data").get<Vec>();
  if (data.size() != rows * cols) {
    throw ParseError(std::string("checkpoint tensor '") + what + "' shape mismatch");
  }
  if (rows * cols == 0) return Matrix(rows, cols);
  return Matrix::from_data(rows, cols, std::move(data));
}

void check_same_shape(const Matrix& got, const Matrix& want, const char* what) {
  if (got.rows() != want.rows() || got.cols() != want.cols()) {
    throw ParseError(std::string("checkpoint tensor '") + what +
                     "' does not match the configured model shape");
  }
}

Json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

double finite_or_lowest(const Json& j) {
  if (j.is_null()) return -std::numeric_limits<double>::infinity();
  return j.get<double>();
}

Json config_to_json(const TrainConfig& cfg) {
  Json j;
  j["predictors"] = cfg.k;
  j["lambda"] = cfg.lambda;
  j["rho"] = cfg.rho;
  j["epochs"] = cfg.epochs;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer"] = to_string(cfg.optimizer);
  j["early_stop_patience"] = cfg.early_stop_patience;
  j["seed"] = cfg.seed;
  j["tau"] = cfg.tau;
  j["lookback"] = cfg.lookback;
  j["gap"] = cfg.gap;
  j["input_mode"] = to_string(cfg.input_mode);
  j["summarizer"] = to_string(cfg.summarizer);
  j["state_dim"] = cfg.state_dim;
  j["ema_decay"] = cfg.ema_decay;
  j["soft_inference"] = cfg.soft_inference;
  j["sinkhorn_epsilon_scale"] = cfg.sinkhorn_epsilon_scale;
  j["sinkhorn_max_iters"] = cfg.sinkhorn_max_iters;
  j["sinkhorn_tol"] = cfg.sinkhorn_tol;
  Json b;
  b["kind"] = to_string(cfg.backbone.kind);
  b["window_len"] = cfg.backbone.window_len;
  b["feature_dim"] = cfg.backbone.feature_dim;
  b["hidden_dims"] = cfg.backbone.hidden_dims;
  b["latent_dim"] = cfg.backbone.latent_dim;
  b["activation"] = to_string(cfg.backbone.activation);
  j["backbone"] = b;
  return j;
}

TrainConfig config_from_json(const Json& j) {
  TrainConfig cfg;
  cfg.k = j.at("predictors").get<std::size_t>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.rho = j.at("rho").get<double>();
  cfg.epochs = j.at("epochs").get<std::size_t>();
  cfg.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.optimizer = optimizer_kind_from_string(j.at("optimizer").get<std::string>());
  cfg.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.tau = j.at("tau").get<double>();
  cfg.lookback = j.at("lookback").get<int>();
  cfg.gap = j.at("gap").get<int>();
  cfg.input_mode = router_input_mode_from_string(j.at("input_mode").get<std::string>());
  cfg.summarizer = summarizer_kind_from_string(j.at("summarizer").get<std::string>());
  cfg.state_dim = j.at("state_dim").get<std::size_t>();
  cfg.ema_decay = j.at("ema_decay").get<double>();
  cfg.soft_inference = j.at("soft_inference").get<bool>();
  cfg.sinkhorn_epsilon_scale = j.at("sinkhorn_epsilon_scale").get<double>();
  cfg.sinkhorn_max_iters = j.at("sinkhorn_max_iters").get<std::size_t>();
  cfg.sinkhorn_tol = j.at("sinkhorn_tol").get<double>();
  const Json& b = j.at("backbone");
  cfg.backbone.kind = backbone_kind_from_string(b.at("kind").get<std::string>());
  cfg.backbone.window_len = b.at("window_len").get<std::size_t>();
  cfg.backbone.feature_dim = b.at("feature_dim").get<std::size_t>();
  cfg.backbone.hidden_dims = b.at("hidden_dims").get<std::vector<std::size_t>>();
  cfg.backbone.latent_dim = b.at("latent_dim").get<std::size_t>();
  cfg.backbone.activation = activation_from_string(b.at("activation").get<std::string>());
  return cfg;
}

Json state_to_json(const ModelState& s) {
  Json j;
  Json bb;
  bb["rec_in"] = tensor_to_json(s.backbone.rec_in);
  bb["rec_state"] = tensor_to_json(s.backbone.rec_state);
  bb["rec_bias"] = s.backbone.rec_bias;
  Json stack = Json::array();
  for (const auto& l : s.backbone.stack) {
    Json layer;
    layer["w"] = tensor_to_json(l.w);
    layer["b"] = l.b;
    stack.push_back(layer);
  }
  bb["stack"] = stack;
  j["backbone"] = bb;
  Json heads;
  heads["w"] = tensor_to_json(s.heads.w);
  heads["b"] = s.heads.b;
  j["heads"] = heads;
  Json router;
  router["summ_in"] = tensor_to_json(s.router.summ_in);
  router["summ_state"] = tensor_to_json(s.router.summ_state);
  router["summ_bias"] = s.router.summ_bias;
  router["gate_w"] = tensor_to_json(s.router.gate_w);
  router["gate_b"] = s.router.gate_b;
  j["router"] = router;
  Json opt;
  opt["m"] = s.opt.m;
  opt["v"] = s.opt.v;
  opt["t"] = s.opt.t;
  j["opt"] = opt;
  return j;
}

void state_from_json(const Json& j, ModelState& s) {
  const Json& bb = j.at("backbone");
  Matrix rec_in = tensor_from_json(bb.at("rec_in"), "rec_in");
  check_same_shape(rec_in, s.backbone.rec_in, "rec_in");
  s.backbone.rec_in = std::move(rec_in);
  Matrix rec_state = tensor_from_json(bb.at("rec_state"), "rec_state");
  check_same_shape(rec_state, s.backbone.rec_state, "rec_state");
  s.backbone.rec_state = std::move(rec_state);
  s.backbone.rec_bias = bb.at("rec_bias").get<Vec>();
  const Json& stack = bb.at("stack");
  if (stack.size() != s.backbone.stack.size()) {
    throw ParseError("checkpoint backbone stack depth does not match config");
  }
  for (std::size_t i = 0; i < stack.size(); ++i) {
    Matrix w = tensor_from_json(stack[i].at("w"), "stack.w");
    check_same_shape(w, s.backbone.stack[i].w, "stack.w");
    s.backbone.stack[i].w = std::move(w);
    s.backbone.stack[i].b = stack[i].at("b").get<Vec>();
  }
  const Json& heads = j.at("heads");
  Matrix hw = tensor_from_json(heads.at("w"), "heads.w");
  check_same_shape(hw, s.heads.w, "heads.w");
  s.heads.w = std::move(hw);
  s.heads.b = heads.at("b").get<Vec>();
  const Json& router = j.at("router");
  Matrix si = tensor_from_json(router.at("summ_in"), "summ_in");
  check_same_shape(si, s.router.summ_in, "summ_in");
  s.router.summ_in = std::move(si);
  Matrix ss = tensor_from_json(router.at("summ_state"), "summ_state");
  check_same_shape(ss, s.router.summ_state, "summ_state");
  s.router.summ_state = std::move(ss);
  s.router.summ_bias = router.at("summ_bias").get<Vec>();
  Matrix gw = tensor_from_json(router.at("gate_w"), "gate_w");
  check_same_shape(gw, s.router.gate_w, "gate_w");
  s.router.gate_w = std::move(gw);
  s.router.gate_b = router.at("gate_b").get<Vec>();
  const Json& opt = j.at("opt");
  s.opt.m = opt.at("m").get<Vec>();
  s.opt.v = opt.at("v").get<Vec>();
  s.opt.t = opt.at("t").get<std::uint64_t>();
  if (s.opt.m.size() != s.param_count() || s.opt.v.size() != s.param_count()) {
    throw ParseError("checkpoint optimizer state does not match the parameter count");
  }
}

Json report_to_json(const TrainReport& r) {
  Json j;
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    Json je;
    je["train_loss"] = e.train_loss;
    je["reg_value"] = e.reg_value;
    je["valid_mse"] = e.valid_mse;
    je["valid_ic"] = e.valid_ic;
    je["lambda"] = e.lambda;
    je["shares"] = e.shares;
    epochs.push_back(je);
  }
  j["epochs"] = epochs;
  j["best_epoch"] = r.best_epoch;
  j["best_valid_ic"] = finite_or_null(r.best_valid_ic);
  j["sinkhorn_warnings"] = r.sinkhorn_warnings;
  return j;
}

TrainReport report_from_json(const Json& j) {
  TrainReport r;
  for (const auto& je : j.at("epochs")) {
    EpochStats e;
    e.train_loss = je.at("train_loss").get<double>();
    e.reg_value = je.at("reg_value").get<double>();
    e.valid_mse = je.at("valid_mse").get<double>();
    e.valid_ic = je.at("valid_ic").get<double>();
    e.lambda = je.at("lambda").get<double>();
    e.shares = je.at("shares").get<Vec>();
    r.epochs.push_back(std::move(e));
  }
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_valid_ic = finite_or_lowest(j.at("best_valid_ic"));
  r.sinkhorn_warnings = j.at("sinkhorn_warnings").get<std::size_t>();
  return r;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg, int label_horizon,
                     const ResumePoint& point) {
  Json j;
  j["format"] = "tra-checkpoint-v1";
  j["config"] = config_to_json(cfg);
  j["label_horizon"] = label_horizon;
  j["rng"] = {{"seed", cfg.seed}};
  j["epochs_done"] = point.epochs_done;
  j["batches_done"] = point.batches_done;
  j["best_epoch"] = point.best_epoch;
  j["best_valid_ic"] = finite_or_null(point.best_valid_ic);
  j["bad_epochs"] = point.bad_epochs;
  j["state"] = state_to_json(point.state);
  j["best_state"] = state_to_json(point.best_state);
  j["report"] = report_to_json(point.report);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint '" + path + "': " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "tra-checkpoint-v1") {
      throw ParseError("unsupported checkpoint format");
    }
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.label_horizon = j.at("label_horizon").get<int>();
    ck.point.epochs_done = j.at("epochs_done").get<std::size_t>();
    ck.point.batches_done = j.at("batches_done").get<std::uint64_t>();
    ck.point.best_epoch = j.at("best_epoch").get<std::size_t>();
    ck.point.best_valid_ic = finite_or_lowest(j.at("best_valid_ic"));
    ck.point.bad_epochs = j.at("bad_epochs").get<std::size_t>();
    ck.point.state = init_model(ck.config, ck.label_horizon);
    ck.point.best_state = ck.point.state;
    state_from_json(j.at("state"), ck.point.state);
    state_from_json(j.at("best_state"), ck.point.best_state);
    ck.point.report = report_from_json(j.at("report"));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace tra
