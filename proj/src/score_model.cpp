#include "hodsm/score_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hodsm/rng.hpp"
#include "json.hpp"

namespace hodsm {

using ad::Mat;
using ad::NodeId;
using ad::Tape;

namespace {

// Parameter layout, in order:
// 0 Wt1  1 bt1  2 Wt2  3 bt2   (t encoder)
// 4 Wx1  5 bx1  6 Wx2  7 bx2   (x encoder)
// 8 Wjt  9 Wjx 10 bj1          (joint stage, concat expressed as two matmuls)
// 11 Wj2 12 bj2                (output head, zero-initialized)
constexpr int kNumParams = 13;

std::string base64_encode(const uint8_t* data, size_t len) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        uint32_t v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? tbl[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? tbl[v & 63] : '=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& s) {
    auto decode_char = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    uint32_t buf = 0;
    int bits = 0;
    for (char c : s) {
        if (c == '=') break;
        const int v = decode_char(c);
        if (v < 0) throw std::invalid_argument("checkpoint: invalid base64");
        buf = (buf << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((buf >> bits) & 0xff));
        }
    }
    return out;
}

} // namespace

ScoreModel::ScoreModel(ScoreModelConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg_.dim < 1) throw std::invalid_argument("score model: dim must be >= 1");
    const int E = 2 * cfg_.time_frequencies;
    const int Ht = cfg_.t_hidden, Hx = cfg_.x_hidden, Hj = cfg_.joint_hidden, d = cfg_.dim;

    freqs_.resize(cfg_.time_frequencies);
    for (int i = 0; i < cfg_.time_frequencies; ++i) {
        const double u = cfg_.time_frequencies > 1
                             ? static_cast<double>(i) / (cfg_.time_frequencies - 1)
                             : 0.0;
        freqs_(i) = std::exp(u * std::log(1000.0));
    }

    Rng rng(seed);
    auto init = [&](int rows, int cols) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
        Mat w(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) w(i, j) = sd * rng.gaussian();
        return w;
    };

    params_.resize(kNumParams);
    params_[0] = init(E, Ht);
    params_[1] = Mat::Zero(1, Ht);
    params_[2] = init(Ht, Ht);
    params_[3] = Mat::Zero(1, Ht);
    params_[4] = init(d, Hx);
    params_[5] = Mat::Zero(1, Hx);
    params_[6] = init(Hx, Hx);
    params_[7] = Mat::Zero(1, Hx);
    params_[8] = init(Ht, Hj);
    params_[9] = init(Hx, Hj);
    params_[10] = Mat::Zero(1, Hj);
    params_[11] = Mat::Zero(Hj, d); // zero head: s == 0 at init
    params_[12] = Mat::Zero(1, d);
}

int ScoreModel::param_count() const {
    int n = 0;
    for (const auto& p : params_) n += static_cast<int>(p.size());
    return n;
}

Eigen::VectorXd ScoreModel::flat_params() const {
    Eigen::VectorXd theta(param_count());
    int off = 0;
    for (const auto& p : params_) {
        std::memcpy(theta.data() + off, p.data(), sizeof(double) * p.size());
        off += static_cast<int>(p.size());
    }
    return theta;
}

void ScoreModel::set_flat_params(const Eigen::VectorXd& theta) {
    if (theta.size() != param_count())
        throw std::invalid_argument("set_flat_params: size mismatch");
    int off = 0;
    for (auto& p : params_) {
        std::memcpy(p.data(), theta.data() + off, sizeof(double) * p.size());
        off += static_cast<int>(p.size());
    }
}

ScoreModel::Leaves ScoreModel::make_leaves(Tape& t) const {
    Leaves lv;
    lv.ids.reserve(params_.size());
    for (const auto& p : params_) lv.ids.push_back(t.leaf(p));
    return lv;
}

Eigen::MatrixXd ScoreModel::time_embedding(const Eigen::VectorXd& tv) const {
    const int K = cfg_.time_frequencies;
    Mat emb(tv.size(), 2 * K);
    for (Eigen::Index i = 0; i < tv.size(); ++i)
        for (int k = 0; k < K; ++k) {
            emb(i, k) = std::sin(freqs_(k) * tv(i));
            emb(i, K + k) = std::cos(freqs_(k) * tv(i));
        }
    return emb;
}

void ScoreModel::check_time(const DiffusionSchedule& sched, double t) const {
    if (t < sched.eps_time || t > sched.T)
        throw std::domain_error("score model: t outside [eps_time, T]");
}

ScoreModel::Eval ScoreModel::build(Tape& t, const Leaves& lv, const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& tv, const DiffusionSchedule& sched,
                                   const std::vector<Eigen::MatrixXd>& dirs) const {
    if (X.cols() != cfg_.dim) throw std::invalid_argument("score model: input dim mismatch");
    if (X.rows() != tv.size()) throw std::invalid_argument("score model: batch size mismatch");
    for (Eigen::Index i = 0; i < tv.size(); ++i) check_time(sched, tv(i));
    for (const auto& v : dirs)
        if (v.rows() != X.rows() || v.cols() != X.cols())
            throw std::invalid_argument("score model: direction shape mismatch");

    const auto& p = lv.ids;
    const size_t K = dirs.size();

    Eval ev;
    ev.x = t.leaf(X);

    // t branch (constant w.r.t. x; no tangent channel)
    const NodeId emb = t.constant(time_embedding(tv));
    const NodeId th = t.swish(t.add(t.matmul(emb, p[0]), p[1]));
    const NodeId te = t.add(t.matmul(th, p[2]), p[3]);

    // x branch with tangent channels
    const NodeId a1 = t.add(t.matmul(ev.x, p[4]), p[5]);
    auto [h1, d1] = t.swish_with_deriv(a1);
    const NodeId xe = t.add(t.matmul(h1, p[6]), p[7]);

    std::vector<NodeId> tan_xe(K);
    for (size_t k = 0; k < K; ++k) {
        const NodeId dv = t.constant(dirs[k]);
        const NodeId ta1 = t.matmul(dv, p[4]);
        tan_xe[k] = t.matmul(t.mul(ta1, d1), p[6]);
    }

    // joint head; the concat is expressed as a sum of two matmuls so the
    // tangent only flows through the x side
    const NodeId pre = t.add(t.add(t.matmul(te, p[8]), t.matmul(xe, p[9])), p[10]);
    auto [h2, d2] = t.swish_with_deriv(pre);
    ev.net = t.add(t.matmul(h2, p[11]), p[12]);

    Eigen::VectorXd inv_sigma(tv.size());
    for (Eigen::Index i = 0; i < tv.size(); ++i) inv_sigma(i) = 1.0 / sched.sigma(tv(i));
    const NodeId isg = t.constant(Mat(inv_sigma));
    ev.s = t.mul(ev.net, isg);

    ev.s_jvp.resize(K);
    for (size_t k = 0; k < K; ++k) {
        const NodeId tpre = t.matmul(tan_xe[k], p[9]);
        const NodeId tnet = t.matmul(t.mul(tpre, d2), p[11]);
        ev.s_jvp[k] = t.mul(tnet, isg);
    }
    return ev;
}

Eigen::VectorXd ScoreModel::score(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                  double t) const {
    Tape tape;
    const Leaves lv = make_leaves(tape);
    const Eval ev = build(tape, lv, x.transpose(), Eigen::VectorXd::Constant(1, t), sched);
    return tape.val(ev.s).row(0);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> ScoreModel::score_jvp(const DiffusionSchedule& sched,
                                                                  const Eigen::VectorXd& x,
                                                                  double t,
                                                                  const Eigen::VectorXd& v) const {
    if (v.size() != cfg_.dim) throw std::invalid_argument("score_jvp: direction dim mismatch");
    Tape tape;
    const Leaves lv = make_leaves(tape);
    const Eval ev =
        build(tape, lv, x.transpose(), Eigen::VectorXd::Constant(1, t), sched, {v.transpose()});
    return {tape.val(ev.s).row(0), tape.val(ev.s_jvp[0]).row(0)};
}

ScoreModel::GradDiv ScoreModel::grad_div(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                         double t, const Eigen::VectorXd& v) const {
    Tape tape;
    const Leaves lv = make_leaves(tape);
    const Eval ev =
        build(tape, lv, x.transpose(), Eigen::VectorXd::Constant(1, t), sched, {v.transpose()});
    const NodeId cot = tape.constant(Mat(v.transpose()));
    const NodeId w = tape.vjp(ev.s_jvp[0], cot, ev.x);
    GradDiv out;
    out.s_jvp = tape.val(ev.s_jvp[0]).row(0);
    out.vjp = tape.val(w).row(0);
    out.s = tape.val(ev.s).row(0);
    return out;
}

Eigen::MatrixXd ScoreModel::full_jacobian(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                          double t) const {
    if (cfg_.dim > kExactDimLimit)
        throw std::invalid_argument(
            "full_jacobian: dim > 4; use the estimated (Hutchinson) objectives instead");
    Tape tape;
    const Leaves lv = make_leaves(tape);
    std::vector<Mat> dirs;
    for (int k = 0; k < cfg_.dim; ++k) {
        Mat e = Mat::Zero(1, cfg_.dim);
        e(0, k) = 1.0;
        dirs.push_back(e);
    }
    const Eval ev = build(tape, lv, x.transpose(), Eigen::VectorXd::Constant(1, t), sched, dirs);
    Mat J(cfg_.dim, cfg_.dim);
    for (int k = 0; k < cfg_.dim; ++k) J.col(k) = tape.val(ev.s_jvp[k]).row(0).transpose();
    return J;
}

std::pair<double, Eigen::VectorXd> ScoreModel::exact_div_grad(const DiffusionSchedule& sched,
                                                              const Eigen::VectorXd& x,
                                                              double t) const {
    const auto bd = batch_derivs(sched, x.transpose(), t, 2);
    return {bd.trace(0), bd.grad_trace.row(0)};
}

ScoreModel::BatchDerivs ScoreModel::batch_derivs(const DiffusionSchedule& sched,
                                                 const Eigen::MatrixXd& X, double t,
                                                 int level) const {
    // Value-mode jet propagation: first-order tangents give the Jacobian
    // columns, second-order tangents give the gradient of the trace. This is
    // the hot path of every ODE solve, so it avoids the tape entirely; the
    // tape build() is the reference implementation it is tested against.
    if (level > 0 && cfg_.dim > kExactDimLimit)
        throw std::invalid_argument(
            "batch_derivs: dim > 4; use the estimated (Hutchinson) objectives instead");
    if (X.cols() != cfg_.dim) throw std::invalid_argument("batch_derivs: input dim mismatch");
    check_time(sched, t);

    const int d = cfg_.dim;
    const Eigen::Index B = X.rows();
    const Mat& Wt1 = params_[0];
    const Mat& Wt2 = params_[2];
    const Mat& Wx1 = params_[4];
    const Mat& Wx2 = params_[6];
    const Mat& Wjt = params_[8];
    const Mat& Wjx = params_[9];
    const Mat& Wj2 = params_[11];

    auto sigmoid = [](const Mat& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); };

    // t branch
    const Eigen::VectorXd tv = Eigen::VectorXd::Constant(B, t);
    Mat at = (time_embedding(tv) * Wt1).rowwise() + params_[1].row(0);
    const Mat ht = at.cwiseProduct(sigmoid(at));
    const Mat te = (ht * Wt2).rowwise() + params_[3].row(0);

    // x branch with derivative caches
    Mat a1 = (X * Wx1).rowwise() + params_[5].row(0);
    const Mat sg1 = sigmoid(a1);
    const Mat h1 = a1.cwiseProduct(sg1);
    // swish': sg (1 + a (1 - sg)); swish'': sg (1 - sg) (2 + a (1 - 2 sg))
    const Mat d1 =
        (sg1.array() * (1.0 + a1.array() * (1.0 - sg1.array()))).matrix();
    const Mat xe = (h1 * Wx2).rowwise() + params_[7].row(0);

    Mat pre = (te * Wjt + xe * Wjx).rowwise() + params_[10].row(0);
    const Mat sg2 = sigmoid(pre);
    const Mat h2 = pre.cwiseProduct(sg2);
    const Mat d2 =
        (sg2.array() * (1.0 + pre.array() * (1.0 - sg2.array()))).matrix();
    const Mat net = (h2 * Wj2).rowwise() + params_[12].row(0);

    const double inv_sigma = 1.0 / sched.sigma(t);
    BatchDerivs out;
    out.s = inv_sigma * net;
    if (level == 0) return out;

    // First-order tangents along basis directions e_k. The direction matrix
    // for e_k is the k-th row of Wx1 broadcast over the batch.
    std::vector<Mat> ta1(d), tpre(d);
    out.jcols.resize(d);
    out.trace = Eigen::VectorXd::Zero(B);
    for (int k = 0; k < d; ++k) {
        // tangent of a1 is constant across the batch: row k of Wx1
        const Eigen::RowVectorXd wrow = Wx1.row(k);
        Mat th1 = (d1.array().rowwise() * wrow.array()).matrix(); // tangent of h1
        tpre[k] = (th1 * Wx2) * Wjx;                   // tangent of pre
        const Mat tnet = tpre[k].cwiseProduct(d2) * Wj2;
        out.jcols[k] = inv_sigma * tnet;
        out.trace += out.jcols[k].col(k);
        if (level >= 2) ta1[k] = std::move(th1);
    }
    if (level < 2) return out;

    const Mat dd1 =
        (sg1.array() * (1.0 - sg1.array()) * (2.0 + a1.array() * (1.0 - 2.0 * sg1.array())))
            .matrix();
    const Mat dd2 =
        (sg2.array() * (1.0 - sg2.array()) * (2.0 + pre.array() * (1.0 - 2.0 * sg2.array())))
            .matrix();

    // Second tangents t_{jk}(net); grad_trace component j = sum_k t_{jk}[col k].
    out.grad_trace = Mat::Zero(B, d);
    for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
            const Eigen::RowVectorXd wj = Wx1.row(j);
            const Eigen::RowVectorXd wk = Wx1.row(k);
            // t_{jk}(h1) = w_j . w_k . swish''(a1); tangents of a1 are constant
            const Mat tjk_h1 =
                (dd1.array().rowwise() * (wj.array() * wk.array())).matrix();
            const Mat tjk_pre = (tjk_h1 * Wx2) * Wjx;
            const Mat tjk_h2 = tjk_pre.cwiseProduct(d2) +
                               tpre[j].cwiseProduct(tpre[k]).cwiseProduct(dd2);
            const Mat tjk_net = inv_sigma * (tjk_h2 * Wj2);
            out.grad_trace.col(j) += tjk_net.col(k);
            if (k != j) out.grad_trace.col(k) += tjk_net.col(j);
        }
    return out;
}

void ScoreModel::save_checkpoint(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "hodsm-checkpoint";
    j["version"] = 1;
    j["dim"] = cfg_.dim;
    j["time_frequencies"] = cfg_.time_frequencies;
    j["t_hidden"] = cfg_.t_hidden;
    j["x_hidden"] = cfg_.x_hidden;
    j["joint_hidden"] = cfg_.joint_hidden;
    j["seed"] = seed_;
    const Eigen::VectorXd theta = flat_params();
    // 64-bit little-endian payload; base64 keeps the round trip bit-exact.
    j["theta_b64"] = base64_encode(reinterpret_cast<const uint8_t*>(theta.data()),
                                   sizeof(double) * theta.size());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << j.dump(2) << "\n";
}

ScoreModel ScoreModel::load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json j;
    f >> j;
    if (j.value("format", "") != "hodsm-checkpoint" || j.value("version", 0) != 1)
        throw std::runtime_error("unrecognized checkpoint format: " + path);
    ScoreModelConfig cfg;
    cfg.dim = j.at("dim").get<int>();
    cfg.time_frequencies = j.at("time_frequencies").get<int>();
    cfg.t_hidden = j.at("t_hidden").get<int>();
    cfg.x_hidden = j.at("x_hidden").get<int>();
    cfg.joint_hidden = j.at("joint_hidden").get<int>();
    ScoreModel m(cfg, j.at("seed").get<uint64_t>());
    const auto bytes = base64_decode(j.at("theta_b64").get<std::string>());
    if (bytes.size() != sizeof(double) * static_cast<size_t>(m.param_count()))
        throw std::runtime_error("checkpoint parameter size mismatch");
    Eigen::VectorXd theta(m.param_count());
    std::memcpy(theta.data(), bytes.data(), bytes.size());
    m.set_flat_params(theta);
    return m;
}

} // namespace hodsm
