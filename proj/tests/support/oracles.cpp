#include "support/oracles.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace oracle {

using namespace uavtraj;

SnapProblem random_snap_problem(std::mt19937_64& rng, int waypoint_count) {
  std::uniform_real_distribution<double> coord(-10.0, 10.0);
  std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(1.0, 8.0);
  std::vector<polysnap::Waypoint> waypoints;
  while (static_cast<int>(waypoints.size()) < waypoint_count) {
    const Eigen::Vector3d p(coord(rng), coord(rng), coord(rng));
    if (!waypoints.empty() && (p - waypoints.back().position).norm() < 0.5) continue;
    waypoints.push_back({p, yaw(rng)});
  }
  const double v = speed(rng);
  std::vector<double> knots{0.0};
  for (std::size_t j = 1; j < waypoints.size(); ++j)
    knots.push_back(knots.back() + (waypoints[j].position - waypoints[j - 1].position).norm() / v);
  return {waypoints, polysnap::SegmentedTimeline(knots)};
}

namespace {

// d^k/dtau^k of sum c_i tau^i, by expanding each monomial separately.
double poly_derivative(const std::vector<double>& c, double tau, int k) {
  double sum = 0.0;
  for (int i = k; i < static_cast<int>(c.size()); ++i) {
    double factor = 1.0;
    for (int j = 0; j < k; ++j) factor *= static_cast<double>(i - j);
    sum += c[static_cast<std::size_t>(i)] * factor * std::pow(tau, i - k);
  }
  return sum;
}

std::vector<double> coefficients(const polysnap::PiecewiseTrajectory& t, std::size_t seg, int ch) {
  std::vector<double> c(static_cast<std::size_t>(t.order() + 1));
  for (int i = 0; i <= t.order(); ++i) c[static_cast<std::size_t>(i)] = t.coefficient(seg, ch, i);
  return c;
}

}  // namespace

double simpson_cost(const polysnap::PiecewiseTrajectory& trajectory, double c_r, double c_psi, int intervals) {
  if (intervals % 2) ++intervals;
  const auto& tl = trajectory.timeline();
  double total = 0.0;
  for (std::size_t j = 0; j < tl.segments(); ++j) {
    const double T = tl.duration(j);
    std::array<std::vector<double>, 4> c;
    for (int ch = 0; ch < 4; ++ch) c[static_cast<std::size_t>(ch)] = coefficients(trajectory, j, ch);
    const auto integrand = [&](double tau) {
      double s = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double d4 = poly_derivative(c[static_cast<std::size_t>(ch)], tau, 4) / std::pow(T, 4);
        s += c_r * d4 * d4;
      }
      const double d2 = poly_derivative(c[3], tau, 2) / (T * T);
      return s + c_psi * d2 * d2;
    };
    const double h = 1.0 / intervals;
    double sum = integrand(0.0) + integrand(1.0);
    for (int i = 1; i < intervals; ++i) sum += (i % 2 ? 4.0 : 2.0) * integrand(i * h);
    total += sum * h / 3.0 * T;  // dt = T dtau
  }
  return total;
}

double continuity_error(const polysnap::PiecewiseTrajectory& trajectory) {
  const auto& tl = trajectory.timeline();
  double worst = 0.0;
  for (std::size_t j = 0; j + 1 < tl.segments(); ++j) {
    for (int ch = 0; ch < 4; ++ch) {
      const int orders = ch == 3 ? 2 : 4;
      const auto left = coefficients(trajectory, j, ch);
      const auto right = coefficients(trajectory, j + 1, ch);
      for (int d = 0; d < orders; ++d) {
        const double a = poly_derivative(left, 1.0, d) / std::pow(tl.duration(j), d);
        const double b = poly_derivative(right, 0.0, d) / std::pow(tl.duration(j + 1), d);
        const double scale = std::max({1.0, std::abs(a), std::abs(b)});
        worst = std::max(worst, std::abs(a - b) / scale);
      }
    }
  }
  return worst;
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& a) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double tol = std::max(a.rows(), a.cols()) * s(0) * 1e-13;
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > tol) ++rank;
  return svd.matrixV().rightCols(a.cols() - rank);
}

double iterative_min_cost(const polysnap::QpSystem& qp) {
  const Eigen::MatrixXd& q = qp.cost;
  const Eigen::MatrixXd& a = qp.constraints;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd particular = svd.solve(qp.rhs);
  const Eigen::MatrixXd n = null_space(a);

  // min (p + N z)' Q (p + N z)  <=>  H z = -g with H = N'QN, g = N'Q p.
  const Eigen::MatrixXd h = n.transpose() * q * n;
  const Eigen::VectorXd g = n.transpose() * q * particular;
  const Eigen::VectorXd precond = h.diagonal().cwiseMax(1e-300).cwiseInverse();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(h.rows());
  Eigen::VectorXd r = -g;
  Eigen::VectorXd y = precond.cwiseProduct(r);
  Eigen::VectorXd dir = y;
  double ry = r.dot(y);
  const double r0 = r.norm();
  for (int it = 0; it < 50 * h.rows() && r.norm() > 1e-15 * r0; ++it) {
    const Eigen::VectorXd hd = h * dir;
    const double alpha = ry / dir.dot(hd);
    z += alpha * dir;
    r -= alpha * hd;
    y = precond.cwiseProduct(r);
    const double ry_next = r.dot(y);
    dir = y + (ry_next / ry) * dir;
    ry = ry_next;
  }
  const Eigen::VectorXd c = particular + n * z;
  return c.dot(q * c);
}

double worst_perturbation_gain(const polysnap::QpSystem& qp, const Eigen::VectorXd& optimum, std::mt19937_64& rng,
                               int count, double relative) {
  const Eigen::MatrixXd n = null_space(qp.constraints);
  const double base = optimum.dot(qp.cost * optimum);
  std::normal_distribution<double> normal;
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd z(n.cols());
    for (auto& v : z) v = normal(rng);
    Eigen::VectorXd delta = n * z;
    delta *= relative * optimum.norm() / delta.norm();
    const Eigen::VectorXd c = optimum + delta;
    worst = std::min(worst, (c.dot(qp.cost * c) - base) / std::max(base, 1e-300));
  }
  return worst;
}

Pixel homogeneous_project(const camera::Intrinsics& k, double height, double inclination, const Eigen::Vector3d& world) {
  Eigen::Matrix4d translate = Eigen::Matrix4d::Identity();
  translate(2, 3) = -height;
  // Level camera: X = x, Y = -z, Z = y.
  Eigen::Matrix4d level = Eigen::Matrix4d::Zero();
  level(0, 0) = 1.0;
  level(1, 2) = -1.0;
  level(2, 1) = 1.0;
  level(3, 3) = 1.0;
  // Pitching the camera up by theta rotates scene points by -theta about X.
  const double a = -inclination;
  Eigen::Matrix4d pitch = Eigen::Matrix4d::Identity();
  pitch(1, 1) = std::cos(a);
  pitch(1, 2) = -std::sin(a);
  pitch(2, 1) = std::sin(a);
  pitch(2, 2) = std::cos(a);
  Eigen::Matrix4d intr = Eigen::Matrix4d::Identity();
  intr(0, 0) = k.focal_px;
  intr(1, 1) = k.focal_px;
  intr(0, 2) = k.principal_x;
  intr(1, 2) = k.principal_y;
  const Eigen::Vector4d hom = intr * pitch * level * translate * world.homogeneous();
  return {hom(0) / hom(2), hom(1) / hom(2)};
}

std::array<AxisFilter, 2> reference_kalman(std::span<const Pixel> obs, double q, double r, double velocity_variance) {
  std::array<AxisFilter, 2> f;
  for (int axis = 0; axis < 2; ++axis) {
    auto& s = f[static_cast<std::size_t>(axis)];
    const auto z = [&](std::size_t t) { return axis == 0 ? obs[t].u : obs[t].v; };
    s.p = z(0);
    s.v = 0.0;
    s.ppp = r;
    s.ppv = 0.0;
    s.pvv = velocity_variance;
    for (std::size_t t = 1; t < obs.size(); ++t) {
      // Predict with F = [[1,1],[0,1]], Q = q [[1/4,1/2],[1/2,1]].
      s.p += s.v;
      const double ppp = s.ppp + 2.0 * s.ppv + s.pvv + 0.25 * q;
      const double ppv = s.ppv + s.pvv + 0.5 * q;
      const double pvv = s.pvv + q;
      // Update with H = [1, 0].
      const double innovation_var = ppp + r;
      const double kp = ppp / innovation_var;
      const double kv = ppv / innovation_var;
      const double innovation = z(t) - s.p;
      s.p += kp * innovation;
      s.v += kv * innovation;
      s.ppp = (1.0 - kp) * ppp;
      s.ppv = (1.0 - kp) * ppv;
      s.pvv = pvv - kv * ppv;
    }
  }
  return f;
}

seqmodel::GaussianForecast reference_forward(const seqmodel::MdnModel& model, std::span<const Pixel> observed) {
  using seqmodel::Tensor;
  const auto& d = model.dims();
  const int e = d.embedding, h = d.hidden;
  const auto we = model.tensor(Tensor::kEmbeddingWeight);
  const auto be = model.tensor(Tensor::kEmbeddingBias);
  const auto wi = model.tensor(Tensor::kInputWeight);
  const auto wr = model.tensor(Tensor::kRecurrentWeight);
  const auto bg = model.tensor(Tensor::kGateBias);
  const auto wo = model.tensor(Tensor::kHeadWeight);
  const auto bo = model.tensor(Tensor::kHeadBias);
  const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  const Pixel last = observed.back();
  std::vector<double> hs(static_cast<std::size_t>(h), 0.0), cs(static_cast<std::size_t>(h), 0.0);
  for (const Pixel& p : observed) {
    const double x0 = (p.u - last.u) / model.coding_scale();
    const double x1 = (p.v - last.v) / model.coding_scale();
    std::vector<double> emb(static_cast<std::size_t>(e));
    for (int i = 0; i < e; ++i) {
      const double a = we[static_cast<std::size_t>(2 * i)] * x0 + we[static_cast<std::size_t>(2 * i + 1)] * x1 +
                       be[static_cast<std::size_t>(i)];
      emb[static_cast<std::size_t>(i)] = a > 0.0 ? a : 0.0;
    }
    std::vector<double> pre(static_cast<std::size_t>(4 * h));
    for (int row = 0; row < 4 * h; ++row) {
      double a = bg[static_cast<std::size_t>(row)];
      for (int k = 0; k < e; ++k)
        a += wi[static_cast<std::size_t>(row * e + k)] * emb[static_cast<std::size_t>(k)];
      for (int k = 0; k < h; ++k)
        a += wr[static_cast<std::size_t>(row * h + k)] * hs[static_cast<std::size_t>(k)];
      pre[static_cast<std::size_t>(row)] = a;
    }
    for (int k = 0; k < h; ++k) {
      const auto at = [&](int gate) { return pre[static_cast<std::size_t>(gate * h + k)]; };
      const double c = sig(at(1)) * cs[static_cast<std::size_t>(k)] + sig(at(0)) * std::tanh(at(2));
      cs[static_cast<std::size_t>(k)] = c;
      hs[static_cast<std::size_t>(k)] = sig(at(3)) * std::tanh(c);
    }
  }
  seqmodel::GaussianForecast out;
  for (int n = 0; n < d.horizon; ++n) {
    double y[5];
    for (int j = 0; j < 5; ++j) {
      const int row = 5 * n + j;
      double a = bo[static_cast<std::size_t>(row)];
      for (int k = 0; k < h; ++k) a += wo[static_cast<std::size_t>(row * h + k)] * hs[static_cast<std::size_t>(k)];
      y[j] = a;
    }
    seqmodel::StepGaussian g;
    g.mean = {last.u + model.coding_scale() * y[0], last.v + model.coding_scale() * y[1]};
    g.sigma_u = std::exp(y[2]);
    g.sigma_v = std::exp(y[3]);
    g.rho = std::max(-0.999, std::min(0.999, std::tanh(y[4])));
    out.push_back(g);
  }
  return out;
}

double reference_step_nll(const seqmodel::StepGaussian& g, const Pixel& target) {
  const double a = g.sigma_u * g.sigma_u;
  const double b = g.rho * g.sigma_u * g.sigma_v;
  const double d = g.sigma_v * g.sigma_v;
  const double det = a * d - b * b;
  const double du = target.u - g.mean.u;
  const double dv = target.v - g.mean.v;
  const double maha = (d * du * du - 2.0 * b * du * dv + a * dv * dv) / det;
  return std::log(2.0 * std::numbers::pi) + 0.5 * std::log(det) + 0.5 * maha;
}

void ReferenceAdam::apply(std::vector<double>& params, const std::vector<double>& grad, double lr) {
  if (m.empty()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
  }
}

}  // namespace oracle
