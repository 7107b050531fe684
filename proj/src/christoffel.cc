#include "reachcal/christoffel.h"

#include "reachcal/errors.h"
#include "reachcal/parallel.h"

namespace reachcal {
namespace {

void emit(std::size_t var, int remaining, std::vector<int>& cur,
          std::vector<std::vector<int>>& out) {
  if (var + 1 == cur.size()) {
    cur[var] = remaining;
    out.push_back(cur);
    return;
  }
  for (int p = remaining; p >= 0; --p) {
    cur[var] = p;
    emit(var + 1, remaining - p, cur, out);
  }
}

Eigen::MatrixXd basis_columns(const Eigen::MatrixXd& scaled_rows,
                              const std::vector<std::vector<int>>& exps, int degree) {
  const Eigen::Index m = scaled_rows.rows();
  const Eigen::Index n = scaled_rows.cols();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(exps.size()), m);
  std::vector<Eigen::MatrixXd> powers(static_cast<std::size_t>(n),
                                      Eigen::MatrixXd(degree + 1, m));
  for (Eigen::Index v = 0; v < n; ++v) {
    auto& pw = powers[static_cast<std::size_t>(v)];
    pw.row(0).setOnes();
    for (int p = 1; p <= degree; ++p) {
      pw.row(p) = pw.row(p - 1).cwiseProduct(scaled_rows.col(v).transpose());
    }
  }
  for (std::size_t b = 0; b < exps.size(); ++b) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Ones(m);
    for (Eigen::Index v = 0; v < n; ++v) {
      const int p = exps[b][static_cast<std::size_t>(v)];
      if (p > 0) row = row.cwiseProduct(powers[static_cast<std::size_t>(v)].row(p));
    }
    z.row(static_cast<Eigen::Index>(b)) = row;
  }
  return z;
}

Eigen::MatrixXd scale_rows(const Eigen::MatrixXd& xs, const ChristoffelModel& m) {
  Eigen::MatrixXd s = xs.rowwise() - m.center.transpose();
  s.array().rowwise() /= m.half_width.transpose().array();
  return s;
}

}  // namespace

std::vector<std::vector<int>> monomial_exponents(std::size_t n, int d) {
  if (n < 1) throw ContractViolation("monomial_exponents: n must be >= 1");
  if (d < 0) throw ContractViolation("monomial_exponents: degree must be >= 0");
  std::vector<std::vector<int>> out;
  std::vector<int> cur(n, 0);
  for (int deg = 0; deg <= d; ++deg) emit(0, deg, cur, out);
  return out;
}

Eigen::VectorXd monomial_basis(const Eigen::VectorXd& x, int d) {
  const auto exps = monomial_exponents(static_cast<std::size_t>(x.size()), d);
  Eigen::MatrixXd row = x.transpose();
  return basis_columns(row, exps, d).col(0);
}

ChristoffelModel christoffel_fit(const Eigen::MatrixXd& samples, int degree, double ridge) {
  if (samples.rows() < 1) throw ContractViolation("christoffel_fit: no samples");
  ChristoffelModel m;
  m.n = static_cast<std::size_t>(samples.cols());
  m.degree = degree;
  m.exponents = monomial_exponents(m.n, degree);
  m.basis_dim = m.exponents.size();
  const Eigen::VectorXd lo = samples.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = samples.colwise().maxCoeff().transpose();
  m.center = 0.5 * (lo + hi);
  m.half_width = (0.5 * (hi - lo)).unaryExpr([](double w) { return w > 0 ? w : 1.0; });

  const Eigen::MatrixXd z = basis_columns(scale_rows(samples, m), m.exponents, degree);
  m.moment = (z * z.transpose()) / static_cast<double>(samples.rows());
  const auto b = static_cast<Eigen::Index>(m.basis_dim);
  m.ridge = ridge < 0 ? 1e-10 * m.moment.trace() / static_cast<double>(m.basis_dim) : ridge;
  m.factor.compute(m.moment + m.ridge * Eigen::MatrixXd::Identity(b, b));
  const Eigen::VectorXd diag = m.factor.vectorD();
  const double dmax = diag.cwiseAbs().maxCoeff();
  if (m.factor.info() != Eigen::Success || !(diag.minCoeff() > 1e-14 * dmax)) {
    throw NumericError("christoffel_fit: moment matrix is singular (degree " +
                       std::to_string(degree) + "); use a positive ridge");
  }
  return m;
}

std::vector<double> christoffel_scores(const Eigen::MatrixXd& xs, const ChristoffelModel& model) {
  if (static_cast<std::size_t>(xs.cols()) != model.n) {
    throw ContractViolation("christoffel_scores: dimension mismatch");
  }
  const Eigen::MatrixXd z = basis_columns(scale_rows(xs, model), model.exponents, model.degree);
  const Eigen::MatrixXd w = model.factor.solve(z);
  const Eigen::VectorXd s = z.cwiseProduct(w).colwise().sum().transpose();
  return std::vector<double>(s.data(), s.data() + s.size());
}

double christoffel_score(const Eigen::VectorXd& x, const ChristoffelModel& model) {
  Eigen::MatrixXd row = x.transpose();
  return christoffel_scores(row, model).front();
}

ChristoffelScore::ChristoffelScore(std::vector<ChristoffelModel> per_step, std::size_t full_dim,
                                   std::vector<int> projection)
    : models_(std::move(per_step)), full_dim_(full_dim), projection_(std::move(projection)) {
  if (models_.empty()) throw ContractViolation("ChristoffelScore: no models");
}

std::vector<double> ChristoffelScore::score(const Eigen::MatrixXd& states, int k, Domain,
                                            std::uint64_t) const {
  if (k < 0 || static_cast<std::size_t>(k) >= models_.size()) {
    throw ContractViolation("ChristoffelScore: no model for step " + std::to_string(k));
  }
  const auto& model = models_[static_cast<std::size_t>(k)];
  Eigen::MatrixXd xs;
  if (projection_.empty()) {
    xs = states;
  } else {
    xs.resize(states.rows(), static_cast<Eigen::Index>(projection_.size()));
    for (std::size_t j = 0; j < projection_.size(); ++j) {
      xs.col(static_cast<Eigen::Index>(j)) = states.col(projection_[j]);
    }
  }
  std::vector<double> out(static_cast<std::size_t>(xs.rows()));
  constexpr std::size_t kChunk = 4096;
  const std::size_t rows = out.size();
  parallel_for((rows + kChunk - 1) / kChunk, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t c = b0; c < b1; ++c) {
      const std::size_t r0 = c * kChunk;
      const std::size_t r1 = std::min(rows, r0 + kChunk);
      auto part = christoffel_scores(
          xs.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - r0)), model);
      std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(r0));
    }
  }, 1);
  return out;
}

}  // namespace reachcal
