#include "stealth/bias_direction.hpp"

#include "stealth/error.hpp"
#include "stealth/kernels.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace stealth {

namespace {

ProjectionStats projection_stats(const RowMatrix& x, const Vector& v) {
  const Vector proj = x * v;
  ProjectionStats s;
  s.mean = proj.mean();
  s.std = std::sqrt((proj.array() - s.mean).square().mean());
  s.min = proj.minCoeff();
  return s;
}

}  // namespace

BiasDirection compute_bias_direction(const FeatureCloud& cloud) {
  require(cloud.size() >= 2, "bias direction needs N >= 2");
  const Vector mu = kernels::parallel::mean(cloud.vectors);
  require(mu.norm() > 0.0, "bias direction: feature cloud has zero mean");
  const Matrix cov = kernels::parallel::covariance(cloud.vectors, mu);

  const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector& lambda = eig.eigenvalues();
  const Matrix& basis = eig.eigenvectors();
  const double cutoff = kPinvCutoff * std::max(lambda.maxCoeff(), 0.0);

  Vector pinv_mu = Vector::Zero(mu.size());
  Vector range_mu = Vector::Zero(mu.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) <= cutoff || lambda(i) <= 0.0) continue;
    const double coeff = basis.col(i).dot(mu);
    range_mu += coeff * basis.col(i);
    pinv_mu += (coeff / lambda(i)) * basis.col(i);
  }
  const Vector null_mu = mu - range_mu;

  BiasDirection bd;
  bd.train_mean = mu;
  bd.training_size = cloud.size();
  if (null_mu.norm() > 1e-8 * mu.norm()) {
    bd.degenerate = true;
    bd.v = null_mu / null_mu.squaredNorm();
  } else {
    bd.v = pinv_mu / pinv_mu.dot(mu);
  }
  const ProjectionStats s = projection_stats(cloud.vectors, bd.v);
  bd.train_mean_proj = s.mean;
  bd.train_proj_std = s.std;
  return bd;
}

double bias_objective(const FeatureCloud& cloud, const Vector& u) {
  const Vector mu = kernels::parallel::mean(cloud.vectors);
  const Vector proj = cloud.vectors * u;
  return (proj.array() - mu.dot(u)).square().mean();
}

ProjectionStats validate_bias_direction(const BiasDirection& bd, const FeatureCloud& test_cloud) {
  require(test_cloud.dim() == bd.v.size(), "validate_bias_direction: dimension mismatch");
  require(test_cloud.size() >= 1, "validate_bias_direction: empty test cloud");
  return projection_stats(test_cloud.vectors, bd.v);
}

nlohmann::json to_json(const BiasDirection& bd) {
  return {{"v", to_std(bd.v)},
          {"train_mean", to_std(bd.train_mean)},
          {"train_mean_proj", bd.train_mean_proj},
          {"train_proj_std", bd.train_proj_std},
          {"training_size", bd.training_size},
          {"degenerate", bd.degenerate}};
}

BiasDirection bias_direction_from_json(const nlohmann::json& j) {
  BiasDirection bd;
  bd.v = from_std(j.at("v").get<std::vector<double>>());
  bd.train_mean = from_std(j.at("train_mean").get<std::vector<double>>());
  bd.train_mean_proj = j.at("train_mean_proj").get<double>();
  bd.train_proj_std = j.at("train_proj_std").get<double>();
  bd.training_size = j.at("training_size").get<Eigen::Index>();
  bd.degenerate = j.value("degenerate", false);
  return bd;
}

}  // namespace stealth
