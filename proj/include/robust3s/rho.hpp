#pragma once

#include <cmath>
#include <stdexcept>

// Bounded loss functions, expressed on the squared standardized distance
// scale: rho(t) climbs from 0 to its ceiling of 1, and the tuning that
// achieves a given breakdown/consistency trade-off is applied to t by the
// caller. In this parametrization the bisquare transition happens on [0, 1].

namespace robust3s {

enum class RhoKind { tukey_bisquare, huber };

template <typename Scalar>
inline Scalar rho_bisquare(Scalar t) {
  if (t >= Scalar(1)) return Scalar(1);
  const Scalar u = Scalar(1) - t;
  return Scalar(1) - u * u * u;
}

template <typename Scalar>
inline Scalar drho_bisquare(Scalar t) {
  if (t >= Scalar(1)) return Scalar(0);
  const Scalar u = Scalar(1) - t;
  return Scalar(3) * u * u;
}

/// Second derivative; continuous at the t = 1 junction where it reaches 0.
template <typename Scalar>
inline Scalar ddrho_bisquare(Scalar t) {
  if (t >= Scalar(1)) return Scalar(0);
  return Scalar(-6) * (Scalar(1) - t);
}

template <typename Scalar>
inline Scalar rho_huber(Scalar t) {
  const Scalar h = t * t / Scalar(2);
  return h >= Scalar(1) ? Scalar(1) : h;
}

template <typename Scalar>
inline Scalar drho_huber(Scalar t) {
  return t * t / Scalar(2) >= Scalar(1) ? Scalar(0) : t;
}

inline double rho_eval(RhoKind kind, double t) {
  if (t < 0.0) throw std::invalid_argument("rho_eval: negative argument");
  return kind == RhoKind::tukey_bisquare ? rho_bisquare(t) : rho_huber(t);
}

inline double drho_eval(RhoKind kind, double t) {
  if (t < 0.0) throw std::invalid_argument("drho_eval: negative argument");
  return kind == RhoKind::tukey_bisquare ? drho_bisquare(t) : drho_huber(t);
}

}  // namespace robust3s
