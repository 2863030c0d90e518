#include "owcl/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace owcl {

std::vector<double> naive_attention_with_prefix(const MultiHeadAttention& mha,
                                                const std::vector<double>& x, std::size_t T,
                                                const LayerPrefix* prefix) {
  const std::size_t C = mha.width, H = mha.heads, d = C / H;
  if (x.size() != T * C) throw std::invalid_argument("naive_attention: bad x size");
  const std::size_t P = prefix ? prefix->keys.rows() : 0;
  const std::size_t S = P + T;  // key/value token count

  // explicit concatenated token matrices
  std::vector<double> ktok(S * C), vtok(S * C);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      ktok[i * C + j] = prefix->keys.raw()[i * C + j];
      vtok[i * C + j] = prefix->values.raw()[i * C + j];
    }
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      ktok[(P + i) * C + j] = x[i * C + j];
      vtok[(P + i) * C + j] = x[i * C + j];
    }

  // per-head dense effective weights, LoRA folded in
  auto effective = [&](const Tensor& base, const std::shared_ptr<LoraPair>& lora,
                       std::size_t h) {
    std::vector<double> w(C * d);
    for (std::size_t i = 0; i < C * d; ++i) w[i] = base.raw()[i];
    if (lora) {
      const double s = lora->alpha / static_cast<double>(lora->rank);
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t r = 0; r < lora->rank; ++r)
            acc += lora->down.raw()[i * lora->rank + r] * lora->up[h].raw()[r * d + j];
          w[i * d + j] += s * acc;
        }
    }
    return w;
  };

  std::vector<double> concat(T * C);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t h = 0; h < H; ++h) {
    const auto wq = effective(mha.wq[h], mha.lora_q, h);
    const auto wk = effective(mha.wk[h], nullptr, h);
    const auto wv = effective(mha.wv[h], mha.lora_v, h);
    std::vector<double> q(T * d), k(S * d), v(S * d);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t l = 0; l < C; ++l) acc += x[i * C + l] * wq[l * d + j];
        q[i * d + j] = acc;
      }
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double ak = 0.0, av = 0.0;
        for (std::size_t l = 0; l < C; ++l) {
          ak += ktok[i * C + l] * wk[l * d + j];
          av += vtok[i * C + l] * wv[l * d + j];
        }
        k[i * d + j] = ak;
        v[i * d + j] = av;
      }
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> row(S);
      double mx = -1e300;
      for (std::size_t s = 0; s < S; ++s) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += q[i * d + j] * k[s * d + j];
        row[s] = acc * scale;
        mx = std::max(mx, row[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        row[s] = std::exp(row[s] - mx);
        z += row[s];
      }
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) acc += (row[s] / z) * v[s * d + j];
        concat[i * C + h * d + j] = acc;
      }
    }
  }

  // output projection
  std::vector<double> out(T * C);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      double acc = mha.out.bias.raw()[j];
      for (std::size_t l = 0; l < C; ++l) acc += concat[i * C + l] * mha.out.weight.raw()[l * C + j];
      out[i * C + j] = acc;
    }
  return out;
}

std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw std::invalid_argument("jacobi: bad matrix size");
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

std::vector<double> singular_values(const std::vector<double>& w, std::size_t m, std::size_t n) {
  if (w.size() != m * n) throw std::invalid_argument("singular_values: bad matrix size");
  std::vector<double> a;
  if (m > n) {  // transpose so rows are the short side
    a.resize(n * m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) a[j * m + i] = w[i * n + j];
    std::swap(m, n);
  } else {
    a = w;
  }
  // Phase 1: Householder LQ. After step k, row k is [l_k0 .. l_kk, 0 ...]; the
  // left m*m block then has the same singular values as the input.
  for (std::size_t k = 0; k < m; ++k) {
    double* rk = &a[k * n];
    double norm2 = 0.0;
    for (std::size_t j = k; j < n; ++j) norm2 += rk[j] * rk[j];
    if (norm2 == 0.0) continue;
    const double alpha = rk[k] >= 0.0 ? -std::sqrt(norm2) : std::sqrt(norm2);
    const double vnorm2 = 2.0 * (norm2 - rk[k] * alpha);
    if (vnorm2 <= 0.0) continue;
    rk[k] -= alpha;  // row tail now holds the Householder vector
    const double inv = 2.0 / vnorm2;
    for (std::size_t i = k + 1; i < m; ++i) {
      double* ri = &a[i * n];
      double dot = 0.0;
      for (std::size_t j = k; j < n; ++j) dot += ri[j] * rk[j];
      const double c = dot * inv;
      if (c != 0.0)
        for (std::size_t j = k; j < n; ++j) ri[j] -= c * rk[j];
    }
    rk[k] = alpha;
    for (std::size_t j = k + 1; j < n; ++j) rk[j] = 0.0;
  }
  // Phase 2: one-sided Jacobi on the rows of the square factor; at convergence
  // the rows are mutually orthogonal and their norms are the singular values.
  std::vector<double> l(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) l[i * m + j] = a[i * n + j];
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t q = p + 1; q < m; ++q) {
        double* rp = &l[p * m];
        double* rq = &l[q * m];
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          app += rp[j] * rp[j];
          aqq += rq[j] * rq[j];
          apq += rp[j] * rq[j];
        }
        if (apq == 0.0 || std::abs(apq) <= 1e-15 * std::sqrt(app) * std::sqrt(aqq)) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t j = 0; j < m; ++j) {
          const double xp = rp[j], xq = rq[j];
          rp[j] = c * xp - s * xq;
          rq[j] = s * xp + c * xq;
        }
      }
    if (!rotated) break;
  }
  std::vector<double> sv(m);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += l[i * m + j] * l[i * m + j];
    sv[i] = std::sqrt(acc);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

std::size_t numerical_rank(const std::vector<double>& sigma, double tol) {
  std::size_t r = 0;
  for (double s : sigma)
    if (s > tol) ++r;
  return r;
}

}  // namespace owcl
