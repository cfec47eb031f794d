use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_pp_init;
use crate::error::{invalid, Error, Result};

pub const COVARIANCE_REG: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub n_components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            n_components: 6,
            tol: 1e-4,
            max_iter: 200,
            seed: 0,
        }
    }
}

/// Full-covariance Gaussian mixture over 3-D PCA vectors of one center,
/// plus the per-component lesion prevalence once estimated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub center_id: u8,
    pub n_components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub covariances: Vec<[[f64; 3]; 3]>,
    pub pi_l: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

struct Component {
    log_weight: f64,
    mean: Vector3<f64>,
    inv: Matrix3<f64>,
    log_norm: f64,
}

fn to_matrix(c: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| c[i][j])
}

fn from_matrix(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn prepare(weights: &[f64], means: &[[f64; 3]], covs: &[[[f64; 3]; 3]]) -> Result<Vec<Component>> {
    weights
        .iter()
        .zip(means)
        .zip(covs)
        .map(|((&w, m), c)| {
            let chol = to_matrix(c)
                .cholesky()
                .ok_or_else(|| Error::InvalidInput("covariance is not positive-definite".into()))?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Ok(Component {
                log_weight: w.ln(),
                mean: Vector3::from(*m),
                inv: chol.inverse(),
                log_norm: -0.5 * (3.0 * LN_2PI + log_det),
            })
        })
        .collect()
}

/// `log(w_g) + log N(v | mu_g, Sigma_g)` for every component.
fn joint_log(components: &[Component], v: &[f64; 3], out: &mut [f64]) {
    let x = Vector3::from(*v);
    for (o, c) in out.iter_mut().zip(components) {
        let d = x - c.mean;
        *o = c.log_weight + c.log_norm - 0.5 * d.dot(&(c.inv * d));
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn data_covariance(points: &[[f64; 3]]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov / n
}

/// EM for a full-covariance mixture. Means start at k-means++ seeds, all
/// covariances at the pooled data covariance; each covariance gets
/// `COVARIANCE_REG` added to its diagonal. Stops when the mean
/// log-likelihood moves by less than `tol`.
pub fn fit_gmm(points: &[[f64; 3]], center_id: u8, opts: &GmmOptions) -> Result<ClusterModel> {
    let k = opts.n_components;
    if k == 0 {
        return invalid("n_components must be positive");
    }
    if points.len() < k {
        return Err(Error::NotEnoughData(format!(
            "{} vectors for {k} mixture components",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("non-finite vector");
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut means = kmeans_pp_init(points, k, &mut rng);
    let reg = Matrix3::identity() * COVARIANCE_REG;
    let init_cov = from_matrix(&(data_covariance(points) + reg));
    let mut covs = vec![init_cov; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![0.0; n * k];
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        // E step
        let comps = prepare(&weights, &means, &covs)?;
        let mut ll = 0.0;
        for (p, r) in points.iter().zip(resp.chunks_mut(k)) {
            joint_log(&comps, p, r);
            let lse = log_sum_exp(r);
            ll += lse;
            r.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let ll = ll / n as f64;
        let done = history.last().is_some_and(|&prev: &f64| (ll - prev).abs() < opts.tol);
        history.push(ll);
        if done {
            converged = true;
            break;
        }
        // M step
        for g in 0..k {
            let nk: f64 = resp.iter().skip(g).step_by(k).sum();
            if nk < 1e-12 {
                weights[g] = 0.0;
                continue;
            }
            let mut mu = Vector3::zeros();
            for (p, r) in points.iter().zip(resp.chunks(k)) {
                mu += Vector3::from(*p) * r[g];
            }
            mu /= nk;
            let mut cov = Matrix3::zeros();
            for (p, r) in points.iter().zip(resp.chunks(k)) {
                let d = Vector3::from(*p) - mu;
                cov += d * d.transpose() * r[g];
            }
            cov = cov / nk + reg;
            cov = (cov + cov.transpose()) * 0.5;
            weights[g] = nk / n as f64;
            means[g] = [mu[0], mu[1], mu[2]];
            covs[g] = from_matrix(&cov);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    if !converged {
        log::warn!(
            "center {center_id}: EM stopped at {} iterations without converging",
            opts.max_iter
        );
    }
    Ok(ClusterModel {
        center_id,
        n_components: k,
        weights,
        means,
        covariances: covs,
        pi_l: vec![0.0; k],
        log_likelihood: history,
        converged,
    })
}

impl ClusterModel {
    pub fn validate(&self) -> Result<()> {
        let k = self.n_components;
        if self.weights.len() != k
            || self.means.len() != k
            || self.covariances.len() != k
            || self.pi_l.len() != k
        {
            return invalid("cluster model arrays disagree with n_components");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("mixture weights sum to {total}"));
        }
        if self.pi_l.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("pi_l outside [0, 1]");
        }
        prepare(&self.weights, &self.means, &self.covariances).map(|_| ())
    }

    /// Posterior component probabilities, computed in log space.
    pub fn responsibilities(&self, v: &[f64; 3]) -> Result<Vec<f64>> {
        let mut r = self.joint_log_checked(v)?;
        let lse = log_sum_exp(&r);
        r.iter_mut().for_each(|x| *x = (*x - lse).exp());
        Ok(r)
    }

    fn joint_log_checked(&self, v: &[f64; 3]) -> Result<Vec<f64>> {
        if v.iter().any(|x| !x.is_finite()) {
            return invalid(format!("non-finite vector {v:?}"));
        }
        let comps = prepare(&self.weights, &self.means, &self.covariances)?;
        let mut r = vec![0.0; self.n_components];
        joint_log(&comps, v, &mut r);
        Ok(r)
    }

    /// Most probable component; exact ties go to the lowest id.
    pub fn assign(&self, v: &[f64; 3]) -> Result<usize> {
        let r = self.joint_log_checked(v)?;
        let mut best = 0;
        for (g, &x) in r.iter().enumerate() {
            if x > r[best] {
                best = g;
            }
        }
        Ok(best)
    }

    pub fn assign_all(&self, vs: &[[f64; 3]]) -> Result<Vec<usize>> {
        vs.iter().map(|v| self.assign(v)).collect()
    }
}
