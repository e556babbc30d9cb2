//! Incremental Gaussian mixture regression.
//!
//! The model sees each point once. A point that is unlikely under every
//! existing component (its density falls below `tau_nov` times the
//! component's peak density) seeds a new component centred on it; otherwise
//! every component absorbs the point in proportion to its posterior
//! responsibility. Regression conditions the joint mixture on the leading
//! (input) dimensions to predict the last (target) dimension.
//!
//! For detection the joint vector is `(sin 2πφ, cos 2πφ, value)` with φ the
//! fraction of the UTC day elapsed at the start of the bin, so the daily
//! cycle is a closed curve the mixture can tile.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::linalg;
use crate::time::{Timestamp, DAY_MS};

pub const DEFAULT_TAU_NOV: f64 = 0.01;
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IgmnError {
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("expected a {expected}-dimensional vector, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("component covariance is not positive definite")]
    SingularCovariance,
    #[error("model has no components")]
    EmptyModel,
    #[error("invalid model parameters: {0}")]
    InvalidParams(&'static str),
    #[error("corrupt model checkpoint: {0}")]
    CorruptCheckpoint(#[from] DecodeError),
}

/// Hyper-parameters fixed for the lifetime of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct IgmnParams {
    tau_nov: f64,
    sigma_ini: Vec<f64>,
    var_floor: Vec<f64>,
}

impl IgmnParams {
    /// Parameters with the default novelty threshold and a variance floor of
    /// `(1e-3 · sigma_ini)²` per dimension.
    pub fn new(sigma_ini: Vec<f64>) -> Result<Self, IgmnError> {
        let var_floor = sigma_ini.iter().map(|s| (1e-3 * s) * (1e-3 * s)).collect();
        Self::with_floor(sigma_ini, var_floor, DEFAULT_TAU_NOV)
    }

    pub fn with_floor(sigma_ini: Vec<f64>, var_floor: Vec<f64>, tau_nov: f64) -> Result<Self, IgmnError> {
        if sigma_ini.is_empty() {
            return Err(IgmnError::InvalidParams("dimension must be at least 1"));
        }
        if sigma_ini.len() != var_floor.len() {
            return Err(IgmnError::InvalidParams("sigma_ini and var_floor lengths differ"));
        }
        if !(tau_nov > 0.0 && tau_nov < 1.0) {
            return Err(IgmnError::InvalidParams("tau_nov must lie in (0, 1)"));
        }
        if sigma_ini.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(IgmnError::InvalidParams("sigma_ini must be finite and positive"));
        }
        if var_floor.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(IgmnError::InvalidParams("var_floor must be finite and positive"));
        }
        Ok(IgmnParams { tau_nov, sigma_ini, var_floor })
    }

    /// Parameters for the seasonal `(sin, cos, value)` encoding: the time
    /// dimensions span 2, the value dimension spans `value_range`, and each
    /// initial deviation is a tenth of its range.
    pub fn seasonal(value_range: f64) -> Result<Self, IgmnError> {
        if !(value_range.is_finite() && value_range > 0.0) {
            return Err(IgmnError::InvalidParams("value range must be finite and positive"));
        }
        Self::new(vec![0.2, 0.2, 0.1 * value_range])
    }

    pub fn with_tau(mut self, tau_nov: f64) -> Result<Self, IgmnError> {
        if !(tau_nov > 0.0 && tau_nov < 1.0) {
            return Err(IgmnError::InvalidParams("tau_nov must lie in (0, 1)"));
        }
        self.tau_nov = tau_nov;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.sigma_ini.len()
    }

    pub fn tau_nov(&self) -> f64 {
        self.tau_nov
    }

    pub fn sigma_ini(&self) -> &[f64] {
        &self.sigma_ini
    }

    pub fn var_floor(&self) -> &[f64] {
        &self.var_floor
    }

    /// Squared Mahalanobis radius beyond which a point is novel for a
    /// component: `-2 ln tau_nov`.
    pub fn novelty_radius_sq(&self) -> f64 {
        -2.0 * linalg::ln(self.tau_nov)
    }
}

/// One Gaussian of the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    sp: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl Component {
    /// A component with the given parameters; `cov` is row-major.
    pub fn new(sp: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self, IgmnError> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(IgmnError::DimensionMismatch { expected: d * d, found: cov.len() });
        }
        if !(sp > 0.0 && sp.is_finite()) {
            return Err(IgmnError::InvalidParams("posterior accumulator must be positive"));
        }
        if linalg::cholesky(&cov, d).is_none() {
            return Err(IgmnError::SingularCovariance);
        }
        Ok(Component { sp, mean, cov })
    }

    pub fn sp(&self) -> f64 {
        self.sp
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn factor(&self) -> Result<Vec<f64>, IgmnError> {
        linalg::cholesky(&self.cov, self.dim()).ok_or(IgmnError::SingularCovariance)
    }

    /// Density at the mean, `((2π)^(D/2) |C|^(1/2))⁻¹`.
    pub fn peak_density(&self) -> Result<f64, IgmnError> {
        let d = self.dim();
        let l = self.factor()?;
        Ok(linalg::exp(-0.5 * (d as f64 * linalg::LN_2PI + linalg::log_det(&l, d))))
    }
}

/// Multivariate normal density N(x; mean, cov) of one component.
pub fn component_density(c: &Component, x: &[f64]) -> Result<f64, IgmnError> {
    check_dim(c.dim(), x)?;
    let l = c.factor()?;
    Ok(linalg::exp(linalg::log_normal_pdf(&l, c.dim(), x, &c.mean)))
}

/// Conditional expectation of the target dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        linalg::sqrt(self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnOutcome {
    Created,
    Updated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgmnModel {
    params: IgmnParams,
    components: Vec<Component>,
    points_seen: u64,
}

impl IgmnModel {
    pub fn new(params: IgmnParams) -> Self {
        IgmnModel { params, components: Vec::new(), points_seen: 0 }
    }

    pub fn params(&self) -> &IgmnParams {
        &self.params
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn points_seen(&self) -> u64 {
        self.points_seen
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Mixing weights `sp_j / Σ sp_k`.
    pub fn priors(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.sp).sum();
        self.components.iter().map(|c| c.sp / total).collect()
    }

    /// Presents one point to the model.
    pub fn learn(&mut self, x: &[f64]) -> Result<LearnOutcome, IgmnError> {
        let d = self.dim();
        check_dim(d, x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(IgmnError::NonFiniteInput);
        }

        let radius_sq = self.params.novelty_radius_sq();
        let total_sp: f64 = self.components.iter().map(|c| c.sp).sum();
        let mut novel = true;
        let mut log_post = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let l = c.factor()?;
            let e: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
            let d2 = linalg::mahalanobis_sq(&l, d, &e);
            // density < tau · peak  ⇔  d² > -2 ln tau
            if d2 <= radius_sq {
                novel = false;
            }
            let log_density = -0.5 * (d as f64 * linalg::LN_2PI + linalg::log_det(&l, d) + d2);
            log_post.push(log_density + linalg::ln(c.sp / total_sp));
        }

        self.points_seen += 1;
        if novel {
            self.create(x);
            return Ok(LearnOutcome::Created);
        }

        let norm = linalg::log_sum_exp(&log_post);
        for (c, lp) in self.components.iter_mut().zip(log_post) {
            let post = linalg::exp(lp - norm);
            update_component(c, x, post, &self.params.var_floor);
        }
        Ok(LearnOutcome::Updated)
    }

    fn create(&mut self, x: &[f64]) {
        let d = self.dim();
        let mut cov = vec![0.0; d * d];
        for (i, s) in self.params.sigma_ini.iter().enumerate() {
            cov[i * d + i] = s * s;
        }
        self.components.push(Component { sp: 1.0, mean: x.to_vec(), cov });
    }

    /// Expected target value given the input dimensions `z` (all but the
    /// last dimension of the joint vector).
    pub fn predict(&self, z: &[f64]) -> Result<Prediction, IgmnError> {
        if self.components.is_empty() {
            return Err(IgmnError::EmptyModel);
        }
        let d = self.dim();
        check_dim(d - 1, z)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(IgmnError::NonFiniteInput);
        }
        let t = d - 1;
        let inputs: Vec<usize> = (0..t).collect();
        let total_sp: f64 = self.components.iter().map(|c| c.sp).sum();

        let mut log_w = Vec::with_capacity(self.components.len());
        let mut cond = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let log_prior = linalg::ln(c.sp / total_sp);
            if t == 0 {
                log_w.push(log_prior);
                cond.push((c.mean[t], c.cov[t * d + t]));
                continue;
            }
            let c_ii = linalg::sub_block(&c.cov, d, &inputs, &inputs);
            let c_ti = linalg::sub_block(&c.cov, d, &[t], &inputs);
            let l_ii = linalg::cholesky(&c_ii, t).ok_or(IgmnError::SingularCovariance)?;
            let mu_i = &c.mean[..t];
            let dz: Vec<f64> = z.iter().zip(mu_i).map(|(a, b)| a - b).collect();
            let gain = linalg::chol_solve(&l_ii, t, &dz);
            let m = c.mean[t] + dot(&c_ti, &gain);
            let c_ti_inv = linalg::chol_solve(&l_ii, t, &c_ti);
            let v = (c.cov[t * d + t] - dot(&c_ti, &c_ti_inv)).max(0.0);
            log_w.push(log_prior + linalg::log_normal_pdf(&l_ii, t, z, mu_i));
            cond.push((m, v));
        }

        let norm = linalg::log_sum_exp(&log_w);
        let mut mean = 0.0;
        let mut second = 0.0;
        for (lw, (m, v)) in log_w.iter().zip(&cond) {
            let w = linalg::exp(lw - norm);
            mean += w * m;
            second += w * (v + m * m);
        }
        let floor = self.params.var_floor[t];
        let variance = (second - mean * mean).max(floor);
        Ok(Prediction { mean, variance })
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u8(CHECKPOINT_VERSION);
        enc.len(self.dim());
        enc.f64(self.params.tau_nov);
        enc.f64s(&self.params.sigma_ini);
        enc.f64s(&self.params.var_floor);
        enc.u64(self.points_seen);
        enc.len(self.components.len());
        for c in &self.components {
            enc.f64(c.sp);
            enc.f64s(&c.mean);
            enc.f64s(&c.cov);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, IgmnError> {
        let version = dec.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(DecodeError::Version { found: version, expected: CHECKPOINT_VERSION }.into());
        }
        let d = dec.len(0)?;
        let tau = dec.f64()?;
        let sigma_ini = dec.f64s()?;
        let var_floor = dec.f64s()?;
        if sigma_ini.len() != d {
            return Err(DecodeError::Invalid("model dimension").into());
        }
        let params = IgmnParams::with_floor(sigma_ini, var_floor, tau)
            .map_err(|_| DecodeError::Invalid("model parameters"))?;
        let points_seen = dec.u64()?;
        let n = dec.len(8)?;
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            let sp = dec.f64()?;
            let mean = dec.f64s()?;
            let cov = dec.f64s()?;
            if mean.len() != d || cov.len() != d * d || !(sp > 0.0) {
                return Err(DecodeError::Invalid("component").into());
            }
            components.push(Component { sp, mean, cov });
        }
        Ok(IgmnModel { params, components, points_seen })
    }

    /// Versioned binary checkpoint of every field.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IgmnError> {
        let mut dec = Decoder::new(bytes);
        let model = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(model)
    }
}

/// Posterior-weighted recursive update of one component.
///
/// With `ω = p(j|x) / sp_j` the mean moves by `ω e` and the covariance
/// follows the weighted sample-covariance recursion
/// `C ← (1-ω) C + ω (1-ω) e eᵀ`, `e = x - μ_old`. When every posterior is one
/// this reproduces the running arithmetic mean and population covariance
/// exactly, and it keeps C positive definite for any ω < 1.
fn update_component(c: &mut Component, x: &[f64], post: f64, var_floor: &[f64]) {
    let d = c.dim();
    c.sp += post;
    let omega = post / c.sp;
    if omega > 0.0 {
        let e: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
        for (m, ei) in c.mean.iter_mut().zip(&e) {
            *m += omega * ei;
        }
        let keep = 1.0 - omega;
        let outer = omega * keep;
        for i in 0..d {
            for j in i..d {
                let v = keep * c.cov[i * d + j] + outer * e[i] * e[j];
                c.cov[i * d + j] = v;
                c.cov[j * d + i] = v;
            }
        }
    }
    for (i, floor) in var_floor.iter().enumerate() {
        if c.cov[i * d + i] < *floor {
            c.cov[i * d + i] = *floor;
        }
    }
    // Off-diagonal terms can outgrow floored diagonals; nudge the diagonal
    // until the factorisation succeeds again.
    let mut jitter = 1.0;
    while linalg::cholesky(&c.cov, d).is_none() {
        for (i, floor) in var_floor.iter().enumerate() {
            c.cov[i * d + i] += jitter * floor;
        }
        jitter *= 2.0;
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<(), IgmnError> {
    if x.len() != expected {
        return Err(IgmnError::DimensionMismatch { expected, found: x.len() });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(sin 2πφ, cos 2πφ)` for the UTC-day phase φ of `t`.
pub fn time_features(t: Timestamp) -> [f64; 2] {
    let phase = t.millis_into_day() as f64 / DAY_MS as f64;
    let angle = TAU * phase;
    [libm::sin(angle), libm::cos(angle)]
}

/// Joint vector `(sin 2πφ, cos 2πφ, value)` for a bin starting at `bin_start`.
pub fn encode_input(bin_start: Timestamp, value: f64) -> [f64; 3] {
    let [s, c] = time_features(bin_start);
    [s, c, value]
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOUR: i64 = 3_600_000;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_component(d: usize) -> Component {
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        Component::new(1.0, vec![0.0; d], cov).unwrap()
    }

    #[test]
    fn encoding_quarter_phases() {
        let day = Timestamp(10 * DAY_MS);
        let [s, c, v] = encode_input(day, 7.0);
        assert_eq!((s, c, v), (0.0, 1.0, 7.0));
        let [s, c, _] = encode_input(day.saturating_add_millis(6 * HOUR), 7.0);
        assert!(close(s, 1.0, 1e-15) && close(c, 0.0, 1e-15));
        let [s, c, _] = encode_input(day.saturating_add_millis(12 * HOUR), 7.0);
        assert!(close(s, 0.0, 1e-15) && close(c, -1.0, 1e-15));
    }

    #[test]
    fn standard_normal_density_values() {
        let c = unit_component(1);
        // (2π)^(-1/2) and (2π)^(-1/2) e^(-9/2)
        assert!(close(component_density(&c, &[0.0]).unwrap(), 0.398_942_280_4, 1e-10));
        assert!(close(component_density(&c, &[3.0]).unwrap(), 0.004_431_848_4, 1e-10));
        let c2 = unit_component(2);
        assert!(close(component_density(&c2, &[0.0, 0.0]).unwrap(), 0.159_154_943_1, 1e-10));
        assert!(close(c2.peak_density().unwrap(), 0.159_154_943_1, 1e-10));
    }

    #[test]
    fn singular_covariance_is_rejected() {
        assert_eq!(
            Component::new(1.0, vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap_err(),
            IgmnError::SingularCovariance
        );
    }

    #[test]
    fn first_point_seeds_a_component() {
        let mut m = IgmnModel::new(IgmnParams::seasonal(10.0).unwrap());
        let x = [0.3, -0.2, 4.5];
        assert_eq!(m.learn(&x).unwrap(), LearnOutcome::Created);
        assert_eq!(m.components().len(), 1);
        assert_eq!(m.components()[0].mean(), &x);
        assert_eq!(m.points_seen(), 1);
    }

    #[test]
    fn running_mean_with_unit_posterior() {
        let mut m = IgmnModel::new(IgmnParams::new(vec![10.0, 10.0]).unwrap());
        let pts = [[1.0, 2.0], [2.0, 0.5], [0.0, 1.0], [1.5, 1.5], [0.5, 3.0]];
        for p in &pts {
            m.learn(p).unwrap();
        }
        assert_eq!(m.components().len(), 1);
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!(close(m.components()[0].mean()[0], mx, 1e-12));
        assert!(close(m.components()[0].mean()[1], my, 1e-12));
        assert!(close(m.components()[0].sp(), n, 1e-12));
    }

    #[test]
    fn far_points_create_two_components() {
        let params = IgmnParams::new(vec![1.0]).unwrap();
        // radius² = -2 ln 0.01 ≈ 9.2103, so a gap of 3.1 σ is novel and 3.0 σ is not
        assert!(close(params.novelty_radius_sq(), 9.210_340_371_976_184, 1e-12));
        let mut m = IgmnModel::new(params.clone());
        m.learn(&[0.0]).unwrap();
        m.learn(&[3.1]).unwrap();
        assert_eq!(m.components().len(), 2);

        let mut m = IgmnModel::new(params);
        m.learn(&[0.0]).unwrap();
        m.learn(&[3.0]).unwrap();
        assert_eq!(m.components().len(), 1);
    }

    #[test]
    fn predict_on_empty_model_fails() {
        let m = IgmnModel::new(IgmnParams::seasonal(1.0).unwrap());
        assert_eq!(m.predict(&[0.0, 1.0]).unwrap_err(), IgmnError::EmptyModel);
    }

    #[test]
    fn diagonal_component_predicts_its_target_mean() {
        let mut m = IgmnModel::new(IgmnParams::new(vec![1.0, 1.0, 2.0]).unwrap());
        m.learn(&[0.1, 0.2, 5.0]).unwrap();
        for z in [[0.0, 0.0], [3.0, -4.0], [0.1, 0.2]] {
            let p = m.predict(&z).unwrap();
            assert!(close(p.mean, 5.0, 1e-12));
            assert!(close(p.variance, 4.0, 1e-12));
        }
    }

    #[test]
    fn constant_series_is_predicted() {
        let mut m = IgmnModel::new(IgmnParams::seasonal(100.0).unwrap());
        for i in 0..100 {
            let t = Timestamp(i * 600_000);
            m.learn(&encode_input(t, 100.0)).unwrap();
        }
        for i in 0..24 {
            let p = m.predict(&time_features(Timestamp(i * HOUR))).unwrap();
            assert!(close(p.mean, 100.0, 1e-9), "{p:?}");
        }
    }

    #[test]
    fn invalid_inputs() {
        let mut m = IgmnModel::new(IgmnParams::seasonal(1.0).unwrap());
        assert_eq!(m.learn(&[0.0, f64::NAN, 1.0]).unwrap_err(), IgmnError::NonFiniteInput);
        assert!(matches!(m.learn(&[0.0, 1.0]), Err(IgmnError::DimensionMismatch { .. })));
        assert!(IgmnParams::new(vec![]).is_err());
        assert!(IgmnParams::new(vec![1.0]).unwrap().with_tau(1.0).is_err());
        assert!(IgmnParams::seasonal(0.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let empty = IgmnModel::new(IgmnParams::seasonal(50.0).unwrap());
        assert_eq!(IgmnModel::from_bytes(&empty.to_bytes()).unwrap(), empty);

        let mut m = empty.clone();
        for i in 0..1000i64 {
            let v = 50.0 + 20.0 * ((i % 144) as f64 / 144.0) + (i % 7) as f64;
            m.learn(&encode_input(Timestamp(i * 600_000), v)).unwrap();
        }
        let restored = IgmnModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(restored, m);
        for i in 0..144 {
            let z = time_features(Timestamp(i * 600_000));
            let (a, b) = (m.predict(&z).unwrap(), restored.predict(&z).unwrap());
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        }
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let mut m = IgmnModel::new(IgmnParams::seasonal(50.0).unwrap());
        m.learn(&[0.0, 1.0, 3.0]).unwrap();
        let bytes = m.to_bytes();
        for cut in [0, 1, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                IgmnModel::from_bytes(&bytes[..cut]),
                Err(IgmnError::CorruptCheckpoint(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(matches!(IgmnModel::from_bytes(&bad), Err(IgmnError::CorruptCheckpoint(_))));
    }
}
