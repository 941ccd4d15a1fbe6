//! Two-scale Lorenz 96 system and trajectory generation.
//!
//! Fast variables are stored as a single ring of length `J·K`, index
//! `k·J + j`, which realises the boundary rule `y_{j+J,k} = y_{j,k+1}`.

use serde::{Deserialize, Serialize};

use crate::dataset::TrajectorySeries;
use crate::error::{QmdaError, Result};
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L96Config {
    /// Number of slow variables.
    pub k: usize,
    /// Fast variables per slow variable.
    pub j: usize,
    /// Timescale separation.
    pub eps: f64,
    pub forcing: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub dt_sample: f64,
    /// Internal Runge–Kutta step; rounded down so it divides `dt_sample`.
    pub dt_int: f64,
    pub spinup_time: f64,
}

impl Default for L96Config {
    fn default() -> Self {
        L96Config {
            k: 9,
            j: 8,
            eps: 1.0 / 128.0,
            forcing: 10.0,
            h_x: -0.8,
            h_y: 1.0,
            dt_sample: 0.05,
            dt_int: 0.05 / 200.0,
            spinup_time: 500.0,
        }
    }
}

impl L96Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QmdaError::InvalidParameter(m));
        if self.k < 4 {
            return bad(format!("K must be at least 4, got {}", self.k));
        }
        if self.j < 1 {
            return bad("J must be at least 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.dt_sample > 0.0) || !(self.dt_int > 0.0) {
            return bad("time steps must be positive".into());
        }
        if self.dt_int > self.dt_sample {
            return bad(format!(
                "dt_int {} exceeds dt_sample {}",
                self.dt_int, self.dt_sample
            ));
        }
        if !(self.spinup_time >= 0.0) {
            return bad("spinup_time must be non-negative".into());
        }
        if ![self.forcing, self.h_x, self.h_y].iter().all(|v| v.is_finite()) {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }

    /// Runge–Kutta substeps per sampling interval.
    pub fn substeps(&self) -> usize {
        ((self.dt_sample / self.dt_int) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L96State {
    pub x: Vec<f64>,
    /// Fast variables, `J` consecutive entries per slow index.
    pub y: Vec<f64>,
}

impl L96State {
    pub fn zeros(c: &L96Config) -> Self {
        L96State {
            x: vec![0.0; c.k],
            y: vec![0.0; c.k * c.j],
        }
    }

    /// `x = (v, 0, …, 0)` and every fast block `(v, 0, …, 0)`.
    pub fn leading_impulse(c: &L96Config, v: f64) -> Self {
        let mut s = L96State::zeros(c);
        s.x[0] = v;
        for k in 0..c.k {
            s.y[k * c.j] = v;
        }
        s
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    fn from_flat(flat: &[f64], k: usize) -> Self {
        L96State {
            x: flat[..k].to_vec(),
            y: flat[k..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Time derivative of the state.
pub fn vector_field(s: &L96State, c: &L96Config) -> L96State {
    let flat = s.to_flat();
    let mut out = vec![0.0; flat.len()];
    field_flat(&flat, &mut out, c);
    L96State::from_flat(&out, c.k)
}

fn field_flat(state: &[f64], out: &mut [f64], c: &L96Config) {
    let (kk, jj) = (c.k, c.j);
    let (x, y) = state.split_at(kk);
    let (dx, dy) = out.split_at_mut(kk);
    let ny = kk * jj;
    let coupling = c.h_x / jj as f64;
    for k in 0..kk {
        let xm1 = x[(k + kk - 1) % kk];
        let xm2 = x[(k + kk - 2) % kk];
        let xp1 = x[(k + 1) % kk];
        let fast_sum: f64 = y[k * jj..(k + 1) * jj].iter().sum();
        dx[k] = -xm1 * (xm2 - xp1) - x[k] + c.forcing + coupling * fast_sum;
    }
    let inv_eps = 1.0 / c.eps;
    for i in 0..ny {
        let yp1 = y[(i + 1) % ny];
        let yp2 = y[(i + 2) % ny];
        let ym1 = y[(i + ny - 1) % ny];
        let xk = x[i / jj];
        dy[i] = inv_eps * (-yp1 * (yp2 - ym1) - y[i] + c.h_y * xk);
    }
}

/// Classical fourth-order Runge–Kutta on a flat state, `substeps` steps of
/// size `dt / substeps` between consecutive samples. Returns `samples + 1`
/// states starting with `initial`.
pub fn rk4_trajectory(
    initial: &[f64],
    field: impl Fn(&[f64], &mut [f64]),
    dt: f64,
    substeps: usize,
    samples: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = initial.len();
    let h = dt / substeps as f64;
    let mut x = initial.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut out = Vec::with_capacity(samples + 1);
    out.push(x.clone());
    for s in 0..samples {
        for _ in 0..substeps {
            field(&x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            field(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            field(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            field(&tmp, &mut k4);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QmdaError::BlowUp {
                time: (s + 1) as f64 * dt,
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    let steps = (duration / dt).round();
    if duration < 0.0 || (steps * dt - duration).abs() > 1e-9 * dt.max(duration) {
        return Err(QmdaError::InvalidParameter(format!(
            "duration {duration} is not a multiple of the sampling interval {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Trajectory sampled every `dt_sample` over `[0, duration]`.
pub fn integrate(s0: &L96State, c: &L96Config, duration: f64) -> Result<Vec<L96State>> {
    c.validate()?;
    let samples = sample_count(duration, c.dt_sample)?;
    let traj = rk4_trajectory(
        &s0.to_flat(),
        |x, out| field_flat(x, out, c),
        c.dt_sample,
        c.substeps(),
        samples,
    )?;
    Ok(traj.iter().map(|v| L96State::from_flat(v, c.k)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Starts from `(1, 0, …, 0)`.
    Train,
    /// Starts from `(1.2, 0, …, 0)`.
    Test,
}

impl Variant {
    pub fn initial_value(self) -> f64 {
        match self {
            Variant::Train => 1.0,
            Variant::Test => 1.2,
        }
    }
}

/// Spins the system up for `spinup_time`, then records `samples` states.
/// Observations are the slow variables; the forecast observable is `x_1`.
pub fn generate_dataset(c: &L96Config, variant: Variant, samples: usize) -> Result<TrajectorySeries> {
    c.validate()?;
    if samples == 0 {
        return Err(QmdaError::InvalidParameter("sample count must be positive".into()));
    }
    // spinup is rounded to whole sampling intervals
    let spin = (c.spinup_time / c.dt_sample).round() as usize;
    let s0 = L96State::leading_impulse(c, variant.initial_value());
    let field = |x: &[f64], out: &mut [f64]| field_flat(x, out, c);
    let start = if spin > 0 {
        rk4_trajectory(&s0.to_flat(), field, c.dt_sample, c.substeps(), spin)?
            .pop()
            .expect("trajectory is non-empty")
    } else {
        s0.to_flat()
    };
    let traj = rk4_trajectory(&start, field, c.dt_sample, c.substeps(), samples - 1)?;
    let mut y = Vec::with_capacity(samples * c.k);
    let mut f = Vec::with_capacity(samples);
    for state in &traj {
        y.extend_from_slice(&state[..c.k]);
        f.push(state[0]);
    }
    TrajectorySeries::new(c.dt_sample, Mat::from_vec(samples, c.k, y)?, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_config() -> L96Config {
        L96Config::default()
    }

    fn test_state(c: &L96Config) -> L96State {
        // deterministic, non-symmetric state
        let x = (0..c.k).map(|k| ((k as f64) * 0.7 + 0.3).sin() * 4.0 + 1.0).collect();
        let y = (0..c.k * c.j)
            .map(|i| ((i as f64) * 1.3 - 0.2).cos() * 0.5)
            .collect();
        L96State { x, y }
    }

    #[test]
    fn zero_state_gives_forcing() {
        let c = reference_config();
        let d = vector_field(&L96State::zeros(&c), &c);
        assert!(d.x.iter().all(|v| *v == c.forcing));
        assert!(d.y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_fixed_point() {
        let c = L96Config {
            h_x: 0.0,
            h_y: 0.0,
            ..reference_config()
        };
        let mut s = L96State::zeros(&c);
        s.x.iter_mut().for_each(|v| *v = c.forcing);
        let d = vector_field(&s, &c);
        assert!(d.x.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn matches_term_by_term_evaluation() {
        let c = reference_config();
        let s = test_state(&c);
        let d = vector_field(&s, &c);
        let (kk, jj) = (c.k as i64, c.j as i64);
        // independent oracle: index everything through (j, k) with the
        // three periodicity identities applied explicitly
        let xat = |k: i64| s.x[k.rem_euclid(kk) as usize];
        let yat = |j: i64, k: i64| {
            let mut j = j;
            let mut k = k;
            while j >= jj {
                j -= jj;
                k += 1;
            }
            while j < 0 {
                j += jj;
                k -= 1;
            }
            s.y[(k.rem_euclid(kk) * jj + j) as usize]
        };
        for k in 0..kk {
            let mut sum = 0.0;
            for j in 0..jj {
                sum += yat(j, k);
            }
            let expect = -xat(k - 1) * (xat(k - 2) - xat(k + 1)) - xat(k) + c.forcing
                + c.h_x / c.j as f64 * sum;
            assert!((d.x[k as usize] - expect).abs() < 1e-12);
            for j in 0..jj {
                let expect = (1.0 / c.eps)
                    * (-yat(j + 1, k) * (yat(j + 2, k) - yat(j - 1, k)) - yat(j, k)
                        + c.h_y * xat(k));
                let got = d.y[(k * jj + j) as usize];
                assert!((got - expect).abs() < 1e-9 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rotation_commutes_with_field() {
        let c = reference_config();
        let s = test_state(&c);
        let rotate = |st: &L96State| L96State {
            x: (0..c.k).map(|k| st.x[(k + 1) % c.k]).collect(),
            y: (0..c.k * c.j).map(|i| st.y[(i + c.j) % (c.k * c.j)]).collect(),
        };
        let a = rotate(&vector_field(&s, &c));
        let b = vector_field(&rotate(&s), &c);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_duration_returns_initial_state() {
        let c = reference_config();
        let s = test_state(&c);
        let traj = integrate(&s, &c, 0.0).unwrap();
        assert_eq!(traj, vec![s]);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let dt = 0.05;
        let traj = rk4_trajectory(&[1.0], |x, out| out[0] = -x[0], dt, 100, 1).unwrap();
        assert!((traj[1][0] - (-dt).exp()).abs() < 1e-10);
    }

    #[test]
    fn fourth_order_convergence() {
        let c = L96Config {
            spinup_time: 0.0,
            ..reference_config()
        };
        // leave the initial transient first
        let warm = integrate(&L96State::leading_impulse(&c, 1.0), &c, 5.0).unwrap();
        let start = warm.last().unwrap().clone();
        // a short window keeps chaotic error growth from masking the order
        let window = 0.005;
        let run = |substeps: usize| {
            let cc = L96Config {
                dt_sample: window,
                dt_int: window / substeps as f64,
                ..c.clone()
            };
            integrate(&start, &cc, window).unwrap().pop().unwrap()
        };
        let dist = |a: &L96State, b: &L96State| {
            a.x.iter()
                .chain(&a.y)
                .zip(b.x.iter().chain(&b.y))
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (s1, s2, s4) = (run(10), run(20), run(40));
        let rate = (dist(&s1, &s2) / dist(&s2, &s4)).log2();
        assert!(rate >= 3.5, "observed order {rate}");
    }

    #[test]
    fn spinup_free_bookkeeping() {
        let c = L96Config {
            spinup_time: 0.0,
            ..reference_config()
        };
        let s = generate_dataset(&c, Variant::Train, 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.y_at(0)[0], 1.0);
        assert!(s.y_at(0)[1..].iter().all(|v| *v == 0.0));
        let traj = integrate(&L96State::leading_impulse(&c, 1.0), &c, 2.0 * c.dt_sample).unwrap();
        assert_eq!(traj.len(), 3);
        for (n, st) in traj.iter().enumerate() {
            assert_eq!(s.y_at(n), st.x.as_slice());
            assert_eq!(s.f()[n], st.x[0]);
        }
    }

    #[test]
    fn rejects_small_k() {
        let c = L96Config {
            k: 2,
            ..reference_config()
        };
        assert!(matches!(c.validate(), Err(QmdaError::InvalidParameter(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let c = L96Config {
            dt_int: 0.05,
            spinup_time: 0.0,
            ..reference_config()
        };
        let s = test_state(&c);
        assert!(matches!(integrate(&s, &c, 5.0), Err(QmdaError::BlowUp { .. })));
    }

    #[test]
    fn short_run_stays_on_attractor() {
        let c = L96Config {
            spinup_time: 20.0,
            ..reference_config()
        };
        let s = generate_dataset(&c, Variant::Test, 200).unwrap();
        assert!(s.y().max_abs() < 30.0);
        assert_eq!(s.dim(), 9);
    }
}
