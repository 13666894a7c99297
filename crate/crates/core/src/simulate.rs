//! Seeded sample paths of a dynamic factor model.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`) seeded with the user seed,
//! with one independent stream per noise source: stream 0 drives the factor
//! noise `η_t`, stream 1 the idiosyncratic noise `ε_t`, stream 2 the
//! optional stationary initial state. Uniforms take the top 53 bits of each
//! 64-bit word; Gaussians use the Box–Muller transform, consuming two
//! uniforms per pair of variates. The output is therefore bit-reproducible
//! across platforms.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::acvf;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{validate, DfmModel};

pub const DEFAULT_BURN_IN: usize = 1000;

const STREAM_ETA: u64 = 0;
const STREAM_EPS: u64 = 1;
const STREAM_INIT: u64 = 2;

/// Standard normal variates from a ChaCha20 stream via Box–Muller.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianStream { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn vector(&mut self, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| self.sample())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulationOptions {
    /// Steps simulated and discarded before the first retained sample.
    pub burn_in: usize,
    /// Draw the initial factor state from its stationary law instead of
    /// starting at zero.
    pub stationary_init: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            burn_in: DEFAULT_BURN_IN,
            stationary_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    pub n: usize,
    /// `n × d`, one observation per row.
    pub x: Matrix,
    /// `n × r` latent factors.
    pub f: Matrix,
    pub seed: u64,
}

pub fn simulate(model: &DfmModel, n: usize, options: SimulationOptions, seed: u64) -> Result<SeriesSample> {
    validate(model).into_result()?;
    if n == 0 {
        return Err(Error::InvalidInput("series length must be at least 1".into()));
    }
    let (d, r, p) = (model.d, model.r, model.p);
    let eta_chol = linalg::chol(&model.sigma_eta)?;
    let eps_chol = linalg::chol(&model.sigma_eps)?;
    let mut eta = GaussianStream::new(seed, STREAM_ETA);
    let mut eps = GaussianStream::new(seed, STREAM_EPS);

    // history[k] = f_{t-1-k}
    let mut history: Vec<Vector> = vec![Vector::zeros(r); p];
    if options.stationary_init && p > 0 {
        history = stationary_state(model, seed)?;
    }

    let mut x = Matrix::zeros(n, d);
    let mut f = Matrix::zeros(n, r);
    for t in 0..options.burn_in + n {
        let mut ft = &eta_chol * eta.vector(r);
        for (phi, past) in model.phi.iter().zip(&history) {
            ft += phi * past;
        }
        if p > 0 {
            history.rotate_right(1);
            history[0] = ft.clone();
        }
        if t >= options.burn_in {
            let row = t - options.burn_in;
            let xt = &model.lambda * &ft + &eps_chol * eps.vector(d);
            x.row_mut(row).copy_from(&xt.transpose());
            f.row_mut(row).copy_from(&ft.transpose());
        }
    }
    Ok(SeriesSample { n, x, f, seed })
}

/// Draws `(f_{-1}, …, f_{-p})` from the stationary law of the stacked VAR
/// state, whose covariance is the block Toeplitz matrix of `Γ_F(0..p-1)`.
fn stationary_state(model: &DfmModel, seed: u64) -> Result<Vec<Vector>> {
    let (r, p) = (model.r, model.p);
    let gf = acvf::var_acvf(&model.phi, &model.sigma_eta, p)?;
    let mut cov = Matrix::zeros(r * p, r * p);
    for i in 0..p {
        for j in 0..p {
            // block (i, j) = E f_{t-i} f_{t-j}ᵀ
            let block = if j >= i {
                gf.gammas[j - i].clone()
            } else {
                gf.gammas[i - j].transpose()
            };
            cov.view_mut((i * r, j * r), (r, r)).copy_from(&block);
        }
    }
    let l = linalg::chol(&linalg::symmetrize(&cov))?;
    let mut init = GaussianStream::new(seed, STREAM_INIT);
    let state = l * init.vector(r * p);
    Ok((0..p).map(|k| state.rows(k * r, r).into_owned()).collect())
}

/// A random valid model: well-conditioned random loadings, VAR coefficients rescaled so
/// the companion spectral radius is uniform on `[0.2, 0.9]`, and random SPD
/// noise covariances.
pub fn random_dfm(d: usize, r: usize, p: usize, seed: u64) -> DfmModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut normal = GaussianStream::new(seed, 4);
    let mut gauss = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| normal.sample());
    // loadings with singular values in [0.5, 1.5] √d
    let left = gauss(d, r).qr().q();
    let right = gauss(r, r).qr().q();
    let sv = Vector::from_fn(r, |_, _| rng.random_range(0.5..1.5) * (d as f64).sqrt());
    let lambda = left * Matrix::from_diagonal(&sv) * right.transpose();
    let mut phi: Vec<Matrix> = (0..p).map(|_| gauss(r, r) / (r as f64).sqrt()).collect();
    if p > 0 {
        let radius = linalg::spectral_radius(&linalg::companion(&phi));
        let target: f64 = rng.random_range(0.2..0.9);
        let c = if radius > 0.0 { target / radius } else { 1.0 };
        for (i, m) in phi.iter_mut().enumerate() {
            *m *= c.powi(i as i32 + 1);
        }
    }
    let b = gauss(r, r);
    let sigma_eta = linalg::symmetrize(&(&b * b.transpose() / r as f64 + Matrix::identity(r, r) * 0.2));
    let e = gauss(d, d) * 0.3 / (d as f64).sqrt();
    let diag = Vector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
    let sigma_eps = linalg::symmetrize(&(&e * e.transpose() + Matrix::from_diagonal(&diag)));
    DfmModel::new(lambda, phi, sigma_eta, sigma_eps)
}

impl SeriesSample {
    /// Writes the `t,x_1,…,x_d[,f_1,…,f_r]` CSV layout, `t` starting at 1.
    /// Values use the shortest decimal form that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W, with_factors: bool) -> Result<()> {
        write_series_csv(writer, &self.x, with_factors.then_some(&self.f))
    }
}

pub fn write_series_csv<W: Write>(writer: W, x: &Matrix, f: Option<&Matrix>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=x.ncols()).map(|i| format!("x_{i}")));
    if let Some(f) = f {
        header.extend((1..=f.ncols()).map(|i| format!("f_{i}")));
    }
    w.write_record(&header)?;
    for t in 0..x.nrows() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(x.row(t).iter().map(|v| v.to_string()));
        if let Some(f) = f {
            rec.extend(f.row(t).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed series CSV: observations and, when present, factors.
#[derive(Debug, Clone)]
pub struct SeriesCsv {
    pub x: Matrix,
    pub f: Option<Matrix>,
}

pub fn read_series_csv<R: Read>(reader: R) -> Result<SeriesCsv> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut f_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h.starts_with("x_") {
            x_cols.push(i);
        } else if h.starts_with("f_") {
            f_cols.push(i);
        } else if h != "t" {
            return Err(Error::InvalidInput(format!("unexpected CSV column '{h}'")));
        }
    }
    if x_cols.is_empty() {
        return Err(Error::InvalidInput("CSV has no x_ columns".into()));
    }
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            let v: f64 = s
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad number '{s}' in CSV")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NotFinite)
            }
        };
        for &i in &x_cols {
            xs.push(parse(i)?);
        }
        for &i in &f_cols {
            fs.push(parse(i)?);
        }
        rows += 1;
    }
    let x = Matrix::from_row_slice(rows, x_cols.len(), &xs);
    let f = (!f_cols.is_empty()).then(|| Matrix::from_row_slice(rows, f_cols.len(), &fs));
    Ok(SeriesCsv { x, f })
}
