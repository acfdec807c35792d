//! Parametric problem families and datasets.
//!
//! A family fixes `Q, A, b` and the box `[lower, upper]`; an instance supplies
//! the cost vector `c`. Two objectives are supported:
//!
//! ```text
//! ConvexQp:      f_c(x) = xᵀQx + cᵀx
//! NonconvexSin:  f_c(x) = xᵀQx + cᵀsin(x)
//! ```
//!
//! subject to `h(x) = Ax − b = 0` and `lower ≤ x ≤ upper`. In generic form the
//! box is written `g(x) ≤ 0` with one row `lower_i − x_i` per finite lower bound
//! followed by one row `x_i − upper_i` per finite upper bound.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{archive_hash, Decoder, Encoder};
use crate::error::{check_dim, DpxError, Result};

/// Smallest eigenvalue shift added to generated `Q`.
pub const Q_SHIFT: f64 = 0.1;
/// Attempts at drawing a full-row-rank `A` before giving up.
const RANK_RETRIES: usize = 16;
const DATASET_MAGIC: &[u8] = b"DPX1";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ConvexQp,
    NonconvexSin,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::ConvexQp => 0,
            Mode::NonconvexSin => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Mode::ConvexQp),
            1 => Ok(Mode::NonconvexSin),
            t => Err(DpxError::Format(format!("unknown mode tag {t}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ConvexQp => "convex-qp",
            Mode::NonconvexSin => "nonconvex-sin",
        })
    }
}

impl FromStr for Mode {
    type Err = DpxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex-qp" | "qp" | "convex" => Ok(Mode::ConvexQp),
            "nonconvex-sin" | "sin" | "nonconvex" => Ok(Mode::NonconvexSin),
            other => Err(DpxError::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// Which side of the box an inequality row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    /// `lower_i − x_i ≤ 0`
    Lower,
    /// `x_i − upper_i ≤ 0`
    Upper,
}

/// A parametric problem class: everything except the cost vector.
#[derive(Debug, Clone)]
pub struct ProblemFamily {
    q: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    mode: Mode,
    witness: Option<DVector<f64>>,
    ineq_rows: Vec<(usize, BoundSide)>,
    two_q_chol: Cholesky<f64, Dyn>,
}

impl ProblemFamily {
    /// Validates and assembles a family. `Q` must be symmetric positive definite
    /// and `A` must have full row rank.
    pub fn new(
        q: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        mode: Mode,
    ) -> Result<Self> {
        let n = q.nrows();
        let p = a.nrows();
        if n == 0 || p == 0 {
            return Err(DpxError::InvalidArgument("n and p must be positive".into()));
        }
        check_dim("Q columns", n, q.ncols())?;
        check_dim("A columns", n, a.ncols())?;
        check_dim("b", p, b.len())?;
        check_dim("lower", n, lower.len())?;
        check_dim("upper", n, upper.len())?;
        for i in 0..n {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * (1.0 + q[(i, j)].abs()) {
                    return Err(DpxError::InvalidArgument(format!(
                        "Q is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(DpxError::InvalidArgument(format!("crossed bounds at {i}")));
            }
            if lower[i] == f64::INFINITY || upper[i] == f64::NEG_INFINITY {
                return Err(DpxError::InvalidArgument(format!("empty box at {i}")));
            }
        }
        if !full_row_rank(&a) {
            return Err(DpxError::InvalidArgument("A is row-rank deficient".into()));
        }
        let two_q_chol = Cholesky::new(&q * 2.0)
            .ok_or_else(|| DpxError::InvalidArgument("Q is not positive definite".into()))?;

        let mut ineq_rows = Vec::new();
        for i in 0..n {
            if lower[i].is_finite() {
                ineq_rows.push((i, BoundSide::Lower));
            }
        }
        for i in 0..n {
            if upper[i].is_finite() {
                ineq_rows.push((i, BoundSide::Upper));
            }
        }

        Ok(Self {
            q,
            a,
            b,
            lower,
            upper,
            mode,
            witness: None,
            ineq_rows,
            two_q_chol,
        })
    }

    /// Builds the standard-form family `Ax = b, x ≥ 0`.
    pub fn nonnegative(
        q: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        mode: Mode,
    ) -> Result<Self> {
        let n = q.nrows();
        Self::new(
            q,
            a,
            b,
            DVector::zeros(n),
            DVector::from_element(n, f64::INFINITY),
            mode,
        )
    }

    /// Attaches a feasible point; rejected if it violates any constraint by more than `1e-12`.
    pub fn with_witness(mut self, x0: DVector<f64>) -> Result<Self> {
        check_dim("witness", self.n(), x0.len())?;
        let h = self.equality_residual(&x0)?;
        let g = self.inequality_residual(&x0)?;
        let worst = h.amax().max(g.iter().fold(0.0_f64, |m, &v| m.max(v)));
        if worst > 1e-12 {
            return Err(DpxError::InvalidArgument(format!(
                "witness violates constraints by {worst:e}"
            )));
        }
        self.witness = Some(x0);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// Number of inequality rows, i.e. the length of `λ`.
    pub fn m(&self) -> usize {
        self.ineq_rows.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn witness(&self) -> Option<&DVector<f64>> {
        self.witness.as_ref()
    }

    pub fn inequality_rows(&self) -> &[(usize, BoundSide)] {
        &self.ineq_rows
    }

    /// Cholesky factor of `2Q`, the Hessian of the quadratic term.
    pub fn hessian_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.two_q_chol
    }

    pub fn has_upper_bounds(&self) -> bool {
        self.upper.iter().any(|u| u.is_finite())
    }

    fn check_c_x(&self, c: &DVector<f64>, x: &DVector<f64>) -> Result<()> {
        check_dim("c", self.n(), c.len())?;
        check_dim("x", self.n(), x.len())
    }

    pub fn objective(&self, c: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
        self.check_c_x(c, x)?;
        Ok(self.objective_unchecked(c, x))
    }

    pub fn objective_grad(&self, c: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_c_x(c, x)?;
        Ok(self.objective_grad_unchecked(c, x))
    }

    /// `h(x) = Ax − b`.
    pub fn equality_residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("x", self.n(), x.len())?;
        Ok(self.equality_residual_unchecked(x))
    }

    /// `g(x)`, one row per finite bound.
    pub fn inequality_residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("x", self.n(), x.len())?;
        Ok(DVector::from_iterator(
            self.m(),
            self.ineq_rows.iter().map(|&(i, side)| match side {
                BoundSide::Lower => self.lower[i] - x[i],
                BoundSide::Upper => x[i] - self.upper[i],
            }),
        ))
    }

    pub(crate) fn objective_unchecked(&self, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let quad = x.dot(&(&self.q * x));
        match self.mode {
            Mode::ConvexQp => quad + c.dot(x),
            Mode::NonconvexSin => quad + c.dot(&x.map(f64::sin)),
        }
    }

    pub(crate) fn objective_grad_unchecked(&self, c: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.q * x * 2.0;
        match self.mode {
            Mode::ConvexQp => g += c,
            Mode::NonconvexSin => {
                for i in 0..g.len() {
                    g[i] += c[i] * x[i].cos();
                }
            }
        }
        g
    }

    pub(crate) fn equality_residual_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    /// `Gᵀλ`, the gradient of `λᵀg(x)` with respect to `x`.
    pub(crate) fn inequality_jacobian_t(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (k, &(i, side)) in self.ineq_rows.iter().enumerate() {
            match side {
                BoundSide::Lower => out[i] -= lambda[k],
                BoundSide::Upper => out[i] += lambda[k],
            }
        }
        out
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.mode.tag());
        enc.usize(self.n());
        enc.usize(self.p());
        enc.matrix(&self.q);
        enc.matrix(&self.a);
        enc.vector(&self.b);
        enc.vector(&self.lower);
        enc.vector(&self.upper);
        match &self.witness {
            Some(w) => {
                enc.u8(1);
                enc.vector(w);
            }
            None => enc.u8(0),
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let mode = Mode::from_tag(dec.u8()?)?;
        let n = dec.bounded(1 << 16, "n")?;
        let p = dec.bounded(1 << 16, "p")?;
        let q = dec.matrix(n, n)?;
        let a = dec.matrix(p, n)?;
        let b = dec.vector(p)?;
        let lower = dec.vector(n)?;
        let upper = dec.vector(n)?;
        let fam = Self::new(q, a, b, lower, upper, mode)?;
        match dec.u8()? {
            0 => Ok(fam),
            1 => {
                let w = dec.vector(n)?;
                fam.with_witness(w)
            }
            t => Err(DpxError::Format(format!("bad witness flag {t}"))),
        }
    }
}

impl PartialEq for ProblemFamily {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.q == other.q
            && self.a == other.a
            && self.b == other.b
            && self.lower == other.lower
            && self.upper == other.upper
            && self.witness == other.witness
    }
}

fn full_row_rank(a: &DMatrix<f64>) -> bool {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > 1e-10 * max * a.nrows().max(a.ncols()) as f64
}

/// Draws a random family with `lower = 0, upper = +∞`.
///
/// `Q = MᵀM/n + 0.1·I` with `M ~ U[0,1]`, `A ~ U[−1,1]` (redrawn until full row
/// rank) and `b = A x₀` for a witness `x₀ ~ U[0,1]`, so every family is feasible.
pub fn generate_family(seed: u64, n: usize, p: usize, mode: Mode) -> Result<ProblemFamily> {
    if n == 0 || p == 0 || p >= n {
        return Err(DpxError::InvalidArgument(format!(
            "need n ≥ 1, p ≥ 1, p < n (got n={n}, p={p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
    let mut q = m.transpose() * &m / n as f64;
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (q[(i, j)] + q[(j, i)]);
            q[(i, j)] = s;
            q[(j, i)] = s;
        }
        q[(i, i)] += Q_SHIFT;
    }

    let mut a = None;
    for _ in 0..RANK_RETRIES {
        let cand = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        if full_row_rank(&cand) {
            a = Some(cand);
            break;
        }
    }
    let a = a.ok_or_else(|| {
        DpxError::Generation(format!("no full-rank A after {RANK_RETRIES} draws"))
    })?;

    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
    let b = &a * &x0;
    ProblemFamily::nonnegative(q, a, b, mode)?.with_witness(x0)
}

/// One parameter vector drawn from the instance distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub c: DVector<f64>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub family: ProblemFamily,
    pub train: Vec<ProblemInstance>,
    pub test: Vec<ProblemInstance>,
    pub seed: u64,
    pub split: f64,
    pub low: f64,
    pub high: f64,
}

/// Draws `count` cost vectors with i.i.d. `U[low, high]` components. The first
/// `round(count·split)` go to the training partition. Indices are global:
/// `0..n_train` for train and `n_train..count` for test.
pub fn generate_dataset(
    family: ProblemFamily,
    count: usize,
    low: f64,
    high: f64,
    seed: u64,
    split: f64,
) -> Result<Dataset> {
    if count < 2 {
        return Err(DpxError::InvalidArgument("count must be at least 2".into()));
    }
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(DpxError::InvalidArgument(format!("bad interval [{low}, {high}]")));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(DpxError::InvalidArgument(format!("split {split} not in (0,1)")));
    }
    let n_train = ((count as f64) * split).round() as usize;
    if n_train == 0 || n_train == count {
        return Err(DpxError::InvalidArgument(format!(
            "split {split} leaves an empty partition for count {count}"
        )));
    }
    let n = family.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<ProblemInstance> = (0..count)
        .map(|index| {
            let c = DVector::from_fn(n, |_, _| {
                // gen_range(low..high) can round up to `high` for tiny intervals
                rng.gen_range(low..high).clamp(low, high)
            });
            ProblemInstance { c, index }
        })
        .collect();
    let test = all.split_off(n_train);
    Ok(Dataset {
        family,
        train: all,
        test,
        seed,
        split,
        low,
        high,
    })
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(DATASET_MAGIC);
        enc.u32(DATASET_VERSION);
        self.family.encode(&mut enc);
        enc.u64(self.seed);
        enc.f64(self.split);
        enc.f64(self.low);
        enc.f64(self.high);
        for part in [&self.train, &self.test] {
            enc.usize(part.len());
            for inst in part {
                enc.usize(inst.index);
                enc.vector(&inst.c);
            }
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, DATASET_MAGIC)?;
        let version = dec.u32()?;
        if version != DATASET_VERSION {
            return Err(DpxError::Format(format!("unsupported dataset version {version}")));
        }
        let family = ProblemFamily::decode(&mut dec)?;
        let seed = dec.u64()?;
        let split = dec.f64()?;
        let low = dec.f64()?;
        let high = dec.f64()?;
        let n = family.n();
        let mut parts = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = dec.bounded(1 << 28, "partition size")?;
            let mut part = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                let index = dec.usize()?;
                let c = dec.vector(n)?;
                part.push(ProblemInstance { c, index });
            }
            parts.push(part);
        }
        dec.finish()?;
        let test = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Ok(Self {
            family,
            train,
            test,
            seed,
            split,
            low,
            high,
        })
    }

    /// Hex SHA-256 identifying the serialized dataset.
    pub fn hash(&self) -> String {
        archive_hash(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes)?;
        Ok(archive_hash(&bytes))
    }

    /// Loads a dataset and returns it with its hash.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        let ds = Self::from_bytes(&bytes)?;
        Ok((ds, archive_hash(&bytes)))
    }

    /// Debug export: one row per instance, `partition,index,c_0,...`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["partition".to_string(), "index".to_string()];
        header.extend((0..self.family.n()).map(|i| format!("c_{i}")));
        w.write_record(&header)?;
        for (name, part) in [("train", &self.train), ("test", &self.test)] {
            for inst in part {
                let mut row = vec![name.to_string(), inst.index.to_string()];
                row.extend(inst.c.iter().map(|v| format!("{v:e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Small hand-solvable families used by self-checks.
pub mod fixtures {
    use super::*;

    /// `Q = I₂, A = [1 1], b = 1, x ≥ 0`; optimum at `c = 0` is `(0.5, 0.5)`.
    pub fn two_var(mode: Mode) -> ProblemFamily {
        ProblemFamily::nonnegative(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            mode,
        )
        .and_then(|f| f.with_witness(DVector::from_vec(vec![0.5, 0.5])))
        .expect("fixture data is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::two_var;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn paper_scale_family_dimensions() {
        let fam = generate_family(0, 50, 20, Mode::ConvexQp).unwrap();
        assert_eq!(fam.n(), 50);
        assert_eq!(fam.p(), 20);
        assert_eq!(fam.m(), 50);
        assert!(!fam.has_upper_bounds());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_family(7, 12, 5, Mode::NonconvexSin).unwrap();
        let b = generate_family(7, 12, 5, Mode::NonconvexSin).unwrap();
        assert_eq!(a, b);
        let da = generate_dataset(a.clone(), 30, -20.0, 20.0, 3, 0.8).unwrap();
        let db = generate_dataset(b, 30, -20.0, 20.0, 3, 0.8).unwrap();
        assert_eq!(da.to_bytes(), db.to_bytes());
        let other = generate_family(8, 12, 5, Mode::NonconvexSin).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn generated_family_invariants() {
        for seed in 0..5 {
            let fam = generate_family(seed, 30, 10, Mode::ConvexQp).unwrap();
            let eig = fam.q().clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() >= Q_SHIFT - 1e-12);
            let w = fam.witness().unwrap();
            assert!(fam.equality_residual(w).unwrap().amax() <= 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert_eq!(fam.a().clone().rank(1e-10), 10);
        }
    }

    #[test]
    fn generate_family_rejects_bad_dims() {
        assert!(generate_family(0, 5, 5, Mode::ConvexQp).is_err());
        assert!(generate_family(0, 5, 0, Mode::ConvexQp).is_err());
        assert!(generate_family(0, 0, 0, Mode::ConvexQp).is_err());
    }

    #[test]
    fn dataset_split_sizes() {
        let fam = generate_family(0, 4, 2, Mode::ConvexQp).unwrap();
        let ds = generate_dataset(fam.clone(), 10, -20.0, 20.0, 1, 0.8).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (8, 2));
        let idx: Vec<usize> = ds.train.iter().chain(&ds.test).map(|i| i.index).collect();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());

        let big = generate_dataset(fam, 10_000, -20.0, 20.0, 1, 0.8).unwrap();
        assert_eq!((big.train.len(), big.test.len()), (8000, 2000));
        for inst in big.train.iter().chain(&big.test) {
            assert!(inst.c.iter().all(|&x| (-20.0..=20.0).contains(&x)));
        }
    }

    #[test]
    fn narrow_interval_stays_in_bounds() {
        let fam = generate_family(0, 4, 2, Mode::ConvexQp).unwrap();
        let low = 3.0;
        let high = 3.0 + 1e-12;
        let ds = generate_dataset(fam, 50, low, high, 9, 0.8).unwrap();
        for inst in ds.train.iter().chain(&ds.test) {
            assert!(inst.c.iter().all(|&x| x >= low && x <= high));
        }
    }

    #[test]
    fn dataset_rejects_bad_args() {
        let fam = generate_family(0, 4, 2, Mode::ConvexQp).unwrap();
        assert!(generate_dataset(fam.clone(), 1, 0.0, 1.0, 0, 0.8).is_err());
        assert!(generate_dataset(fam.clone(), 10, 1.0, 1.0, 0, 0.8).is_err());
        assert!(generate_dataset(fam, 10, 0.0, 1.0, 0, 1.0).is_err());
    }

    #[test]
    fn objective_examples() {
        let qp = two_var(Mode::ConvexQp);
        let sin = two_var(Mode::NonconvexSin);
        assert_eq!(qp.objective(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(sin.objective(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        let f = sin.objective(&v(&[2.0, 0.0]), &v(&[PI / 2.0, 0.0])).unwrap();
        assert!((f - (PI * PI / 4.0 + 2.0)).abs() < 1e-14);
        assert!(qp.objective(&v(&[0.0]), &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn gradient_examples() {
        let qp = two_var(Mode::ConvexQp);
        let sin = two_var(Mode::NonconvexSin);
        assert_eq!(qp.objective_grad(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), v(&[2.0, 0.0]));
        assert_eq!(sin.objective_grad(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap(), v(&[1.0, 1.0]));
    }

    #[test]
    fn residual_examples() {
        let fam = two_var(Mode::ConvexQp);
        assert_eq!(fam.equality_residual(&v(&[0.5, 0.5])).unwrap(), v(&[0.0]));
        assert_eq!(fam.equality_residual(&v(&[0.0, 0.0])).unwrap(), v(&[-1.0]));
        assert_eq!(fam.inequality_residual(&v(&[1.0, 2.0])).unwrap(), v(&[-1.0, -2.0]));
        assert_eq!(fam.inequality_residual(&v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(fam.inequality_residual(&v(&[-1.0, 1.0])).unwrap(), v(&[1.0, -1.0]));
        assert!(fam.equality_residual(&v(&[1.0])).is_err());
    }

    #[test]
    fn general_box_rows() {
        let fam = ProblemFamily::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            v(&[1.0]),
            v(&[0.0, f64::NEG_INFINITY]),
            v(&[1.0, 2.0]),
            Mode::ConvexQp,
        )
        .unwrap();
        assert_eq!(fam.m(), 3);
        let g = fam.inequality_residual(&v(&[0.5, 3.0])).unwrap();
        assert_eq!(g, v(&[-0.5, -0.5, 1.0]));
        let gt = fam.inequality_jacobian_t(&v(&[1.0, 2.0, 3.0]));
        assert_eq!(gt, v(&[1.0, 3.0]));
    }

    #[test]
    fn constructor_validation() {
        let bad_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(ProblemFamily::nonnegative(bad_q, a.clone(), v(&[1.0]), Mode::ConvexQp).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(ProblemFamily::nonnegative(not_pd, a, v(&[1.0]), Mode::ConvexQp).is_err());
        let rank_def = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(ProblemFamily::nonnegative(DMatrix::identity(3, 3), rank_def, v(&[1.0, 2.0]), Mode::ConvexQp).is_err());
        let infeasible_witness = two_var(Mode::ConvexQp).with_witness(v(&[1.0, 1.0]));
        assert!(infeasible_witness.is_err());
    }

    #[test]
    fn archive_round_trip_and_corruption() {
        let fam = generate_family(2, 6, 3, Mode::NonconvexSin).unwrap();
        let ds = generate_dataset(fam, 20, -20.0, 20.0, 4, 0.8).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[..4], b"DPX1");
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);

        let mut corrupt = bytes.clone();
        corrupt[40] ^= 0xff;
        assert!(matches!(Dataset::from_bytes(&corrupt), Err(DpxError::Format(_))));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(Dataset::from_bytes(&bad_magic).is_err());
    }

    #[test]
    fn csv_export_has_one_row_per_instance() {
        let fam = generate_family(2, 3, 1, Mode::ConvexQp).unwrap();
        let ds = generate_dataset(fam, 10, -1.0, 1.0, 4, 0.8).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("partition,index,c_0,c_1,c_2"));
    }

    fn central_diff(fam: &ProblemFamily, c: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-5;
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (fam.objective(c, &xp).unwrap() - fam.objective(c, &xm).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences_on_100_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [Mode::ConvexQp, Mode::NonconvexSin] {
            let fam = generate_family(5, 8, 3, mode).unwrap();
            for _ in 0..100 {
                let c = DVector::from_fn(8, |_, _| rng.gen_range(-20.0..20.0));
                let x = DVector::from_fn(8, |_, _| rng.gen_range(-2.0..2.0));
                let g = fam.objective_grad(&c, &x).unwrap();
                let fd = central_diff(&fam, &c, &x);
                let rel = (&g - &fd).norm() / g.norm().max(fd.norm());
                assert!(rel <= 1e-6, "{mode}: rel err {rel:e}");
            }
        }
    }

    proptest! {
        #[test]
        fn mode_string_round_trip(convex in any::<bool>()) {
            let mode = if convex { Mode::ConvexQp } else { Mode::NonconvexSin };
            prop_assert_eq!(mode.to_string().parse::<Mode>().unwrap(), mode);
        }

        #[test]
        fn constructed_rhs_has_zero_residual(seed in 0u64..200) {
            let fam = generate_family(seed, 9, 4, Mode::ConvexQp).unwrap();
            let r = fam.equality_residual(fam.witness().unwrap()).unwrap();
            prop_assert!(r.amax() <= 1e-14);
        }
    }
}
