//! Deterministic discrete-time systems `x_{k+1} = f(x_k)`, `y_k = h(x_k)` with a
//! sampled initial state, trace simulation, and the built-in benchmark systems.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Label, Result};

/// A deterministic system observed through a finite output alphabet.
///
/// Implementations are immutable after construction and shared freely across
/// sampling workers.
pub trait DynamicalSystem: Send + Sync {
    fn dimension(&self) -> usize;

    fn alphabet_size(&self) -> usize;

    /// One forward step `next = f(x)`.
    fn step(&self, x: &[f64], next: &mut [f64]);

    fn has_inverse(&self) -> bool {
        false
    }

    /// One backward step `prev = f⁻¹(x)`.
    fn inverse_step(&self, _x: &[f64], _prev: &mut [f64]) -> Result<()> {
        Err(Error::PastUnavailable)
    }

    /// The output map `h`.
    fn output(&self, x: &[f64]) -> Label;

    /// Draws `x₀ ~ λ` deterministically from `seed`.
    fn sample_initial(&self, seed: u64, x: &mut [f64]);

    /// Support box of the initial measure, when it is a box.
    fn init_box(&self) -> Option<&[(f64, f64)]> {
        None
    }

    /// Whether the box `[lo, hi]` shares positive volume with the set of states
    /// with output `label`. `None` when the system cannot answer exactly.
    fn box_meets_label(&self, _lo: &[f64], _hi: &[f64], _label: Label) -> Option<bool> {
        None
    }

    fn name(&self) -> String;
}

/// Observed labels `y_{start_offset} … y_{start_offset + len - 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub labels: Vec<Label>,
    pub start_offset: i64,
}

impl Trace {
    /// Label at time `t` (0 is the time of `x₀`).
    pub fn at(&self, t: i64) -> Option<Label> {
        let i = t - self.start_offset;
        if i < 0 {
            return None;
        }
        self.labels.get(i as usize).copied()
    }

    pub fn first_time(&self) -> i64 {
        self.start_offset
    }

    pub fn last_time(&self) -> i64 {
        self.start_offset + self.labels.len() as i64 - 1
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and a path of
/// indices, e.g. `derive_seed(master, &[iteration, block, trajectory])`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Reusable buffers for trace simulation.
#[derive(Debug, Clone)]
pub(crate) struct Simulator {
    x0: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl Simulator {
    pub(crate) fn new(dim: usize) -> Self {
        Simulator {
            x0: vec![0.0; dim],
            cur: vec![0.0; dim],
            next: vec![0.0; dim],
        }
    }

    /// Fills `labels` with `y_{-past} … y_{future}` for the trajectory seeded by
    /// `seed`.
    pub(crate) fn fill(
        &mut self,
        system: &dyn DynamicalSystem,
        seed: u64,
        past: usize,
        future: usize,
        labels: &mut Vec<Label>,
    ) -> Result<()> {
        if past > 0 && !system.has_inverse() {
            return Err(Error::PastUnavailable);
        }
        labels.clear();
        labels.resize(past + future + 1, 0);
        system.sample_initial(seed, &mut self.x0);

        self.cur.copy_from_slice(&self.x0);
        labels[past] = system.output(&self.cur);
        for i in 1..=future {
            system.step(&self.cur, &mut self.next);
            std::mem::swap(&mut self.cur, &mut self.next);
            labels[past + i] = system.output(&self.cur);
        }

        self.cur.copy_from_slice(&self.x0);
        for i in 1..=past {
            system.inverse_step(&self.cur, &mut self.next)?;
            std::mem::swap(&mut self.cur, &mut self.next);
            labels[past - i] = system.output(&self.cur);
        }
        Ok(())
    }
}

/// Simulates one trajectory and returns the labels at times `-past ..= future`.
pub fn simulate_trace(
    system: &dyn DynamicalSystem,
    seed: u64,
    past: usize,
    future: usize,
) -> Result<Trace> {
    let mut sim = Simulator::new(system.dimension());
    let mut labels = Vec::new();
    sim.fill(system, seed, past, future, &mut labels)?;
    Ok(Trace {
        labels,
        start_offset: -(past as i64),
    })
}

/// Draws a uniform point from a box.
fn sample_box(bounds: &[(f64, f64)], seed: u64, x: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = lo + (hi - lo) * rng.random::<f64>();
    }
}

/// Circle rotation `x ↦ (x + θ) mod 1` on `[0, 1)` with labels 0 on `[0, ½)` and
/// 1 on `[½, 1)`, started from the uniform measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSystem {
    theta: f64,
}

const UNIT_BOX: [(f64, f64); 1] = [(0.0, 1.0)];

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

impl RotationSystem {
    pub fn theta(&self) -> f64 {
        self.theta
    }
}

pub fn make_rotation_system(theta: f64) -> Result<RotationSystem> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidSystem(format!(
            "rotation angle must lie in (0,1), got {theta}"
        )));
    }
    Ok(RotationSystem { theta })
}

impl DynamicalSystem for RotationSystem {
    fn dimension(&self) -> usize {
        1
    }

    fn alphabet_size(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], next: &mut [f64]) {
        next[0] = wrap_unit(x[0] + self.theta);
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn inverse_step(&self, x: &[f64], prev: &mut [f64]) -> Result<()> {
        prev[0] = wrap_unit(x[0] - self.theta);
        Ok(())
    }

    fn output(&self, x: &[f64]) -> Label {
        if x[0] < 0.5 {
            0
        } else {
            1
        }
    }

    fn sample_initial(&self, seed: u64, x: &mut [f64]) {
        sample_box(&UNIT_BOX, seed, x);
    }

    fn init_box(&self) -> Option<&[(f64, f64)]> {
        Some(&UNIT_BOX)
    }

    fn box_meets_label(&self, lo: &[f64], hi: &[f64], label: Label) -> Option<bool> {
        Some(match label {
            0 => lo[0] < 0.5,
            1 => hi[0] > 0.5,
            _ => false,
        })
    }

    fn name(&self) -> String {
        format!("rotation:{}", self.theta)
    }
}

/// Wraps a system so that every trajectory starts from the same state.
#[derive(Debug, Clone)]
pub struct PinnedStart<S> {
    pub inner: S,
    pub x0: Vec<f64>,
}

impl<S: DynamicalSystem> DynamicalSystem for PinnedStart<S> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn alphabet_size(&self) -> usize {
        self.inner.alphabet_size()
    }
    fn step(&self, x: &[f64], next: &mut [f64]) {
        self.inner.step(x, next)
    }
    fn has_inverse(&self) -> bool {
        self.inner.has_inverse()
    }
    fn inverse_step(&self, x: &[f64], prev: &mut [f64]) -> Result<()> {
        self.inner.inverse_step(x, prev)
    }
    fn output(&self, x: &[f64]) -> Label {
        self.inner.output(x)
    }
    fn sample_initial(&self, _seed: u64, x: &mut [f64]) {
        x.copy_from_slice(&self.x0);
    }
    fn name(&self) -> String {
        format!("{}@{:?}", self.inner.name(), self.x0)
    }
}

/// Closed interval with optional ends; `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub const ALL: Interval = Interval { lo: None, hi: None };

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    pub fn at_least(lo: f64) -> Self {
        Interval {
            lo: Some(lo),
            hi: None,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi)
    }

    /// Whether `[lo, hi]` shares a segment of positive length with the
    /// interval; touching at an end point does not count.
    pub fn meets(&self, lo: f64, hi: f64) -> bool {
        self.lo.is_none_or(|l| hi > l) && self.hi.is_none_or(|h| lo < h)
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo.is_none() && self.hi.is_none()
    }
}

/// `label` is emitted when every coordinate lies in its interval. Rules are
/// tried in order; the first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub label: Label,
    pub bounds: Vec<Interval>,
}

impl LabelRule {
    fn matches(&self, x: &[f64]) -> bool {
        self.bounds.iter().zip(x).all(|(b, &v)| b.contains(v))
    }

    fn is_catch_all(&self) -> bool {
        self.bounds.iter().all(Interval::is_unbounded)
    }
}

/// Affine map `x ↦ M x + c`, optionally obtained from a continuous-time system
/// `ẋ = A x + b` by an explicit Euler step (`M = I + hA`, `c = h b`).
#[derive(Debug, Clone)]
pub struct AffineSystem {
    dim: usize,
    alphabet_size: usize,
    /// Row-major `M`.
    forward: Vec<f64>,
    offset: Vec<f64>,
    /// Row-major `M⁻¹`, factored once at construction.
    inverse: Vec<f64>,
    rules: Vec<LabelRule>,
    init_box: Vec<(f64, f64)>,
    euler_step: Option<f64>,
    name: String,
}

impl AffineSystem {
    /// Builds the system from continuous-time data when `euler_step` is given,
    /// otherwise `a`/`b` are taken as the discrete map itself.
    pub fn new(
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        euler_step: Option<f64>,
        rules: Vec<LabelRule>,
        init_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::InvalidSystem("empty state vector".into()));
        }
        if a.len() != dim || a.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidSystem(format!("A must be {dim}x{dim}")));
        }
        if init_box.len() != dim {
            return Err(Error::InvalidSystem(format!(
                "init_box has {} intervals, expected {dim}",
                init_box.len()
            )));
        }
        if init_box.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidSystem(
                "init_box intervals must have lo < hi".into(),
            ));
        }
        if rules.is_empty() || !rules.last().is_some_and(LabelRule::is_catch_all) {
            return Err(Error::InvalidSystem(
                "label rules must end with a catch-all rule".into(),
            ));
        }
        if let Some(r) = rules.iter().find(|r| r.bounds.len() != dim) {
            return Err(Error::InvalidSystem(format!(
                "label rule for {} has {} bounds, expected {dim}",
                r.label,
                r.bounds.len()
            )));
        }
        let alphabet_size = rules
            .iter()
            .map(|r| r.label as usize + 1)
            .max()
            .unwrap_or(1);

        let mut m = DMatrix::from_fn(dim, dim, |i, j| a[i][j]);
        let mut offset = b;
        if let Some(h) = euler_step {
            if !(h > 0.0) {
                return Err(Error::InvalidSystem(format!(
                    "euler step must be positive, got {h}"
                )));
            }
            m *= h;
            m += DMatrix::identity(dim, dim);
            offset.iter_mut().for_each(|v| *v *= h);
        }
        let det = m.determinant();
        if det.abs() <= 1e-12 {
            return Err(Error::InvalidSystem(format!(
                "map is not invertible (det = {det:e})"
            )));
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSystem("map is not invertible".into()))?;

        let row_major = |mat: &DMatrix<f64>| {
            (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| mat[(i, j)])
                .collect::<Vec<_>>()
        };
        Ok(AffineSystem {
            dim,
            alphabet_size,
            forward: row_major(&m),
            offset,
            inverse: row_major(&inv),
            rules,
            init_box,
            euler_step,
            name: "affine".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Row-major discrete-time matrix `M`.
    pub fn matrix(&self) -> &[f64] {
        &self.forward
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn rules(&self) -> &[LabelRule] {
        &self.rules
    }

    pub fn euler_step(&self) -> Option<f64> {
        self.euler_step
    }
}

impl DynamicalSystem for AffineSystem {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    fn step(&self, x: &[f64], next: &mut [f64]) {
        for (i, out) in next.iter_mut().enumerate() {
            let row = &self.forward[i * self.dim..(i + 1) * self.dim];
            *out = self.offset[i] + row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
        }
    }

    fn has_inverse(&self) -> bool {
        true
    }

    fn inverse_step(&self, x: &[f64], prev: &mut [f64]) -> Result<()> {
        for (i, out) in prev.iter_mut().enumerate() {
            let row = &self.inverse[i * self.dim..(i + 1) * self.dim];
            *out = row
                .iter()
                .zip(x.iter().zip(&self.offset))
                .map(|(m, (v, c))| m * (v - c))
                .sum();
        }
        Ok(())
    }

    fn output(&self, x: &[f64]) -> Label {
        self.rules
            .iter()
            .find(|r| r.matches(x))
            .map(|r| r.label)
            .expect("label rules end with a catch-all")
    }

    fn sample_initial(&self, seed: u64, x: &mut [f64]) {
        sample_box(&self.init_box, seed, x);
    }

    fn init_box(&self) -> Option<&[(f64, f64)]> {
        Some(&self.init_box)
    }

    /// Exact for the first rule carrying `label`, which is the case for an
    /// obstacle listed first.
    fn box_meets_label(&self, lo: &[f64], hi: &[f64], label: Label) -> Option<bool> {
        let rule = self.rules.first().filter(|r| r.label == label)?;
        Some(
            rule.bounds
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(b, (&l, &h))| b.meets(l, h)),
        )
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Physical constants of the electron benchmark.
pub mod lorentz {
    pub const MASS: f64 = 9.1e-31;
    pub const CHARGE: f64 = 1.6e-19;
    pub const E1: f64 = -1.0e-10;
    pub const E2: f64 = 5.0e-11;
    pub const B3: f64 = 1.0e-11;
    pub const EULER_STEP: f64 = 0.1;

    /// Continuous-time `(A, b)` for the state `(p₁, p₂, v₁, v₂)`.
    pub fn continuous_system() -> (Vec<Vec<f64>>, Vec<f64>) {
        let w = CHARGE * B3 / MASS;
        let a = vec![
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, w],
            vec![0.0, 0.0, -w, 0.0],
        ];
        let b = vec![0.0, 0.0, CHARGE * E1 / MASS, CHARGE * E2 / MASS];
        (a, b)
    }
}

/// Electron in a planar Lorentz field, Euler-discretized with step 0.1.
///
/// Output 0 inside the obstacle `[0.5,1.5] × [-0.5,0.5] × ℝ × ℝ`, otherwise 1 if
/// `p₁ ≥ 1.5`, otherwise 2. Initial states are uniform on
/// `[-1,4] × [-1,1] × [-1,1] × [-1,1]`.
pub fn make_lorentz_system() -> AffineSystem {
    let (a, b) = lorentz::continuous_system();
    let rules = vec![
        LabelRule {
            label: 0,
            bounds: vec![
                Interval::closed(0.5, 1.5),
                Interval::closed(-0.5, 0.5),
                Interval::ALL,
                Interval::ALL,
            ],
        },
        LabelRule {
            label: 1,
            bounds: vec![
                Interval::at_least(1.5),
                Interval::ALL,
                Interval::ALL,
                Interval::ALL,
            ],
        },
        LabelRule {
            label: 2,
            bounds: vec![Interval::ALL; 4],
        },
    ];
    let init_box = vec![(-1.0, 4.0), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)];
    AffineSystem::new(a, b, Some(lorentz::EULER_STEP), rules, init_box)
        .expect("lorentz system is well formed")
        .with_name("lorentz")
}
