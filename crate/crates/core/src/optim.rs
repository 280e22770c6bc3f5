//! Alternating per-color optimization with inversion resets, plus the
//! global backtracking line search and direct-offset baselines.

use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coloring::{grid_parity_coloring, VertexColoring};
use crate::complex::{apply_boundary, build_grid, BoundaryConstraint, SimplicialComplex, VertexConstraint};
use crate::diffrep::{convex_sum, fit_weights_to_positions, pullback_vertex, DifferentialWeights, WeightMode};
use crate::energy::{
    barrier_energy, barrier_penalty_and_gradient, BarrierSpec, EnergyKind, Objective, ReferenceGeometry, ToyObjective,
};
use crate::error::{invalid, Error, Result};
use crate::scalar::{Real, EPS_MEASURE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamHyper<T> {
    pub fn new(lr: T) -> Self {
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }
}

/// Adam moments kept separately for every color.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    hyper: AdamHyper<T>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: Vec<u64>,
}

impl<T: Real> AdamState<T> {
    pub fn new(hyper: AdamHyper<T>, colors: usize, len: usize) -> Self {
        Self {
            hyper,
            m: vec![vec![T::zero(); len]; colors],
            v: vec![vec![T::zero(); len]; colors],
            steps: vec![0; colors],
        }
    }

    pub fn hyper(&self) -> &AdamHyper<T> {
        &self.hyper
    }

    pub fn steps(&self, color: usize) -> u64 {
        self.steps[color]
    }

    pub fn moments(&self, color: usize) -> (&[T], &[T]) {
        (&self.m[color], &self.v[color])
    }

    /// Advances the moments of `color` on `ranges` and returns the step to
    /// subtract, zero outside `ranges`.
    pub fn step_vector(&mut self, color: usize, grad: &[T], ranges: &[Range<usize>]) -> Vec<T> {
        let h = self.hyper;
        self.steps[color] += 1;
        let t = self.steps[color] as i32;
        let c1 = T::one() - h.beta1.powi(t);
        let c2 = T::one() - h.beta2.powi(t);
        let (m, v) = (&mut self.m[color], &mut self.v[color]);
        let mut out = vec![T::zero(); grad.len()];
        for r in ranges {
            for i in r.clone() {
                let g = grad[i];
                m[i] = h.beta1 * m[i] + (T::one() - h.beta1) * g;
                v[i] = h.beta2 * v[i] + (T::one() - h.beta2) * g * g;
                out[i] = h.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + h.eps);
            }
        }
        out
    }

    /// One Adam update of `params` on `ranges`.
    pub fn step(&mut self, color: usize, params: &mut [T], grad: &[T], ranges: &[Range<usize>]) {
        let d = self.step_vector(color, grad, ranges);
        for r in ranges {
            for i in r.clone() {
                params[i] = params[i] - d[i];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    /// Raw weights of the differential representation.
    ConvexSum,
    /// Per-vertex offsets from the initial positions.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule<T> {
    /// One color per iteration, round-robin.
    Alternating,
    /// Every vertex per iteration; failed steps shrink by `backtrack_factor`.
    LineSearch { backtrack_factor: T, max_retries: usize },
}

impl<T: Real> Schedule<T> {
    pub fn line_search() -> Self {
        Schedule::LineSearch { backtrack_factor: T::lit(0.9), max_retries: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig<T> {
    /// Alternating: color steps. Line search: global steps.
    pub iterations: usize,
    pub adam: AdamHyper<T>,
    pub schedule: Schedule<T>,
    pub parameterization: Parameterization,
    pub weight_mode: WeightMode,
    /// Only used by the line search; the alternating schedule always uses Adam.
    pub step_rule: StepRule,
    pub barrier: BarrierSpec<T>,
    /// Inversion resets and the barrier. Disabling both gives the unchecked
    /// baseline.
    pub checks: bool,
    pub seed: u64,
    /// Amplitude of uniform noise on the initial raw weights.
    pub init_noise: f64,
    /// Scan every simplex after every step and fail on any inversion.
    pub verify_each_step: bool,
}

impl<T: Real> OptConfig<T> {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            adam: AdamHyper::new(T::lit(1e-3)),
            schedule: Schedule::Alternating,
            parameterization: Parameterization::ConvexSum,
            weight_mode: WeightMode::PerVertex,
            step_rule: StepRule::Adam,
            barrier: BarrierSpec::default(),
            checks: true,
            seed: 0,
            init_noise: 0.0,
            verify_each_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.adam.lr > T::zero()) || !self.adam.lr.is_finite() {
            return Err(invalid("learning rate must be positive"));
        }
        if let Schedule::LineSearch { backtrack_factor, .. } = self.schedule {
            if !(backtrack_factor > T::zero() && backtrack_factor < T::one()) {
                return Err(invalid("backtrack factor must lie in (0, 1)"));
            }
        }
        if !(self.init_noise >= 0.0) {
            return Err(invalid("initial weight noise must be non-negative"));
        }
        self.barrier.validate()
    }

    fn effective_barrier(&self) -> BarrierSpec<T> {
        if self.checks {
            self.barrier
        } else {
            BarrierSpec::disabled()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<T> {
    pub iteration: usize,
    /// Active color; 0 for line-search steps.
    pub color: usize,
    /// Objective at the point the gradient was taken.
    pub energy: T,
    pub barrier: T,
    /// Inverted simplices in the accepted state.
    pub inverted: usize,
    pub resets: usize,
    pub retries: usize,
    pub skipped: bool,
    /// Seconds since the start of the run.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct OptResult<T> {
    pub positions: Vec<T>,
    /// Final weights for the convex-sum parameterization.
    pub weights: Option<DifferentialWeights<T>>,
    pub reports: Vec<StepReport<T>>,
    /// Objective at the final positions, without the barrier.
    pub final_energy: T,
    pub final_barrier: T,
    pub injective: bool,
    pub total_resets: usize,
    pub skipped_steps: usize,
    pub seconds: f64,
}

/// Simplices with measure at or below the strictness threshold, ascending.
pub fn detect_inversions<T: Real>(complex: &SimplicialComplex<T>, positions: &[T]) -> Vec<usize> {
    let eps = T::lit(EPS_MEASURE);
    (0..complex.simplex_count())
        .filter(|&s| !(complex.measure(s, positions) > eps))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ResetOutcome {
    /// Vertices restored to their previous position.
    pub restored: usize,
    pub rounds: usize,
}

/// Restores the vertices of inverted simplices to `previous` until no
/// simplex is inverted. Stops early if an inverted simplex has nothing left
/// to restore.
pub fn reset_inverted<T: Real>(complex: &SimplicialComplex<T>, positions: &mut [T], previous: &[T]) -> ResetOutcome {
    let all: Vec<usize> = (0..complex.simplex_count()).collect();
    reset_local(complex, positions, previous, &all)
}

/// [`reset_inverted`] over the simplices in `candidates` only.
fn reset_local<T: Real>(
    complex: &SimplicialComplex<T>,
    positions: &mut [T],
    previous: &[T],
    candidates: &[usize],
) -> ResetOutcome {
    let eps = T::lit(EPS_MEASURE);
    let dim = complex.dim();
    let mut out = ResetOutcome::default();
    loop {
        let bad: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&s| !(complex.measure(s, positions) > eps))
            .collect();
        if bad.is_empty() {
            break;
        }
        out.rounds += 1;
        let before = out.restored;
        for s in bad {
            for &v in complex.simplex(s) {
                let r = v * dim..(v + 1) * dim;
                if positions[r.clone()] != previous[r.clone()] {
                    positions[r.clone()].copy_from_slice(&previous[r]);
                    out.restored += 1;
                }
            }
        }
        if out.restored == before {
            break;
        }
    }
    out
}

fn simplices_of(complex: &SimplicialComplex<impl Real>, vertices: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = vertices.iter().flat_map(|&v| complex.incident_simplices(v).iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Parameters that produce vertex positions.
enum Params<T> {
    Weights(DifferentialWeights<T>),
    Offsets { base: Vec<T>, delta: Vec<T> },
}

impl<T: Real> Params<T> {
    fn raw(&self) -> &[T] {
        match self {
            Params::Weights(w) => w.raw(),
            Params::Offsets { delta, .. } => delta,
        }
    }

    fn raw_mut(&mut self) -> &mut [T] {
        match self {
            Params::Weights(w) => w.raw_mut(),
            Params::Offsets { delta, .. } => delta,
        }
    }

    fn range(&self, v: usize, dim: usize) -> Range<usize> {
        match self {
            Params::Weights(w) => w.vertex_range(v),
            Params::Offsets { .. } => v * dim..(v + 1) * dim,
        }
    }

    /// Unconstrained position of `v` given current positions `x`.
    fn propose(&self, complex: &SimplicialComplex<T>, v: usize, x: &[T], out: &mut [T]) -> Result<()> {
        match self {
            Params::Weights(w) => convex_sum(complex, w, v, x, out),
            Params::Offsets { base, delta } => {
                let d = complex.dim();
                for (a, o) in out.iter_mut().enumerate() {
                    *o = base[v * d + a] + delta[v * d + a];
                }
                Ok(())
            }
        }
    }

    fn pullback(&self, complex: &SimplicialComplex<T>, v: usize, x: &[T], g: &[T], raw_grad: &mut [T]) -> Result<()> {
        match self {
            Params::Weights(w) => pullback_vertex(complex, w, v, x, g, raw_grad),
            Params::Offsets { .. } => {
                let d = complex.dim();
                for (a, &ga) in g.iter().enumerate() {
                    raw_grad[v * d + a] = raw_grad[v * d + a] + ga;
                }
                Ok(())
            }
        }
    }

    fn into_weights(self) -> Option<DifferentialWeights<T>> {
        match self {
            Params::Weights(w) => Some(w),
            Params::Offsets { .. } => None,
        }
    }
}

struct Proposal<T> {
    positions: Vec<T>,
    /// Unconstrained positions of the active vertices, stride dim.
    pre: Vec<T>,
}

fn propose<T: Real>(
    params: &Params<T>,
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    active: &[usize],
    x: &[T],
) -> Result<Proposal<T>> {
    let dim = complex.dim();
    let mut positions = x.to_vec();
    let mut pre = vec![T::zero(); active.len() * dim];
    for (i, &v) in active.iter().enumerate() {
        let p = &mut pre[i * dim..(i + 1) * dim];
        params.propose(complex, v, x, p)?;
        let q = &mut positions[v * dim..(v + 1) * dim];
        q.copy_from_slice(p);
        constraints.apply_vertex(v, q)?;
    }
    Ok(Proposal { positions, pre })
}

/// Objective plus barrier at `positions`, with the position gradient.
/// Inverted simplices contribute their linear barrier term only.
fn position_gradient<T: Real>(
    objective: &mut dyn Objective<T>,
    barrier: &BarrierSpec<T>,
    complex: &SimplicialComplex<T>,
    positions: &[T],
) -> Option<(T, T, Vec<T>)> {
    let mut grad = vec![T::zero(); positions.len()];
    let loss = objective.value_and_gradient(positions, &mut grad);
    let bar = barrier_penalty_and_gradient(complex, positions, barrier, &mut grad);
    ((loss + bar).is_finite() && grad.iter().all(|g| g.is_finite())).then_some((loss, bar, grad))
}

fn check_initial<T: Real>(
    complex: &SimplicialComplex<T>,
    objective: &dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<()> {
    config.validate()?;
    let x = complex.positions();
    if config.checks && !complex.is_injective(x) {
        return Err(invalid("initial configuration is not injective"));
    }
    let e = objective.value(x) + barrier_energy(complex, x, &config.effective_barrier());
    if !e.is_finite() {
        return Err(invalid("initial energy is not finite"));
    }
    Ok(())
}

fn finish<T: Real>(
    complex: &SimplicialComplex<T>,
    objective: &dyn Objective<T>,
    config: &OptConfig<T>,
    x: Vec<T>,
    params: Params<T>,
    reports: Vec<StepReport<T>>,
    start: Instant,
) -> OptResult<T> {
    let total_resets = reports.iter().map(|r| r.resets).sum();
    let skipped_steps = reports.iter().filter(|r| r.skipped).count();
    OptResult {
        final_energy: objective.value(&x),
        final_barrier: barrier_energy(complex, &x, &config.effective_barrier()),
        injective: complex.is_injective(&x),
        positions: x,
        weights: params.into_weights(),
        reports,
        total_resets,
        skipped_steps,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Starting raw weights: uniform, refit for every vertex whose uniform
/// convex sum misses its starting position, then jittered by `init_noise`.
pub fn initial_weights<T: Real>(
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    config: &OptConfig<T>,
) -> Result<DifferentialWeights<T>> {
    let dim = complex.dim();
    let mut weights = DifferentialWeights::new(complex, config.weight_mode);
    let mut sum = vec![T::zero(); dim];
    for v in 0..complex.vertex_count() {
        if constraints.fully_pinned(v, dim) || complex.neighbors(v).is_empty() {
            continue;
        }
        convex_sum(complex, &weights, v, complex.positions(), &mut sum)?;
        let mut landed = sum.clone();
        constraints.apply_vertex(v, &mut landed)?;
        let x = complex.point(v);
        if landed.iter().zip(x).all(|(&a, &b)| (a - b).abs() <= T::lit(1e-12)) {
            continue;
        }
        let targets: Vec<Vec<T>> = match constraints.kind(v) {
            // Any point on the ray through `x` projects back onto it. Radii
            // near 1 keep the projection from amplifying tangential drift.
            VertexConstraint::OnUnitCircle => {
                [0.99999, 0.9999, 0.999, 0.99, 0.95, 0.9, 0.8, 0.6, 0.4, 0.2]
                    .iter()
                    .map(|&s| x.iter().map(|&c| c * T::lit(s)).collect())
                    .collect()
            }
            VertexConstraint::Pinned(axes) => {
                let mut t = x.to_vec();
                for &(a, _) in axes {
                    t[a] = sum[a];
                }
                vec![t, x.to_vec()]
            }
            VertexConstraint::Free => vec![x.to_vec()],
        };
        if let Some(raw) = targets.iter().find_map(|t| fit_weights_to_positions(complex, &weights, v, t).ok()) {
            weights.set_vertex_raw(v, &raw)?;
        }
    }
    if config.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for r in weights.raw_mut() {
            *r = *r + T::lit(rng.gen_range(-config.init_noise..=config.init_noise));
        }
    }
    Ok(weights)
}

/// Runs the schedule and parameterization selected in `config`, starting
/// from the positions stored in `complex`.
pub fn optimize<T: Real>(
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    coloring: &VertexColoring,
    objective: &mut dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<OptResult<T>> {
    match (config.schedule, config.parameterization) {
        (Schedule::LineSearch { .. }, _) => line_search_optimize(complex, constraints, objective, config),
        (_, Parameterization::ConvexSum) => {
            let weights = initial_weights(complex, constraints, config)?;
            alternating_optimize(complex, weights, coloring, constraints, objective, config)
        }
        (_, Parameterization::Direct) => direct_deform_optimize(complex, coloring, constraints, objective, config),
    }
}

/// Alternating optimization of convex-sum weights.
pub fn alternating_optimize<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: DifferentialWeights<T>,
    coloring: &VertexColoring,
    constraints: &BoundaryConstraint<T>,
    objective: &mut dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<OptResult<T>> {
    if weights.vertex_count() != complex.vertex_count() {
        return Err(invalid("weights do not match the complex"));
    }
    run_alternating(complex, Params::Weights(weights), coloring, constraints, objective, config)
}

/// Alternating optimization of per-vertex offsets `x0 + delta`.
pub fn direct_deform_optimize<T: Real>(
    complex: &SimplicialComplex<T>,
    coloring: &VertexColoring,
    constraints: &BoundaryConstraint<T>,
    objective: &mut dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<OptResult<T>> {
    let base = complex.positions().to_vec();
    let delta = vec![T::zero(); base.len()];
    run_alternating(complex, Params::Offsets { base, delta }, coloring, constraints, objective, config)
}

fn run_alternating<T: Real>(
    complex: &SimplicialComplex<T>,
    mut params: Params<T>,
    coloring: &VertexColoring,
    constraints: &BoundaryConstraint<T>,
    objective: &mut dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<OptResult<T>> {
    check_initial(complex, objective, config)?;
    if coloring.colors().len() != complex.vertex_count() || !coloring.verify_independent(complex.adjacency()) {
        return Err(invalid("coloring is not a valid independent-set partition"));
    }
    if constraints.len() != complex.vertex_count() {
        return Err(invalid("constraints do not match the complex"));
    }
    let start = Instant::now();
    let dim = complex.dim();
    let k = coloring.color_count();
    let barrier = config.effective_barrier();
    let local: Vec<Vec<usize>> = (0..k).map(|c| simplices_of(complex, coloring.members(c))).collect();
    let ranges: Vec<Vec<Range<usize>>> = (0..k)
        .map(|c| coloring.members(c).iter().map(|&v| params.range(v, dim)).collect())
        .collect();
    let mut adam = AdamState::new(config.adam, k, params.raw().len());
    let mut x = complex.positions().to_vec();
    let mut reports = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let c = it % k;
        let active = coloring.members(c);
        objective.begin_iteration(it, config.iterations);

        let prop = propose(&params, complex, constraints, active, &x)?;
        let Some((energy, bar, mut grad)) = position_gradient(objective, &barrier, complex, &prop.positions) else {
            reports.push(StepReport {
                iteration: it,
                color: c,
                energy: T::nan(),
                barrier: T::nan(),
                inverted: if config.checks { 0 } else { detect_inversions(complex, &x).len() },
                resets: 0,
                retries: 0,
                skipped: true,
                seconds: start.elapsed().as_secs_f64(),
            });
            objective.end_iteration(&x);
            continue;
        };

        let mut raw_grad = vec![T::zero(); params.raw().len()];
        for (i, &v) in active.iter().enumerate() {
            let g = &mut grad[v * dim..(v + 1) * dim];
            constraints.pullback_vertex(v, &prop.pre[i * dim..(i + 1) * dim], g);
            params.pullback(complex, v, &x, g, &mut raw_grad)?;
        }
        adam.step(c, params.raw_mut(), &raw_grad, &ranges[c]);

        let mut next = propose(&params, complex, constraints, active, &x)?.positions;
        let resets = if config.checks {
            reset_local(complex, &mut next, &x, &local[c]).restored
        } else {
            0
        };
        x = next;
        objective.end_iteration(&x);

        let inverted = if config.checks && !config.verify_each_step {
            0
        } else {
            detect_inversions(complex, &x).len()
        };
        if config.checks && inverted > 0 {
            return Err(Error::InternalInvariant(format!("{inverted} inverted simplices after step {it}")));
        }
        reports.push(StepReport {
            iteration: it,
            color: c,
            energy,
            barrier: bar,
            inverted,
            resets,
            retries: 0,
            skipped: false,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(finish(complex, objective, config, x, params, reports, start))
}

/// Global steps over every vertex with backtracking until the stepped state
/// is injective with finite energy.
///
/// With convex-sum parameters a step of scale `s` moves each vertex by `s`
/// times its drift toward the convex sum at the current weights, plus the
/// change of that sum caused by the scaled weight step. At `s = 1` this is
/// the plain concurrent update.
pub fn line_search_optimize<T: Real>(
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    objective: &mut dyn Objective<T>,
    config: &OptConfig<T>,
) -> Result<OptResult<T>> {
    let Schedule::LineSearch { backtrack_factor, max_retries } = config.schedule else {
        return Err(invalid("line search requires the line-search schedule"));
    };
    let config = &OptConfig { checks: true, ..config.clone() };
    check_initial(complex, objective, config)?;
    if constraints.len() != complex.vertex_count() {
        return Err(invalid("constraints do not match the complex"));
    }
    let start = Instant::now();
    let dim = complex.dim();
    let n = complex.vertex_count();
    let all: Vec<usize> = (0..n).collect();
    let mut params = match config.parameterization {
        Parameterization::ConvexSum => Params::Weights(initial_weights(complex, constraints, config)?),
        Parameterization::Direct => Params::Offsets {
            base: complex.positions().to_vec(),
            delta: vec![T::zero(); n * dim],
        },
    };
    let ranges = vec![0..params.raw().len()];
    let mut adam = AdamState::new(config.adam, 1, params.raw().len());
    let mut x = complex.positions().to_vec();
    let mut reports = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        objective.begin_iteration(it, config.iterations);
        let Some((energy, bar, mut grad)) = position_gradient(objective, &config.barrier, complex, &x) else {
            return Err(Error::Numeric(format!("non-finite energy at accepted state, step {it}")));
        };
        let mut raw_grad = vec![T::zero(); params.raw().len()];
        let mut pre = vec![T::zero(); dim];
        for v in 0..n {
            params.propose(complex, v, &x, &mut pre)?;
            let g = &mut grad[v * dim..(v + 1) * dim];
            constraints.pullback_vertex(v, &pre, g);
            params.pullback(complex, v, &x, g, &mut raw_grad)?;
        }
        let direction = match config.step_rule {
            StepRule::Adam => adam.step_vector(0, &raw_grad, &ranges),
            StepRule::Sgd => raw_grad.iter().map(|&g| config.adam.lr * g).collect(),
        };

        let original = params.raw().to_vec();
        // Convex sums at the unchanged weights. The drift toward them is
        // scaled with the weight step so a vanishing step stays in place.
        let base_sums = match params {
            Params::Weights(_) => Some(propose(&params, complex, constraints, &all, &x)?.positions),
            Params::Offsets { .. } => None,
        };
        let mut scale = T::one();
        let mut accepted = None;
        let mut retries = 0;
        while retries <= max_retries {
            for (p, (&o, &d)) in params.raw_mut().iter_mut().zip(original.iter().zip(&direction)) {
                *p = o - scale * d;
            }
            let mut cand = propose(&params, complex, constraints, &all, &x)?.positions;
            if let Some(base) = &base_sums {
                for ((c, &old), &b) in cand.iter_mut().zip(&x).zip(base) {
                    *c = old + scale * (b - old) + (*c - b);
                }
                apply_boundary(&mut cand, dim, constraints)?;
            }
            let ok = complex.is_injective(&cand)
                && (objective.value(&cand) + barrier_energy(complex, &cand, &config.barrier)).is_finite();
            if ok {
                accepted = Some(cand);
                break;
            }
            retries += 1;
            scale = scale * backtrack_factor;
        }
        let skipped = accepted.is_none();
        match accepted {
            Some(cand) => x = cand,
            None => params.raw_mut().copy_from_slice(&original),
        }
        objective.end_iteration(&x);
        reports.push(StepReport {
            iteration: it,
            color: 0,
            energy,
            barrier: bar,
            inverted: 0,
            resets: 0,
            retries: retries.min(max_retries),
            skipped,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(finish(complex, objective, config, x, params, reports, start))
}

/// A square toy grid deformed under `kind`, which must be a toy loss.
pub fn optimize_toy<T: Real>(
    kind: EnergyKind<T>,
    resolution: usize,
    config: &OptConfig<T>,
) -> Result<(SimplicialComplex<T>, OptResult<T>)> {
    if !kind.is_toy() {
        return Err(invalid(format!("{} is not a toy loss", kind.name())));
    }
    let (complex, topo, constraints) = build_grid::<T>(&[resolution, resolution])?;
    let coloring = grid_parity_coloring(&topo);
    let reference = ReferenceGeometry::for_toy(complex.positions(), 2, &constraints);
    let mut objective = ToyObjective::new(kind, 2, reference)?;
    let run = optimize(&complex, &constraints, &coloring, &mut objective, config)?;
    Ok((complex, run))
}
