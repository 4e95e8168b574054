//! Finite-difference gradient checking shared by the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sast::numerics::{Tape, Tensor, Var};
use sast::params::{Ctx, ParamStore};
use sast::Result;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, Default)]
pub struct GradStats {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradStats {
    fn record(&mut self, at: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.worst || self.worst_at.is_empty() {
            self.worst = e;
            self.worst_at = at();
        }
    }

    pub fn merge(&mut self, other: GradStats) {
        self.checked += other.checked;
        if other.worst > self.worst || self.worst_at.is_empty() {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.worst < REL_TOL
    }
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed, uneven weights so every
/// output element contributes a distinct amount.
pub fn probe(tape: &mut Tape, y: Var) -> Result<Var> {
    let n = tape.value(y).numel();
    if n == 1 {
        return Ok(y);
    }
    let w = (0..n).map(|i| ((i as f64 + 1.0) * 0.7).sin()).collect();
    tape.weighted_sum(y, w)
}

/// Checks the gradient with respect to every element of every input.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> GradStats {
    let run = |tape: &mut Tape, vars: &[Var]| {
        let y = f(tape, vars).unwrap();
        probe(tape, y).unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = run(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut tp = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| tp.constant(x.clone())).collect();
        let l = run(&mut tp, &vs);
        tp.value(l).data()[0]
    };
    let mut stats = GradStats::default();
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&xs);
            xs[i].data_mut()[j] = orig;
            stats.record(|| format!("input {i}[{j}]"), analytic[j], (plus - minus) / (2.0 * FD_STEP));
        }
    }
    stats
}

/// Checks the gradient with respect to every parameter entry in `store`
/// that `f` reads. `f` runs in evaluation mode.
pub fn check_store(store: &ParamStore, f: impl Fn(&mut Ctx) -> Result<Var>) -> GradStats {
    let run = |ctx: &mut Ctx| {
        let y = f(ctx).unwrap();
        probe(&mut ctx.tape, y).unwrap()
    };
    let grads = {
        let mut ctx = Ctx::eval(store);
        let loss = run(&mut ctx);
        ctx.backward(loss).unwrap();
        ctx.param_grads()
    };
    let eval = |s: &ParamStore| {
        let mut ctx = Ctx::eval(s);
        let l = run(&mut ctx);
        ctx.value(l).data()[0]
    };
    let mut stats = GradStats::default();
    let mut work = store.clone();
    for (name, analytic) in &grads {
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work.get(name).unwrap().data()[j];
            work.get_mut(name).unwrap().data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[j] = orig;
            stats.record(|| format!("{name}[{j}]"), a, (plus - minus) / (2.0 * FD_STEP));
        }
    }
    stats
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
