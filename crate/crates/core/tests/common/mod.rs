#![allow(dead_code)]

pub mod dense;
pub mod fixtures;
pub mod gradcases;

use motionseg::autodiff::{Mode, ParamKind, ParamStore, Tape, Tensor, Var};
use motionseg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Steps for whole-network checks, whose estimates are combined by median.
/// Thousands of leaky-ReLU inputs sit downstream of an early-layer weight;
/// at 1e-5 several of them cross their kink inside one stencil.
pub const FD_STEPS_NETWORK: [f64; 3] = [1e-6, 1e-7, 1e-8];
/// Elements checked per tensor: all of them up to this count, else a
/// random sample of this size.
pub const CHECKED_PER_TENSOR: usize = 24;
pub const CHECKED_PER_TENSOR_NETWORK: usize = 6;
/// Relative round-off assumed for one evaluation of the objective.
const ROUNDOFF: f64 = 1e-14;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform magnitudes in `[0.05, 1)` with random sign, away from ReLU kinks.
pub fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest norm-wise relative error over all checked tensors.
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst < FD_TOLERANCE && self.checked > 0
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, where each element's difference is first
/// reduced by the round-off bound of its estimate.
fn relative_error(analytic: &[f64], numeric: &[Estimate]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(
        &mut analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| ((a - n.value).abs() - n.noise).max(0.0)),
    );
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().map(|n| n.value)));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn pick(numel: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if numel <= count {
        (0..numel).collect()
    } else {
        (0..count).map(|_| rng.random_range(0..numel)).collect()
    }
}

/// Derivative of `f` at 0 from samples `f(±h)`, `f(±2h)`. The central
/// quotient is used unless its second difference is out of line with both
/// outer ones, which marks a kink (ReLU family) inside `[−h, h]`; then the
/// second-order one-sided quotient on the side with the smaller second
/// difference is used. The choice never looks at the analytic gradient.
pub fn difference_quotient(h: f64, f0: f64, mut f: impl FnMut(f64) -> f64) -> Estimate {
    let (p1, m1) = (f(h), f(-h));
    let central = (p1 - m1) / (2.0 * h);
    let (p2, m2) = (f(2.0 * h), f(-2.0 * h));
    let s_mid = (p1 - 2.0 * f0 + m1).abs();
    let s_up = (p2 - 2.0 * p1 + f0).abs();
    let s_down = (f0 - 2.0 * m1 + m2).abs();
    let r = ROUNDOFF * f0.abs().max(1.0);
    if s_mid <= 2.0 * s_up.min(s_down) + r {
        Estimate {
            value: central,
            noise: r / h,
        }
    } else if s_up <= s_down {
        Estimate {
            value: (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * h),
            noise: 4.0 * r / h,
        }
    } else {
        Estimate {
            value: (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * h),
            noise: 4.0 * r / h,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    /// Bound on the round-off error of `value`.
    pub noise: f64,
}

/// Central finite-difference check of `f` with respect to every input
/// tensor and every trainable parameter in `store`. The scalar objective is
/// `Σ f(x) ⊙ R` for a fixed random `R`; every evaluation replays the same
/// tape seed so stochastic ops draw identical masks.
pub fn grad_check<F>(store: &mut ParamStore<f64>, inputs: Vec<Tensor<f64>>, mode: Mode, seed: u64, f: F) -> GradReport
where
    F: Fn(&Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(store, inputs, mode, seed, &[FD_STEP], CHECKED_PER_TENSOR, f)
}

/// Median over `steps` of the per-step difference quotients.
fn estimate(steps: &[f64], f0: f64, mut f: impl FnMut(f64) -> f64) -> Estimate {
    let mut d: Vec<Estimate> = steps.iter().map(|&h| difference_quotient(h, f0, &mut f)).collect();
    d.sort_by(|a, b| a.value.total_cmp(&b.value));
    d[d.len() / 2]
}

pub fn grad_check_with<F>(
    store: &mut ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    mode: Mode,
    seed: u64,
    steps: &[f64],
    per_tensor: usize,
    f: F,
) -> GradReport
where
    F: Fn(&Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let projection = |shape: &[usize]| uniform(&mut rng(seed ^ 0xabcdef), shape, -1.0, 1.0);
    let objective = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new(mode, seed);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = tape.value(f(&tape, store, &vars).expect("forward"));
        let r = projection(out.shape());
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new(mode, seed);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, store, &vars).expect("forward");
    let r = tape.constant(projection(&tape.shape(out)));
    let prod = tape.mul(out, r).expect("projection");
    let loss = tape.sum(prod);
    store.zero_grad();
    let grads = tape.backward(loss, store).expect("backward");

    let mut pick_rng = rng(seed.wrapping_add(99));
    let mut report = GradReport {
        worst: 0.0,
        worst_at: String::new(),
        checked: 0,
    };
    let record = |report: &mut GradReport, name: String, a: &[f64], n: &[Estimate]| {
        let e = relative_error(a, n);
        report.checked += a.len();
        if e >= report.worst {
            report.worst = e;
            report.worst_at = name;
        }
    };

    let mut inputs = inputs;
    let f0 = objective(store, &inputs);
    for (k, v) in vars.iter().enumerate() {
        let numel = inputs[k].numel();
        let analytic_full = grads
            .get(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numel]);
        let idx = pick(numel, per_tensor, &mut pick_rng);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &i in &idx {
            let orig = inputs[k].data()[i];
            let d = estimate(steps, f0, |delta| {
                inputs[k].data_mut()[i] = orig + delta;
                let v = objective(store, &inputs);
                inputs[k].data_mut()[i] = orig;
                v
            });
            a.push(analytic_full[i]);
            n.push(d);
        }
        record(&mut report, format!("input {k}"), &a, &n);
    }

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable && p.kind != ParamKind::Buffer)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let analytic_full = store.get(id).grad.data().to_vec();
        let idx = pick(analytic_full.len(), per_tensor, &mut pick_rng);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &i in &idx {
            let orig = store.get(id).value.data()[i];
            let d = estimate(steps, f0, |delta| {
                store.get_mut(id).value.data_mut()[i] = orig + delta;
                let v = objective(store, &inputs);
                store.get_mut(id).value.data_mut()[i] = orig;
                v
            });
            a.push(analytic_full[i]);
            n.push(d);
        }
        let name = store.get(id).name.clone();
        record(&mut report, name, &a, &n);
    }
    report
}
