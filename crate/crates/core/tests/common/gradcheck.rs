//! Central finite-difference checks of every layer's backward pass and every
//! loss gradient. Each suite returns its worst relative error.

use fedkd::losses::{
    cross_entropy, distillation_loss, kl_divergence, soften, DistillConfig, SoftTargetMatrix, T2Placement,
};
use fedkd::nn::{Architecture, Model};
use fedkd::LogitMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
pub const INSTANCES: usize = 24;
/// Kink margin: instances with a ReLU input or max-pool gap this close to a
/// non-differentiable point are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// Elementwise relative error, with magnitudes below 1e-6 treated as 1e-6.
fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

struct Instance {
    model: Model,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn instance(rng: &mut ChaCha8Rng, arch: &str, input_len: usize, classes: usize) -> Instance {
    let layers = arch.parse::<Architecture>().unwrap().resolve(input_len).unwrap();
    let mut model = Model::new(layers, input_len, classes).unwrap();
    model.init_glorot(rng);
    for p in model.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let batch = rng.random_range(1..4);
    let inputs = (0..batch)
        .map(|_| (0..input_len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    Instance { model, inputs, labels }
}

fn batch_loss(model: &Model, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    cross_entropy(&model.forward(&rows).unwrap(), labels).unwrap().0
}

/// Relative error of the parameter gradient of mean cross-entropy.
fn check_params(inst: &Instance) -> f64 {
    let rows: Vec<&[f64]> = inst.inputs.iter().map(Vec::as_slice).collect();
    let logits = inst.model.forward(&rows).unwrap();
    let (_, g) = cross_entropy(&logits, &inst.labels).unwrap();
    let analytic = inst.model.backward(&rows, &g).unwrap();
    let mut probe = inst.model.clone();
    let numeric = central_difference(inst.model.params(), |p| {
        probe.params_mut().copy_from_slice(p);
        batch_loss(&probe, &inst.inputs, &inst.labels)
    });
    max_rel_error(&analytic, &numeric)
}

fn near_kink_relu(inst: &Instance, pre_layer: usize) -> bool {
    inst.inputs.iter().any(|x| {
        inst.model
            .trace(x)
            .layer_output(pre_layer)
            .iter()
            .any(|v| v.abs() < KINK_MARGIN)
    })
}

fn near_kink_pool(inst: &Instance, pre_layer: usize, channels: usize, window: usize, stride: usize) -> bool {
    inst.inputs.iter().any(|x| {
        let trace = inst.model.trace(x);
        let act = trace.layer_output(pre_layer);
        let len = act.len() / channels;
        act.chunks(len).any(|ch| {
            (0..=(len - window) / stride).any(|t| {
                let mut w: Vec<f64> = ch[t * stride..t * stride + window].to_vec();
                w.sort_by(|a, b| b.total_cmp(a));
                // tied zeros after a ReLU stay zero under the probe step
                w.len() > 1 && w[0] - w[1] < KINK_MARGIN && !(w[0] == 0.0 && w[1] == 0.0)
            })
        })
    })
}

fn run_layer_suite(name: &str, seed: u64, mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<Instance>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < INSTANCES {
        let Some(inst) = draw(&mut rng) else { continue };
        let err = check_params(&inst);
        worst = worst.max(err);
        checked += 1;
    }
    println!("{name}: {checked} instances, max relative error {worst:.2e}");
    worst
}

pub fn dense_layer_gradients() -> f64 {
    run_layer_suite("dense", 1, |rng| {
        let (len, c) = (rng.random_range(2..9), rng.random_range(2..6));
        let arch = if rng.random_bool(0.5) {
            format!("dense:{c}")
        } else {
            format!("dense:{} dense:{c}", rng.random_range(2..7))
        };
        Some(instance(rng, &arch, len, c))
    })
}

pub fn conv1d_layer_gradients() -> f64 {
    run_layer_suite("conv1d", 2, |rng| {
        let (len, c) = (rng.random_range(10..20), rng.random_range(2..5));
        let (k1, s1) = (rng.random_range(1..5), rng.random_range(1..4));
        let (k2, s2) = (rng.random_range(1..3), rng.random_range(1..3));
        let arch = format!(
            "conv1d:{}:{k1}:{s1} conv1d:{}:{k2}:{s2} flatten dense:{c}",
            rng.random_range(1..4),
            rng.random_range(1..4)
        );
        Some(instance(rng, &arch, len, c))
    })
}

pub fn relu_layer_gradients() -> f64 {
    run_layer_suite("relu", 3, |rng| {
        let (len, c) = (rng.random_range(2..8), rng.random_range(2..5));
        let arch = format!("dense:{} relu dense:{c}", rng.random_range(2..8));
        let inst = instance(rng, &arch, len, c);
        (!near_kink_relu(&inst, 0)).then_some(inst)
    })
}

pub fn maxpool_layer_gradients() -> f64 {
    run_layer_suite("maxpool", 4, |rng| {
        let (len, c) = (rng.random_range(8..16), rng.random_range(2..5));
        let ch = rng.random_range(1..4);
        let (w, s) = (rng.random_range(2..4), rng.random_range(1..3));
        let arch = format!("conv1d:{ch}:3:1 maxpool:{w}:{s} flatten dense:{c}");
        let inst = instance(rng, &arch, len, c);
        (!near_kink_pool(&inst, 0, ch, w, s)).then_some(inst)
    })
}

pub fn flatten_layer_gradients() -> f64 {
    run_layer_suite("flatten", 5, |rng| {
        let (len, c) = (rng.random_range(5..12), rng.random_range(2..5));
        let arch = format!("conv1d:{}:2:1 flatten dense:{c}", rng.random_range(1..4));
        Some(instance(rng, &arch, len, c))
    })
}

pub fn full_student_architecture_gradients() -> f64 {
    run_layer_suite("student", 6, |rng| {
        let inst = instance(rng, "conv1d:4:7:2 relu maxpool:2:2 conv1d:6:5:2 relu flatten dense:5", 60, 5);
        let near = near_kink_relu(&inst, 0) || near_kink_relu(&inst, 3) || near_kink_pool(&inst, 1, 4, 2, 2);
        (!near).then_some(inst)
    })
}

fn random_logits(rng: &mut ChaCha8Rng) -> LogitMatrix {
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..7));
    let data = (0..n * c).map(|_| rng.random_range(-4.0..4.0)).collect();
    LogitMatrix::from_vec(n, c, data).unwrap()
}

fn logit_gradient_check(
    seed: u64,
    name: &str,
    mut loss: impl FnMut(&mut ChaCha8Rng, &LogitMatrix) -> Box<dyn Fn(&LogitMatrix) -> (f64, LogitMatrix)>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let z = random_logits(&mut rng);
        let f = loss(&mut rng, &z);
        let (_, g) = f(&z);
        let numeric = central_difference(z.as_slice(), |v| {
            f(&LogitMatrix::from_vec(z.rows(), z.cols(), v.to_vec()).unwrap()).0
        });
        let err = max_rel_error(g.as_slice(), &numeric);
        worst = worst.max(err);
    }
    println!("{name}: {INSTANCES} instances, max relative error {worst:.2e}");
    worst
}

fn random_targets(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> SoftTargetMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    soften(&LogitMatrix::from_vec(rows, cols, data).unwrap(), rng.random_range(0.5..4.0)).unwrap()
}

pub fn cross_entropy_gradient() -> f64 {
    logit_gradient_check(11, "cross_entropy", |rng, z| {
        let labels: Vec<usize> = (0..z.rows()).map(|_| rng.random_range(0..z.cols())).collect();
        Box::new(move |m| cross_entropy(m, &labels).unwrap())
    })
}

pub fn kl_divergence_gradient() -> f64 {
    logit_gradient_check(12, "kl_divergence", |rng, z| {
        let t = rng.random_range(0.5..5.0);
        let q = random_targets(rng, z.rows(), z.cols());
        Box::new(move |m| kl_divergence(m, &q, t).unwrap())
    })
}

pub fn distillation_loss_gradient() -> f64 {
    logit_gradient_check(13, "distillation_loss", |rng, z| {
        let t = rng.random_range(0.5..5.0);
        let q = random_targets(rng, z.rows(), z.cols());
        let labels: Vec<usize> = (0..z.rows()).map(|_| rng.random_range(0..z.cols())).collect();
        let cfg = DistillConfig {
            temperature: t,
            lambda: rng.random_range(0.0..=1.0),
            t2_placement: if rng.random_bool(0.5) { T2Placement::CrossEntropy } else { T2Placement::Kl },
        };
        Box::new(move |m| distillation_loss(m, &labels, &q, &cfg).unwrap())
    })
}

/// Every suite with its name, in a fixed order.
pub const SUITES: [(&str, fn() -> f64); 9] = [
    ("dense_layer", dense_layer_gradients),
    ("conv1d_layer", conv1d_layer_gradients),
    ("relu_layer", relu_layer_gradients),
    ("maxpool_layer", maxpool_layer_gradients),
    ("flatten_layer", flatten_layer_gradients),
    ("full_student_architecture", full_student_architecture_gradients),
    ("cross_entropy", cross_entropy_gradient),
    ("kl_divergence", kl_divergence_gradient),
    ("distillation_loss", distillation_loss_gradient),
];
